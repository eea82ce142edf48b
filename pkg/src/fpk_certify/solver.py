"""Finite-volume solver for  d_t rho = div(A grad rho - B rho) + c rho  on a box.

Transport uses an exponentially fitted two-point flux (or plain upwinding)
advanced by explicit Euler; the reaction c rho is applied as an exact
per-cell exponential in a Strang splitting around the transport step.
The transport matrix is a Metzler matrix with zero column sums under no-flux
walls, so mass is conserved to round-off and positivity holds whenever
dt * (largest outgoing rate) <= 1.
"""

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.special import ndtr

from .coefficients import CoefficientField, divergence_correction
from .errors import CFLError, EvaluationError, ParameterError, PositivityError, SupportError, TruncationError

NEG_TOL = 1e-13  # tolerated negative round-off relative to the peak density
TRUNCATION_WARN = 1e-6
TRUNCATION_FAIL = 1e-3


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid on the box prod_i [-R_i, R_i]."""

    extents: tuple
    cells: tuple

    def __post_init__(self):
        ext = tuple(float(v) for v in np.atleast_1d(self.extents))
        cells = tuple(int(v) for v in np.atleast_1d(self.cells))
        if len(ext) == 1 and len(cells) > 1:
            ext = ext * len(cells)
        if len(cells) == 1 and len(ext) > 1:
            cells = cells * len(ext)
        if len(ext) != len(cells) or len(ext) not in (1, 2):
            raise ParameterError("grid dimension must be 1 or 2 with matching extents and cell counts")
        if min(cells) < 8:
            raise ParameterError("each axis needs at least 8 cells")
        if not min(ext) > 0:
            raise ParameterError("grid extents must be positive")
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def uniform(cls, dim, radius, n):
        return cls((radius,) * dim, (n,) * dim)

    @property
    def dim(self):
        return len(self.cells)

    @property
    def shape(self):
        return self.cells

    @property
    def widths(self):
        return tuple(2.0 * R / N for R, N in zip(self.extents, self.cells))

    @property
    def cell_volume(self):
        return float(np.prod(self.widths))

    def axis_centers(self, axis):
        R, N, h = self.extents[axis], self.cells[axis], self.widths[axis]
        return -R + h * (np.arange(N) + 0.5)

    def centers(self):
        """Cell centres, shape (prod N, d), row-major."""
        axes = [self.axis_centers(i) for i in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def refined(self, factor=2):
        return Grid(self.extents, tuple(n * factor for n in self.cells))


@dataclass(frozen=True)
class LedgerEntry:
    t: float
    mass: float
    c_integral: float
    leakage: float = 0.0  # cumulative mass lost through absorbing walls


class DensityField:
    """Non-negative cell densities at one time, plus the mass ledger leading to it.

    ``values`` is stored read-only; every solver operation returns a new object.
    """

    __slots__ = ("grid", "values", "time", "ledger", "metadata")

    def __init__(self, grid, values, time=0.0, ledger=(), metadata=None):
        vals = np.array(values, dtype=float).reshape(grid.shape)
        vals.setflags(write=False)
        self.grid = grid
        self.values = vals
        self.time = float(time)
        self.ledger = tuple(ledger)
        self.metadata = dict(metadata or {})

    def mass(self):
        return float(self.values.sum() * self.grid.cell_volume)

    def peak(self):
        return float(self.values.max()) if self.values.size else 0.0

    def with_values(self, values, time, ledger=None):
        return DensityField(self.grid, values, time, self.ledger if ledger is None else ledger, self.metadata)

    def __repr__(self):
        return f"DensityField(t={self.time}, grid={self.grid.cells}, mass={self.mass():.6g})"


@dataclass(frozen=True)
class SolverConfig:
    dt: Optional[float] = None  # None: largest positivity-safe step times ``cfl``
    cfl: float = 0.9
    scheme: str = "fitted"  # "fitted" (exponentially fitted) or "upwind"
    boundary: str = "no-flux"  # or "absorbing"
    reaction: str = "exact"  # "exact" exponential or "explicit" Euler
    end_time: float = 1.0
    snapshot_times: tuple = ()
    snapshot_every_step: bool = False

    def __post_init__(self):
        if not 0 < self.cfl <= 1:
            raise ParameterError("CFL number must lie in (0, 1]")
        if self.dt is not None and not self.dt > 0:
            raise ParameterError("time step must be positive")
        if self.scheme not in ("fitted", "upwind"):
            raise ParameterError(f"unknown flux scheme {self.scheme!r}")
        if self.boundary not in ("no-flux", "absorbing"):
            raise ParameterError(f"unknown boundary condition {self.boundary!r}")
        if self.reaction not in ("exact", "explicit"):
            raise ParameterError(f"unknown reaction treatment {self.reaction!r}")
        if self.end_time < 0:
            raise ParameterError("end time must be nonnegative")
        times = tuple(float(s) for s in self.snapshot_times)
        if any(b < a for a, b in zip(times, times[1:])):
            raise ParameterError("snapshot times must be non-decreasing")
        object.__setattr__(self, "snapshot_times", times)


@dataclass(frozen=True)
class Snapshot:
    t: float
    values: np.ndarray
    grid: Grid

    def mass(self):
        return float(self.values.sum() * self.grid.cell_volume)


# ----------------------------------------------------------------------------------------
# Initial data
# ----------------------------------------------------------------------------------------


@dataclass(frozen=True)
class InitialMeasure:
    kind: str  # "gaussian", "point_mass", "grid_function"
    mean: tuple = (0.0,)
    covariance: object = 1.0  # scalar variance or per-axis variances
    mass: float = 1.0
    width: Optional[float] = None  # point mass smoothing width, default 2h
    function: object = None  # grid_function: callable of points or an array

    @classmethod
    def gaussian(cls, mean, covariance=1.0, mass=1.0):
        return cls("gaussian", tuple(np.atleast_1d(mean).astype(float)), covariance, mass)

    @classmethod
    def point_mass(cls, center, width=None, mass=1.0):
        return cls("point_mass", tuple(np.atleast_1d(center).astype(float)), mass=mass, width=width)

    @classmethod
    def grid_function(cls, function):
        return cls("grid_function", function=function)


def bernoulli(z):
    """B(z) = z / (e^z - 1), continuous at 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = np.where(small, 1.0 - 0.5 * z, z / np.expm1(np.where(small, 1.0, z)))
    return out


def _box_mass(mean, var, grid):
    """Exact mass of an axis-aligned Gaussian inside the grid box."""
    frac = 1.0
    for i in range(grid.dim):
        s = math.sqrt(var[i])
        R = grid.extents[i]
        frac *= float(ndtr((R - mean[i]) / s) - ndtr((-R - mean[i]) / s))
    return frac


def project_initial_measure(spec, grid):
    """Discretise the initial measure; mass is renormalised to the nominal mass of ``spec``."""
    x = grid.centers()
    meta = {"initial": spec.kind}
    if spec.kind == "grid_function":
        f = spec.function
        vals = np.asarray(f(x) if callable(f) else f, dtype=float).reshape(grid.shape)
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ParameterError("initial grid function must be finite and nonnegative")
        meta["renormalized"] = False
        return DensityField(grid, vals, 0.0, (), meta)

    mean = np.broadcast_to(np.asarray(spec.mean, dtype=float), (grid.dim,))
    if spec.kind == "gaussian":
        var = np.broadcast_to(np.asarray(spec.covariance, dtype=float), (grid.dim,))
    elif spec.kind == "point_mass":
        w = spec.width if spec.width is not None else 2.0 * max(grid.widths)
        var = np.full(grid.dim, float(w) ** 2)
    else:
        raise ParameterError(f"unknown initial measure {spec.kind!r}")
    if np.any(var <= 0):
        raise ParameterError("initial variance must be positive")
    inside = _box_mass(mean, var, grid)
    if inside < TRUNCATION_FAIL:
        raise TruncationError(f"only {inside:.3g} of the initial mass lies inside the grid")
    if inside < 1.0 - TRUNCATION_WARN:
        warnings.warn(f"initial measure truncated: {inside:.8f} of its mass lies inside the grid")
    q = (((x - mean) ** 2) / var).sum(axis=1)
    vals = np.exp(-0.5 * q)
    total = vals.sum() * grid.cell_volume
    vals = vals * (spec.mass / total)
    meta.update(renormalized=True, nominal_mass=spec.mass, mass_inside_box=inside)
    return DensityField(grid, vals.reshape(grid.shape), 0.0, (), meta)


# ----------------------------------------------------------------------------------------
# Transport operator
# ----------------------------------------------------------------------------------------


@dataclass(frozen=True)
class TransportOperator:
    matrix: sparse.csr_matrix  # d rho / dt = matrix @ rho (transport only)
    potential: np.ndarray  # c at cell centres
    max_out_rate: float
    wall_rates: Optional[np.ndarray] = None  # absorbing walls: outflow rate per cell
    time: float = 0.0


def _check_diagonal(field_, x, t):
    if field_.dim == 1:
        return
    A = field_.A(x, t)
    off = np.abs(A - np.einsum("nii->ni", A)[:, :, None] * np.eye(field_.dim)).max()
    if off > 1e-12 * max(1.0, np.abs(A).max()):
        raise ParameterError("the grid solver supports diagonal diffusion matrices only")


def _face_rates(a, B, h, scheme):
    """Rates (lo->hi, hi->lo) for a face with diffusion a and drift B pointing lo->hi."""
    if scheme == "upwind":
        return a / h**2 + np.maximum(B, 0.0) / h, a / h**2 + np.maximum(-B, 0.0) / h
    degenerate = a <= 1e-300
    safe_a = np.where(degenerate, 1.0, a)
    pe = B * h / safe_a
    up = np.where(degenerate, np.maximum(B, 0.0) / h, safe_a / h**2 * bernoulli(-pe))
    down = np.where(degenerate, np.maximum(-B, 0.0) / h, safe_a / h**2 * bernoulli(pe))
    return up, down


def build_operator(field_, grid, t, config):
    if field_.dim != grid.dim:
        raise ParameterError("field and grid dimensions differ")
    d, shape = grid.dim, grid.shape
    centers = grid.centers()
    _check_diagonal(field_, centers, t)
    index = np.arange(int(np.prod(shape))).reshape(shape)
    rows, cols, vals = [], [], []
    diag = np.zeros(index.size)
    wall = np.zeros(index.size) if config.boundary == "absorbing" else None
    for ax in range(d):
        h = grid.widths[ax]
        lo = np.take(index, np.arange(shape[ax] - 1), axis=ax).ravel()
        hi = np.take(index, np.arange(1, shape[ax]), axis=ax).ravel()
        faces = 0.5 * (centers[lo] + centers[hi])
        a = field_.A(faces, t)[:, ax, ax]
        B = divergence_correction(field_, faces, t)[:, ax]
        up, down = _face_rates(a, B, h, config.scheme)
        rows += [hi, lo]
        cols += [lo, hi]
        vals += [up, down]
        np.subtract.at(diag, lo, up)
        np.subtract.at(diag, hi, down)
        if wall is not None:
            for side, sign in ((0, -1.0), (shape[ax] - 1, 1.0)):
                cells = np.take(index, [side], axis=ax).ravel()
                pts = centers[cells].copy()
                pts[:, ax] = sign * grid.extents[ax]
                aw = field_.A(pts, t)[:, ax, ax]
                Bw = sign * divergence_correction(field_, pts, t)[:, ax]
                # Dirichlet zero at the wall, half a cell away
                out, _ = _face_rates(aw, Bw, h / 2.0, config.scheme)
                out = out / 2.0
                np.add.at(wall, cells, out)
                np.subtract.at(diag, cells, out)
    rows.append(np.arange(index.size))
    cols.append(np.arange(index.size))
    vals.append(diag)
    mat = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(index.size, index.size)
    )
    c = field_.c(centers, t)
    max_out = float(np.max(-diag)) if diag.size else 0.0
    if config.reaction == "explicit":
        max_out += float(np.max(np.maximum(-c, 0.0)))
    return TransportOperator(mat, c, max_out, wall, t)


def stable_dt(op, config):
    if op.max_out_rate <= 0:
        return math.inf
    return config.cfl / op.max_out_rate


def _resolve_dt(op, config):
    limit = 1.0 / op.max_out_rate if op.max_out_rate > 0 else math.inf
    if config.dt is None:
        return stable_dt(op, config)
    if config.dt > limit * (1.0 + 1e-12):
        raise CFLError(f"dt = {config.dt} exceeds the positivity limit {limit:.6g}")
    return config.dt


def _advance(rho, op, dt, config):
    """One split step; returns (new values, c-integral of new values, leaked mass)."""
    if config.reaction == "exact":
        half = np.exp(0.5 * dt * op.potential)
        mid = rho * half
        leak = 0.0 if op.wall_rates is None else dt * float(op.wall_rates @ mid)
        new = (mid + dt * (op.matrix @ mid)) * half
    else:
        leak = 0.0 if op.wall_rates is None else dt * float(op.wall_rates @ rho)
        new = rho + dt * (op.matrix @ rho + op.potential * rho)
    peak = float(np.max(np.abs(new))) if new.size else 0.0
    low = float(np.min(new)) if new.size else 0.0
    if not np.all(np.isfinite(new)):
        raise EvaluationError("non-finite density produced by the solver")
    if low < -NEG_TOL * peak:
        raise PositivityError(f"density dipped to {low:.3g} (peak {peak:.3g})")
    return np.maximum(new, 0.0), leak


def _ledger_entry(t, rho, op, vol, leakage):
    return LedgerEntry(t, float(rho.sum() * vol), float((op.potential * rho).sum() * vol), leakage)


def step(state, field_, config, dt=None, operator=None):
    """Advance one time step and return a new DensityField."""
    op = operator or build_operator(field_, state.grid, state.time, config)
    dt = _resolve_dt(op, config) if dt is None else dt
    if dt * op.max_out_rate > 1.0 + 1e-12:
        raise CFLError(f"dt = {dt} exceeds the positivity limit")
    rho = state.values.ravel()
    vol = state.grid.cell_volume
    ledger = state.ledger or (_ledger_entry(state.time, rho, op, vol, 0.0),)
    new, leak = _advance(rho, op, dt, config)
    entry = _ledger_entry(state.time + dt, new, op, vol, ledger[-1].leakage + leak)
    return state.with_values(new.reshape(state.grid.shape), state.time + dt, ledger + (entry,))


@dataclass(frozen=True)
class RunResult:
    final: DensityField
    snapshots: tuple
    ledger: tuple
    dt: float
    steps: int


def run(state, field_, config):
    """Time loop: steps land exactly on requested snapshot times and on the end time."""
    t = state.time
    grid = state.grid
    vol = grid.cell_volume
    static = not field_.time_dependent
    op = build_operator(field_, grid, t, config)
    dt = _resolve_dt(op, config)
    rho = state.values.ravel().copy()
    ledger = list(state.ledger) or [_ledger_entry(t, rho, op, vol, 0.0)]
    targets = sorted({s for s in config.snapshot_times if t <= s <= config.end_time} | {config.end_time})
    snaps = [Snapshot(t, state.values, grid)]
    steps = 0
    for target in targets:
        while t < target * (1.0 - 1e-14) - 1e-300:
            if not static:
                op = build_operator(field_, grid, t, config)
                dt = _resolve_dt(op, config)
            remaining = target - t
            # finish the interval exactly; absorb a tiny remainder into the last step
            h = remaining if remaining <= dt * (1.0 + 1e-9) else dt
            rho, leak = _advance(rho, op, h, config)
            t = target if h == remaining else t + h
            steps += 1
            ledger.append(_ledger_entry(t, rho, op, vol, ledger[-1].leakage + leak))
            if config.snapshot_every_step and t < target:
                snaps.append(Snapshot(t, _frozen(rho, grid), grid))
        if target in config.snapshot_times or config.snapshot_every_step:
            if snaps[-1].t != t:
                snaps.append(Snapshot(t, _frozen(rho, grid), grid))
    final = DensityField(grid, rho.reshape(grid.shape), t, tuple(ledger), state.metadata)
    return RunResult(final, tuple(snaps), tuple(ledger), dt, steps)


def _frozen(rho, grid):
    v = rho.reshape(grid.shape).copy()
    v.setflags(write=False)
    return v


# ----------------------------------------------------------------------------------------
# Diagnostics
# ----------------------------------------------------------------------------------------


def weighted_moment(state, weight):
    """Midpoint rule  sum_i w(x_i) rho_i |cell|."""
    grid = state.grid
    x = grid.centers()
    w = np.asarray(weight(x), dtype=float).reshape(-1)
    if not np.all(np.isfinite(w)):
        raise EvaluationError("moment weight is not finite on the grid")
    vals = state.values.ravel()
    return float((w * vals).sum() * grid.cell_volume)


def _trapezoid_cumulative(t, y):
    out = np.zeros(len(t))
    if len(t) > 1:
        out[1:] = np.cumsum(0.5 * np.diff(t) * (y[1:] + y[:-1]))
    return out


def mass_balance_residual(ledger):
    """mass(t) - mass(0) - int_0^t int c rho dx ds, per ledger entry.

    Wall leakage (absorbing boundaries) is not compensated; it is available as
    the ``leakage`` column of the ledger.
    """
    if not ledger:
        raise ParameterError("ledger is empty")
    t = np.array([e.t for e in ledger])
    m = np.array([e.mass for e in ledger])
    ci = np.array([e.c_integral for e in ledger])
    return m - m[0] - _trapezoid_cumulative(t, ci)


def leakage_series(ledger):
    return np.array([e.leakage for e in ledger])


def _support_inside(u, grid, t, ring=2):
    """Raise if u is nonzero on the outermost ``ring`` cells of the grid."""
    x = grid.centers()
    vals = np.abs(u.u(x, t)).reshape(grid.shape)
    mask = np.zeros(grid.shape, dtype=bool)
    for ax in range(grid.dim):
        sl = [slice(None)] * grid.dim
        sl[ax] = slice(0, ring)
        mask[tuple(sl)] = True
        sl[ax] = slice(grid.shape[ax] - ring, None)
        mask[tuple(sl)] = True
    if np.any(vals[mask] > 0):
        raise SupportError("test function support touches the grid boundary")


def weak_identity_residual(snapshots, field_, u, interval=None):
    """|int u d mu_t - int u d mu_s - int_s^t int (d_tau u + L u) d mu_tau d tau|.

    Spatial integrals use the midpoint rule, the time integral the trapezoid
    rule over the supplied snapshots.
    """
    from .coefficients import apply_generator

    snaps = sorted(snapshots, key=lambda s: s.t)
    if interval is not None:
        s0, s1 = interval
        snaps = [s for s in snaps if s0 - 1e-12 <= s.t <= s1 + 1e-12]
    if len(snaps) < 2:
        return 0.0
    grid = snaps[0].grid
    x = grid.centers()
    vol = grid.cell_volume
    gen = []
    for s in snaps:
        _support_inside(u, grid, s.t)
        rho = s.values.ravel()
        gen.append(float(((u.u_t(x, s.t) + apply_generator(field_, u, x, s.t)) * rho).sum() * vol))
    times = np.array([s.t for s in snaps])
    lhs = float((u.u(x, snaps[-1].t) * snaps[-1].values.ravel()).sum() * vol)
    lhs -= float((u.u(x, snaps[0].t) * snaps[0].values.ravel()).sum() * vol)
    rhs = _trapezoid_cumulative(times, np.array(gen))[-1]
    return abs(lhs - rhs)


def interpolate(values, grid, points):
    """Linear interpolation of cell values at arbitrary points (constant beyond the outer centres)."""
    from scipy.interpolate import RegularGridInterpolator

    axes = [grid.axis_centers(i) for i in range(grid.dim)]
    f = RegularGridInterpolator(axes, np.asarray(values).reshape(grid.shape), bounds_error=False, fill_value=None)
    pts = np.asarray(points, dtype=float).reshape(-1, grid.dim)
    clipped = np.clip(pts, [a[0] for a in axes], [a[-1] for a in axes])
    return f(clipped)


def coarsen(values, grid, factor=2):
    """Average a fine-grid field onto the grid with ``factor`` times fewer cells per axis."""
    v = np.asarray(values).reshape(grid.shape)
    coarse = Grid(grid.extents, tuple(n // factor for n in grid.cells))
    if grid.dim == 1:
        out = v.reshape(-1, factor).mean(axis=1)
    else:
        n0, n1 = coarse.cells
        out = v.reshape(n0, factor, n1, factor).mean(axis=(1, 3))
    return out, coarse


def l1_distance(u, v, grid):
    return float(np.abs(np.asarray(u) - np.asarray(v)).sum() * grid.cell_volume)
