"""Bridges between the analytic density bounds and solver output.

Covers the weight transform rho -> Phi rho, sampled local ellipticity,
one-sided fitting of envelope constants, envelope ratio checks, decay
exponent regression and the shape of the local pointwise bound.
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import optimize, stats

from .coefficients import (
    CoefficientField,
    Region,
    SmoothFunction,
    as_points,
    divergence_correction,
    eigen_extremes,
    ellipticity_extremes,
    operator_norm,
    radial_exponential,
)
from .errors import DomainError, EvaluationError, ParameterError, PositivityError, PreconditionError

CORE_FLOOR = 1e-250
CORE_RELATIVE = 1e-12
BOUNDARY_CELLS = 2


# ----------------------------------------------------------------------------------------
# Weight transform
# ----------------------------------------------------------------------------------------


@dataclass(frozen=True)
class PhiWeight:
    """Positive C^{2,1} weight; wraps a SmoothFunction and checks positivity on use."""

    function: SmoothFunction

    @property
    def dim(self):
        return self.function.dim

    def parts(self, x, t):
        pts, _ = as_points(x, self.dim)
        f = self.function
        val = f.u(pts, t)
        if np.any(val <= 0):
            i = int(np.argmax(val <= 0))
            raise PositivityError(f"weight is not positive at {tuple(pts[i])}")
        grad = np.asarray(f.gradient(pts, t), dtype=float).reshape(len(pts), self.dim)
        hess = np.asarray(f.hessian(pts, t), dtype=float).reshape(len(pts), self.dim, self.dim)
        return val, grad, hess, f.u_t(pts, t)

    @classmethod
    def radial_exponential(cls, dim, alpha, r):
        """Phi = exp(alpha |x|^r)."""
        return cls(radial_exponential(dim, alpha, r))

    @classmethod
    def exponential_linear(cls, direction):
        """Phi = exp(v . x)."""
        v = np.atleast_1d(np.asarray(direction, dtype=float))
        dim = len(v)

        def value(x, t):
            return np.exp(x @ v)

        def gradient(x, t):
            return value(x, t)[:, None] * v

        def hessian(x, t):
            return value(x, t)[:, None, None] * np.outer(v, v)

        return cls(SmoothFunction(dim, value, gradient, hessian, name=f"exp({v.tolist()}.x)"))

    @classmethod
    def constant(cls, dim, value=1.0):
        from .coefficients import constant_function

        return cls(constant_function(dim, value))

    def inverse(self):
        """The weight 1/Phi with derivatives from the quotient rule."""
        f = self.function

        def value(x, t):
            return 1.0 / f.u(x, t)

        def gradient(x, t):
            v = f.u(x, t)
            return -np.asarray(f.gradient(x, t)) / (v**2)[:, None]

        def hessian(x, t):
            v = f.u(x, t)
            g = np.asarray(f.gradient(x, t))
            H = np.asarray(f.hessian(x, t))
            return 2.0 * np.einsum("ni,nj->nij", g, g) / (v**3)[:, None, None] - H / (v**2)[:, None, None]

        def time_derivative(x, t):
            return -f.u_t(x, t) / f.u(x, t) ** 2

        return PhiWeight(SmoothFunction(self.dim, value, gradient, hessian, time_derivative, name=f"1/({f.name})"))


def phi_transform(field_, phi, x, t=0.0, literal=False):
    """(c~, B~) such that Phi rho solves the divergence-form equation with (A, B~, c~).

    c~ = c + (d_t Phi + div(A grad Phi) + B . grad Phi) / Phi and
    B~ = B + 2 A grad Phi / Phi.  ``literal=True`` uses a single factor in B~,
    which does not conjugate the equation (kept for comparison).
    """
    pts, single = as_points(x, field_.dim)
    val, grad, hess, dt = phi.parts(pts, t)
    A = field_.A(pts, t)
    B = divergence_correction(field_, pts, t)
    div_a = field_.b(pts, t) - B  # row divergence of A, in the field's own mode
    a_grad = np.einsum("nij,nj->ni", A, grad)
    div_a_grad = np.einsum("ni,ni->n", div_a, grad) + np.einsum("nij,nij->n", A, hess)
    c_t = field_.c(pts, t) + (dt + div_a_grad + np.einsum("ni,ni->n", B, grad)) / val
    B_t = B + (1.0 if literal else 2.0) * a_grad / val[:, None]
    if not (np.all(np.isfinite(c_t)) and np.all(np.isfinite(B_t))):
        raise EvaluationError("weight transform produced non-finite coefficients")
    if single:
        return float(c_t[0]), B_t[0]
    return c_t, B_t


def transformed_field(field_, phi, literal=False):
    """CoefficientField with the same A and the transformed (B~, c~)."""

    def drift(x, t):
        _, B_t = phi_transform(field_, phi, x, t, literal)
        return np.atleast_2d(B_t) + (field_.b(x, t) - divergence_correction(field_, x, t))

    def potential(x, t):
        return np.atleast_1d(phi_transform(field_, phi, x, t, literal)[0])

    return replace(
        field_,
        drift=drift,
        potential=potential,
        time_dependent=field_.time_dependent or phi.function.time_derivative is not None,
        name=f"{field_.name}*{phi.function.name}",
    )


def scaled_field(field_, x0, t0):
    """Coefficients after y = (x - x0)/sqrt(t0), s = t/t0.

    rho^(y, s) = t0^{d/2} rho(x0 + sqrt(t0) y, t0 s) solves the equation with
    A^ = A, b^ = sqrt(t0) b, c^ = t0 c (so that B^ = sqrt(t0) B).
    """
    if not t0 > 0:
        raise ParameterError("t0 must be positive")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    sq = math.sqrt(t0)

    def back(y):
        return x0 + sq * np.asarray(y)

    div = None
    if field_.diffusion_divergence is not None:

        def div(y, s):
            return sq * np.asarray(field_.diffusion_divergence(back(y), t0 * s))

    return CoefficientField(
        dim=field_.dim,
        diffusion=lambda y, s: field_.diffusion(back(y), t0 * s),
        drift=lambda y, s: sq * np.asarray(field_.drift(back(y), t0 * s)),
        potential=lambda y, s: t0 * np.asarray(field_.potential(back(y), t0 * s)),
        diffusion_divergence=div,
        fd_scale=field_.fd_scale,
        time_dependent=field_.time_dependent,
        name=f"{field_.name} scaled",
    )


# ----------------------------------------------------------------------------------------
# Local ellipticity
# ----------------------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedWindow:
    """U(x, kappa) x [t0/2, t]."""

    kappa: float
    t0: float

    def region(self, x, t):
        if not (self.kappa > 0 and 0 < self.t0 < t):
            raise DomainError("fixed window needs kappa > 0 and 0 < t0 < t")
        return Region(x, self.kappa, (self.t0 / 2.0, t))


@dataclass(frozen=True)
class ParabolicWindow:
    """U(x, sqrt(t)) x [theta t, t]."""

    theta: float = 0.5

    def region(self, x, t):
        if not (t > 0 and 0 < self.theta < 1):
            raise DomainError("parabolic window needs t > 0 and theta in (0, 1)")
        return Region(x, math.sqrt(t), (self.theta * t, t))


def local_ellipticity(field_, x, t, window, start=5, max_rounds=6, rtol=5e-3):
    """Sampled infimum of the smallest eigenvalue of A over the window.

    The spatial grid goes n -> 2n - 1 (nested, so the value never increases)
    until two successive values differ by less than ``rtol``.
    """
    region = window.region(x, t)
    n, nt = start, 3
    prev = ellipticity_extremes(field_, region, (n, nt)).lambda_floor
    for _ in range(max_rounds):
        n, nt = 2 * n - 1, 2 * nt - 1
        cur = ellipticity_extremes(field_, region, (n, nt)).lambda_floor
        if abs(cur - prev) <= rtol * max(abs(prev), 1e-300):
            return cur
        prev = cur
    return prev


# ----------------------------------------------------------------------------------------
# Envelopes
# ----------------------------------------------------------------------------------------


@dataclass(frozen=True)
class EnvelopeSpec:
    """Majorant  log rho <= log C4 + C5 t^-q - alpha'|x|^r   (form "blowup")
    or          log rho <= log C4 + p log(1/t) - alpha' t^beta |x|^r   (form "timeweighted").

    Exponents are fixed inputs; ``log_c4`` and ``c5`` / ``p`` are fitted.
    """

    form: str
    alpha_prime: float
    r: float
    q: Optional[float] = None
    beta: Optional[float] = None
    log_c4: Optional[float] = None
    c5: Optional[float] = None
    p: Optional[float] = None
    provenance: str = "exponents fixed by the analytic bound"

    def __post_init__(self):
        if self.form not in ("blowup", "timeweighted"):
            raise ParameterError(f"unknown envelope form {self.form!r}")
        if not (self.alpha_prime > 0 and self.r > 0):
            raise ParameterError("envelope needs alpha' > 0 and r > 0")
        if self.form == "blowup" and not (self.q is not None and self.q > 0):
            raise ParameterError("blow-up envelope needs q > 0")
        if self.form == "timeweighted" and not (self.beta is not None and self.beta >= 0):
            raise ParameterError("time-weighted envelope needs beta >= 0")

    @property
    def fitted(self):
        free = self.c5 if self.form == "blowup" else self.p
        return self.log_c4 is not None and free is not None

    def spatial_weight(self, x, t):
        """alpha' |x|^r (times t^beta for the time-weighted form)."""
        n = np.linalg.norm(np.atleast_2d(x), axis=1) ** self.r
        scale = self.alpha_prime * (t**self.beta if self.form == "timeweighted" else 1.0)
        return scale * n

    def temporal_feature(self, t):
        return t ** (-self.q) if self.form == "blowup" else -math.log(t)

    def temporal_coefficient(self):
        return self.c5 if self.form == "blowup" else self.p

    def log_envelope(self, x, t):
        if not self.fitted:
            raise PreconditionError("envelope constants have not been fitted")
        return self.log_c4 + self.temporal_coefficient() * self.temporal_feature(t) - self.spatial_weight(x, t)

    def with_constants(self, log_c4, coefficient):
        if self.form == "blowup":
            return replace(self, log_c4=float(log_c4), c5=float(coefficient))
        return replace(self, log_c4=float(log_c4), p=float(coefficient))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ChannelPoint:
    t: float
    value: float  # max over the core of log rho + spatial weight
    x: tuple  # maximiser
    at_core_edge: bool  # maximiser borders excluded cells: the sup is not resolved
    core_size: int


def _core_mask(values, rel=CORE_RELATIVE, boundary=BOUNDARY_CELLS):
    v = np.asarray(values)
    peak = float(v.max()) if v.size else 0.0
    mask = v > max(CORE_FLOOR, rel * peak)
    if boundary:
        for ax in range(v.ndim):
            sl = [slice(None)] * v.ndim
            sl[ax] = slice(0, boundary)
            mask[tuple(sl)] = False
            sl[ax] = slice(v.shape[ax] - boundary, None)
            mask[tuple(sl)] = False
    return mask


def _edge(mask):
    """Core cells with a neighbour outside the core."""
    edge = np.zeros_like(mask)
    for ax in range(mask.ndim):
        for shift in (1, -1):
            rolled = np.roll(mask, shift, axis=ax)
            sl = [slice(None)] * mask.ndim
            sl[ax] = 0 if shift == 1 else -1
            rolled[tuple(sl)] = False
            edge |= mask & ~rolled
    return edge


def envelope_channel(snapshots, spec, rel=CORE_RELATIVE, boundary=BOUNDARY_CELLS):
    """Per-snapshot maximum of log rho + spatial weight over the core region."""
    out = []
    for s in sorted(snapshots, key=lambda s: s.t):
        if s.t <= 0:
            continue
        mask = _core_mask(s.values, rel, boundary)
        if not mask.any():
            raise PreconditionError(f"no positive core cells at t = {s.t}")
        x = s.grid.centers()
        flat = mask.ravel()
        vals = np.full(flat.shape, -np.inf)
        vals[flat] = np.log(s.values.ravel()[flat]) + spec.spatial_weight(x[flat], s.t)
        i = int(np.argmax(vals))  # first maximiser in row-major order
        out.append(ChannelPoint(s.t, float(vals[i]), tuple(x[i].tolist()), bool(_edge(mask).ravel()[i]), int(flat.sum())))
    return out


@dataclass(frozen=True)
class FitResult:
    envelope: EnvelopeSpec
    success: bool
    max_gap: float  # largest log-gap between envelope and per-snapshot maxima
    witness: Optional[dict]
    snapshot_count: int
    message: str = ""


def _select(snapshots, t_range):
    snaps = [s for s in snapshots if s.t > 0]
    if t_range is not None:
        lo, hi = t_range
        snaps = [s for s in snaps if lo - 1e-12 <= s.t <= hi + 1e-12]
    return snaps


def fit_envelope_constants(snapshots, spec, t_range=None, rel=CORE_RELATIVE):
    """One-sided minimax fit of (log C4, C5 or p) with the exponents held fixed.

    Constraints  log C4 + k tau_j >= g_j  (tau_j the temporal feature, g_j the
    channel maximum of snapshot j) make the envelope majorise every core cell;
    the objective is the largest gap  log C4 + k tau_j - g_j.  k >= 0.
    """
    snaps = _select(snapshots, t_range)
    if len(snaps) < 3:
        raise PreconditionError("fitting needs at least 3 snapshots with t > 0")
    channel = envelope_channel(snaps, spec, rel)
    tau = np.array([spec.temporal_feature(c.t) for c in channel])
    g = np.array([c.value for c in channel])
    scale = max(1.0, float(np.abs(tau).max()))
    m = len(g)
    # variables: (log C4, k * scale, z)
    A_ub = np.vstack(
        [
            np.column_stack([-np.ones(m), -tau / scale, np.zeros(m)]),
            np.column_stack([np.ones(m), tau / scale, -np.ones(m)]),
        ]
    )
    b_ub = np.concatenate([-g, g])
    res = optimize.linprog(
        c=[0.0, 0.0, 1.0],
        A_ub=A_ub,
        b_ub=b_ub,
        bounds=[(None, None), (0.0, None), (0.0, None)],
        method="highs",
    )
    if not res.success:
        return FitResult(spec, False, math.inf, None, m, res.message)
    log_c4, k = float(res.x[0]), float(res.x[1]) / scale
    fitted = spec.with_constants(log_c4, k)
    gap = log_c4 + k * tau - g
    # the LP solution is feasible up to solver tolerance; push log C4 up by the residual
    deficit = float(max(0.0, -gap.min()))
    if deficit:
        fitted = fitted.with_constants(log_c4 + deficit, k)
        gap = gap + deficit
    j = int(np.argmax(gap))
    witness = {"t": channel[j].t, "x": list(channel[j].x), "gap": float(gap[j])}
    return FitResult(fitted, True, float(gap.max()), witness, m)


@dataclass
class VerificationReport:
    envelope: dict
    constants: dict
    exponents: dict
    max_ratio: float
    witness: dict
    regressions: list
    config_digest: str
    passed: bool
    slack: float
    t_range: Optional[list] = None
    notes: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2, allow_nan=True)


def config_digest(config):
    text = json.dumps(config, sort_keys=True, default=repr)
    return hashlib.sha256(text.encode()).hexdigest()


def check_envelope(snapshots, fitted, slack=0.0, t_range=None, config=None, rel=CORE_RELATIVE):
    """Largest ratio rho / envelope over the core cells of every snapshot.

    Ties in the maximum are broken by the earliest (t, x) in lexicographic order.
    """
    if not fitted.fitted:
        raise PreconditionError("envelope constants have not been fitted")
    if slack < 0:
        raise ParameterError("slack must be nonnegative")
    best, witness = -math.inf, {}
    for s in sorted(_select(snapshots, t_range), key=lambda s: s.t):
        mask = _core_mask(s.values, rel).ravel()
        if not mask.any():
            continue
        x = s.grid.centers()[mask]
        log_ratio = np.log(s.values.ravel()[mask]) - fitted.log_envelope(x, s.t)
        i = int(np.argmax(log_ratio))
        if log_ratio[i] > best:
            best = float(log_ratio[i])
            witness = {"t": s.t, "x": x[i].tolist()}
    ratio = math.exp(best) if best < 709 else math.inf
    coeff = fitted.temporal_coefficient()
    constants = {"C4": math.exp(fitted.log_c4), "log_C4": fitted.log_c4}
    constants["C5" if fitted.form == "blowup" else "p"] = coeff
    exps = {"r": fitted.r, "alpha_prime": fitted.alpha_prime}
    exps.update({"q": fitted.q} if fitted.form == "blowup" else {"beta": fitted.beta})
    return VerificationReport(
        envelope=fitted.to_dict(),
        constants=constants,
        exponents=exps,
        max_ratio=ratio,
        witness=witness,
        regressions=[],
        config_digest=config_digest(config or {}),
        passed=bool(ratio <= 1.0 + slack),
        slack=slack,
        t_range=None if t_range is None else list(t_range),
    )


# ----------------------------------------------------------------------------------------
# Exponent regression
# ----------------------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentEstimate:
    exponent: float
    stderr: float
    window: tuple
    points: int
    model: str

    def to_dict(self):
        return asdict(self)


def decay_exponent_estimate(t, values, model="power", window=None, log_values=False):
    """Least-squares exponent of  value ~ t^-p  ("power") or  log value ~ t^-q  ("loglog").

    With ``log_values`` the series already holds log(value), which keeps
    exp(huge) blow-ups out of floating point.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is not None:
        keep = (t >= window[0]) & (t <= window[1])
        t, v = t[keep], v[keep]
    if len(t) < 5:
        raise PreconditionError("exponent regression needs at least 5 points")
    if np.any(t <= 0):
        raise DomainError("times must be positive")
    if model == "power":
        if log_values:
            y = v
        else:
            if np.any(v <= 0):
                raise DomainError("power model needs positive values")
            y = np.log(v)
    elif model == "loglog":
        logs = v if log_values else np.log(np.where(v > 0, v, np.nan))
        if not np.all(np.isfinite(logs)) or np.any(logs <= 0):
            raise DomainError("loglog model needs values above 1")
        y = np.log(logs)
    else:
        raise ParameterError(f"unknown regression model {model!r}")
    fit = stats.linregress(np.log(t), y)
    return ExponentEstimate(float(-fit.slope), float(fit.stderr), (float(t.min()), float(t.max())), len(t), model)


def reliable_times(coarse, fine, tol=0.01, scale=None):
    """Snapshot times whose channel value moves by less than ``tol`` of the signal under dt -> dt/2
    and whose maximiser is resolved (not on the edge of the core region).

    ``coarse`` and ``fine`` are envelope_channel outputs on the same time grid.
    """
    by_t = {round(c.t, 12): c for c in fine}
    ok = []
    for c in coarse:
        f = by_t.get(round(c.t, 12))
        if f is None or c.at_core_edge or f.at_core_edge:
            continue
        ref = scale if scale is not None else max(abs(f.value), 1.0)
        if abs(c.value - f.value) <= tol * ref:
            ok.append(c.t)
    return ok


def blowup_exponent(channel, log_c4, t_window=None, min_excess=1.0):
    """q from the loglog regression of the channel excess  g(t) - log C4  ~  C5 t^-q.

    Only snapshots with excess above ``min_excess`` enter (there the blow-up
    term dominates the constant).
    """
    pts = [(c.t, c.value - log_c4) for c in channel if c.value - log_c4 > min_excess]
    if t_window is not None:
        pts = [p for p in pts if t_window[0] - 1e-12 <= p[0] <= t_window[1] + 1e-12]
    if len(pts) < 5:
        raise PreconditionError(f"only {len(pts)} snapshots in the blow-up regime; need 5")
    t, e = zip(*pts)
    return decay_exponent_estimate(t, e, "loglog", log_values=True)


# ----------------------------------------------------------------------------------------
# Local pointwise bound shape
# ----------------------------------------------------------------------------------------


def pointwise_bound_rhs(field_, snapshots, x, t, gamma, window, time_weight="squared", norm="max"):
    """Right-hand side of the local L^infinity bound with the unknown constant set to 1.

    Parabolic window:  (1 + 1/lambda)^gamma t^{-(d+2)/2} int_{theta t}^t int_{U(x, sqrt t)}
    (1 + ||A||^gamma + w |c+|^gamma + w |A^{-1/2} B|^{2 gamma}) rho, with w = t^{2 gamma}
    (``time_weight="squared"``) or t^gamma (``"scaling"``, the weight produced by the
    parabolic change of variables).  Fixed window: same integrand with w = 1 and no
    t prefactor over U(x, kappa) x [t0/2, t].
    """
    d = field_.dim
    if not gamma > (d + 2) / 2.0:
        raise ParameterError(f"gamma must exceed (d+2)/2 = {(d + 2) / 2.0}")
    region = window.region(x, t)
    snaps = sorted([s for s in snapshots if region.time_interval[0] - 1e-12 <= s.t <= t + 1e-12], key=lambda s: s.t)
    if len(snaps) < 2:
        raise PreconditionError("snapshots do not cover the window's time interval")
    grid = snaps[0].grid
    center = np.asarray(region.center)
    for ax in range(d):
        if abs(center[ax]) + region.radius > grid.extents[ax]:
            raise DomainError("window leaves the computational grid")
    pts = grid.centers()
    inside = np.linalg.norm(pts - center, axis=1) <= region.radius
    y = pts[inside]
    lam = local_ellipticity(field_, x, t, window)
    if not lam > 0:
        raise DomainError("diffusion degenerates inside the window")
    if isinstance(window, ParabolicWindow):
        w = {"squared": t ** (2 * gamma), "scaling": t**gamma}[time_weight]
        pref = t ** (-(d + 2) / 2.0)
    else:
        w, pref = 1.0, 1.0
    vol = grid.cell_volume
    vals = []
    for s in snaps:
        A = field_.A(y, s.t)
        B = divergence_correction(field_, y, s.t)
        cplus = np.maximum(field_.c(y, s.t), 0.0)
        a_inv_b = np.einsum("ni,ni->n", B, np.linalg.solve(A, B[:, :, None])[:, :, 0])  # |A^{-1/2}B|^2
        weight = 1.0 + operator_norm(field_, y, s.t, norm) ** gamma + w * cplus**gamma + w * a_inv_b**gamma
        vals.append(float((weight * s.values.ravel()[inside]).sum() * vol))
    times = np.array([s.t for s in snaps])
    integral = float(np.sum(0.5 * np.diff(times) * (np.array(vals[1:]) + np.array(vals[:-1]))))
    return (1.0 + 1.0 / lam) ** gamma * pref * integral
