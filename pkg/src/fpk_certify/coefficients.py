"""FPK coefficients (A, b, c) and the pointwise algebra performed on them.

Every evaluator is vectorised: points are arrays of shape ``(n, d)`` (a single
``(d,)`` point is accepted and the result is squeezed back).  Diffusion
evaluators return ``(n, d, d)``, drift ``(n, d)``, potential ``(n,)``.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, EvaluationError, ParameterError, SingularPointError

SYMMETRY_TOL = 1e-12


def as_points(x, dim):
    """Return ``(points, single)`` with points of shape (n, dim)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ValueError(f"expected a point of dimension {dim}, got shape {arr.shape}")
        return arr.reshape(1, dim), True
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected points of shape (n, {dim}), got {arr.shape}")
    return arr, False


def _squeeze(value, single):
    return value[0] if single else value


def _require_finite(values, points, what):
    values = np.asarray(values, dtype=float)
    flat = values.reshape(values.shape[0], -1) if values.ndim > 1 else values.reshape(-1, 1)
    bad = ~np.all(np.isfinite(flat), axis=1)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise EvaluationError(f"non-finite {what}", point=tuple(np.atleast_1d(points[i]).tolist()))
    return values


@dataclass(frozen=True)
class CoefficientField:
    """Evaluators for the diffusion matrix A, drift b and potential c.

    ``diffusion_divergence`` (row divergence of A) selects the analytic
    divergence mode; when it is None a centred difference with step
    ``fd_scale * (1 + |x|)`` is used.
    """

    dim: int
    diffusion: Callable
    drift: Callable
    potential: Callable
    diffusion_divergence: Optional[Callable] = None
    fd_scale: float = 1e-5
    time_dependent: bool = False
    domain_radius: float = math.inf
    horizon: float = math.inf
    name: str = ""
    params: dict = field(default_factory=dict, compare=False)

    @property
    def divergence_mode(self):
        return "analytic" if self.diffusion_divergence is not None else "finite-difference"

    def A(self, x, t=0.0):
        pts, single = as_points(x, self.dim)
        vals = np.asarray(self.diffusion(pts, t), dtype=float).reshape(len(pts), self.dim, self.dim)
        _require_finite(vals, pts, "diffusion")
        asym = np.abs(vals - np.swapaxes(vals, 1, 2)).max(axis=(1, 2))
        scale = np.maximum(1.0, np.abs(vals).max(axis=(1, 2)))
        bad = asym > SYMMETRY_TOL * scale
        if np.any(bad):
            i = int(np.argmax(bad))
            raise EvaluationError("diffusion matrix is not symmetric", point=tuple(pts[i]))
        return _squeeze(vals, single)

    def b(self, x, t=0.0):
        pts, single = as_points(x, self.dim)
        vals = np.asarray(self.drift(pts, t), dtype=float).reshape(len(pts), self.dim)
        return _squeeze(_require_finite(vals, pts, "drift"), single)

    def c(self, x, t=0.0):
        pts, single = as_points(x, self.dim)
        vals = np.broadcast_to(np.asarray(self.potential(pts, t), dtype=float), (len(pts),))
        return _squeeze(_require_finite(np.array(vals), pts, "potential"), single)

    @classmethod
    def isotropic(cls, dim, a, b, c, grad_a=None, **kwargs):
        """Field with A = a(x, t) I; ``grad_a`` gives the analytic divergence."""
        eye = np.eye(dim)

        def diffusion(x, t):
            return np.asarray(a(x, t), dtype=float).reshape(-1, 1, 1) * eye

        div = None
        if grad_a is not None:
            def div(x, t):
                return np.asarray(grad_a(x, t), dtype=float).reshape(-1, dim)

        return cls(dim=dim, diffusion=diffusion, drift=b, potential=c, diffusion_divergence=div, **kwargs)

    def with_changes(self, **kwargs):
        from dataclasses import replace

        return replace(self, **kwargs)


@dataclass(frozen=True)
class Region:
    """Ball U(center, radius) times the closed time interval J."""

    center: tuple
    radius: float
    time_interval: tuple

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in np.atleast_1d(self.center)))
        s1, s2 = (float(v) for v in self.time_interval)
        object.__setattr__(self, "time_interval", (s1, s2))
        if not self.radius > 0:
            raise ParameterError("region radius must be positive")
        if not s1 < s2:
            raise ParameterError("region time interval must satisfy s1 < s2")

    @property
    def dim(self):
        return len(self.center)


@dataclass(frozen=True)
class SpectralBounds:
    lambda_floor: float
    norm_ceiling: float
    sample_count: int


def sample_ball(center, radius, n):
    """Grid points of the cube [c-R, c+R]^d (n per axis) that lie in the closed ball.

    Grids with n and 2n - 1 points per axis are nested, which is what makes
    sampled extremes monotone under refinement.
    """
    center = np.asarray(center, dtype=float)
    axes = [np.linspace(c - radius, c + radius, n) for c in center]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(center))
    keep = np.linalg.norm(mesh - center, axis=1) <= radius * (1 + 1e-12)
    return mesh[keep]


def _region_samples(field_, region, resolution):
    n_space, n_time = resolution
    if n_space < 2 or n_time < 2:
        raise ParameterError("sampling needs at least 2 points per axis and 2 time samples")
    if region.dim != field_.dim:
        raise ParameterError("region dimension does not match the field")
    if np.linalg.norm(region.center) + region.radius > field_.domain_radius:
        raise DomainError("region leaves the declared spatial domain")
    s1, s2 = region.time_interval
    if s1 < 0 or s2 > field_.horizon:
        raise DomainError("region time interval leaves (0, T)")
    return sample_ball(region.center, region.radius, n_space), np.linspace(s1, s2, n_time)


def _sphere_directions(dim):
    dirs = [np.eye(dim)[i] for i in range(dim)]
    for i in range(dim):
        for j in range(i + 1, dim):
            for sgn in (1.0, -1.0):
                v = np.zeros(dim)
                v[i], v[j] = 1.0, sgn
                dirs.append(v / math.sqrt(2.0))
    return np.array(dirs)


def eigen_extremes(mats, method="auto"):
    """Smallest and largest eigenvalue of each symmetric matrix in ``mats``."""
    dim = mats.shape[-1]
    if method == "auto":
        method = "eigh" if dim <= 3 else "rayleigh"
    if method == "eigh":
        w = np.linalg.eigvalsh(mats)
        return w[:, 0], w[:, -1]
    dirs = _sphere_directions(dim)
    q = np.einsum("kd,nde,ke->nk", dirs, mats, dirs)
    return q.min(axis=1), q.max(axis=1)


def ellipticity_extremes(field_, region, resolution=(9, 3), method="auto"):
    """Sampled inf of the smallest and sup of the largest eigenvalue of A over a region."""
    pts, times = _region_samples(field_, region, resolution)
    lo, hi = math.inf, -math.inf
    for t in times:
        w_min, w_max = eigen_extremes(field_.A(pts, t), method)
        lo = min(lo, float(w_min.min()))
        hi = max(hi, float(w_max.max()))
    if lo < -1e-12 * max(1.0, abs(hi)):
        raise EvaluationError(f"diffusion matrix is not positive semidefinite (min eigenvalue {lo:g})")
    return SpectralBounds(max(lo, 0.0), hi, len(pts) * len(times))


def operator_norm(field_, x, t=0.0, convention="max"):
    """||A(x, t)||: largest eigenvalue by default, smallest with ``convention='min'``.

    The 'min' option reproduces the literal definition next to the iteration
    inequality; the 'max' one is what majorises |sqrt(A) grad psi|^2.
    """
    pts, single = as_points(x, field_.dim)
    w_min, w_max = eigen_extremes(field_.A(pts, t))
    if convention == "max":
        out = w_max
    elif convention == "min":
        out = w_min
    else:
        raise ParameterError(f"unknown norm convention {convention!r}")
    return _squeeze(out, single)


def divergence_correction(field_, x, t=0.0, mode=None, fd_scale=None):
    """B = b - (row divergence of A)."""
    pts, single = as_points(x, field_.dim)
    mode = mode or field_.divergence_mode
    if mode == "analytic":
        if field_.diffusion_divergence is None:
            raise ParameterError("field has no analytic diffusion divergence")
        div = _require_finite(
            np.asarray(field_.diffusion_divergence(pts, t), dtype=float).reshape(len(pts), field_.dim),
            pts,
            "diffusion divergence",
        )
    elif mode == "finite-difference":
        div = _fd_divergence(field_, pts, t, field_.fd_scale if fd_scale is None else fd_scale)
    else:
        raise ParameterError(f"unknown divergence mode {mode!r}")
    return _squeeze(field_.b(pts, t) - div, single)


def _fd_divergence(field_, pts, t, scale):
    if not scale > 0:
        raise ParameterError("finite-difference step must be positive")
    h = scale * (1.0 + np.linalg.norm(pts, axis=1))
    div = np.zeros_like(pts)
    for j in range(field_.dim):
        shift = np.zeros_like(pts)
        shift[:, j] = h
        dA = field_.A(pts + shift, t)[:, :, j] - field_.A(pts - shift, t)[:, :, j]
        div += dA / (2.0 * h[:, None])
    return div


@dataclass(frozen=True)
class SmoothFunction:
    """A C^{2,1} test function with value/gradient/Hessian evaluators.

    ``time_derivative`` may be omitted for time-independent functions.
    """

    dim: int
    value: Callable
    gradient: Callable
    hessian: Callable
    time_derivative: Optional[Callable] = None
    name: str = ""

    def u(self, x, t=0.0):
        pts, single = as_points(x, self.dim)
        return _squeeze(_require_finite(np.asarray(self.value(pts, t), dtype=float), pts, "test function"), single)

    def u_t(self, x, t=0.0):
        pts, single = as_points(x, self.dim)
        if self.time_derivative is None:
            return _squeeze(np.zeros(len(pts)), single)
        return _squeeze(np.asarray(self.time_derivative(pts, t), dtype=float), single)


def _norms(x):
    return np.linalg.norm(x, axis=1)


def radial_power(dim, r):
    """u = |x|^r (r >= 2)."""

    def value(x, t):
        return _norms(x) ** r

    def gradient(x, t):
        n = _norms(x)
        return (r * n ** (r - 2))[:, None] * x

    def hessian(x, t):
        n = _norms(x)
        eye = np.eye(dim)
        safe = np.where(n > 0, n, 1.0)
        iso = r * np.where(n > 0, safe ** (r - 2), 1.0 if r == 2 else 0.0)
        outer = np.where(n > 0, r * (r - 2) * safe ** (r - 4), 0.0)
        return iso[:, None, None] * eye + outer[:, None, None] * np.einsum("ni,nj->nij", x, x)

    return SmoothFunction(dim, value, gradient, hessian, name=f"|x|^{r}")


def radial_exponential(dim, alpha, r):
    """u = exp(alpha |x|^r)."""

    def value(x, t):
        return np.exp(alpha * _norms(x) ** r)

    def gradient(x, t):
        n = _norms(x)
        return (value(x, t) * alpha * r * n ** (r - 2))[:, None] * x

    def hessian(x, t):
        n = _norms(x)
        safe = np.where(n > 0, n, 1.0)
        iso = alpha * r * np.where(n > 0, safe ** (r - 2), 1.0 if r == 2 else 0.0)
        outer = np.where(
            n > 0,
            alpha * r * (r - 2) * safe ** (r - 4) + (alpha * r) ** 2 * safe ** (2 * r - 4),
            (alpha * r) ** 2 if r == 2 else 0.0,
        )
        xx = np.einsum("ni,nj->nij", x, x)
        return value(x, t)[:, None, None] * (iso[:, None, None] * np.eye(dim) + outer[:, None, None] * xx)

    return SmoothFunction(dim, value, gradient, hessian, name=f"exp({alpha}|x|^{r})")


def bump(center, radius, amplitude=1.0):
    """C-infinity bump amplitude * exp(1 - 1/(1 - |x-c|^2/R^2)), zero outside the ball."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    dim = len(center)
    r2 = float(radius) ** 2

    def _parts(x):
        y = x - center
        s = np.einsum("ni,ni->n", y, y) / r2
        inside = s < 1.0
        q = np.where(inside, 1.0 / np.where(inside, 1.0 - s, 1.0), 0.0)
        phi = np.where(inside, amplitude * np.exp(np.where(inside, 1.0 - q, 0.0)), 0.0)
        return y, inside, q, phi

    def value(x, t):
        return _parts(x)[3]

    def gradient(x, t):
        y, inside, q, phi = _parts(x)
        dphi = -phi * q**2
        return (dphi * 2.0 / r2)[:, None] * y

    def hessian(x, t):
        y, inside, q, phi = _parts(x)
        dphi = -phi * q**2
        d2phi = phi * (q**4 - 2.0 * q**3)
        yy = np.einsum("ni,nj->nij", y, y)
        return (d2phi * 4.0 / r2**2)[:, None, None] * yy + (dphi * 2.0 / r2)[:, None, None] * np.eye(dim)

    return SmoothFunction(dim, value, gradient, hessian, name=f"bump({center.tolist()}, {radius})")


def constant_function(dim, value=1.0):
    return SmoothFunction(
        dim,
        lambda x, t: np.full(len(x), float(value)),
        lambda x, t: np.zeros_like(x),
        lambda x, t: np.zeros((len(x), dim, dim)),
        name=f"const {value}",
    )


def apply_generator(field_, u, x, t=0.0):
    """Lu = a^{ij} d_i d_j u + b^i d_i u + c u, contracted from the supplied derivatives."""
    pts, single = as_points(x, field_.dim)
    hess = _require_finite(np.asarray(u.hessian(pts, t), dtype=float), pts, "test function Hessian")
    grad = _require_finite(np.asarray(u.gradient(pts, t), dtype=float), pts, "test function gradient")
    val = u.u(pts, t)
    out = (
        np.einsum("nij,nij->n", field_.A(pts, t), hess)
        + np.einsum("ni,ni->n", field_.b(pts, t), grad)
        + field_.c(pts, t) * val
    )
    return _squeeze(_require_finite(out, pts, "generator value"), single)


def _radial_parts(field_, x, t):
    pts, single = as_points(x, field_.dim)
    n = _norms(pts)
    if np.any(n == 0):
        raise SingularPointError("expression is singular at x = 0", point=tuple(pts[int(np.argmin(n))]))
    A = field_.A(pts, t)
    trace = np.trace(A, axis1=1, axis2=2)
    axx = np.einsum("ni,nij,nj->n", pts, A, pts)
    bx = np.einsum("ni,ni->n", field_.b(pts, t), pts)
    return pts, single, n, trace, axx, bx, field_.c(pts, t)


def lyapunov_drift_power(field_, r, x, t=0.0):
    """r tr A + r(r-2)|x|^-2 (Ax,x) + r(b,x) + |x|^2 c, so that L|x|^r = |x|^{r-2} times this."""
    if r < 2:
        raise ParameterError("power Lyapunov function needs r >= 2")
    pts, single, n, trace, axx, bx, c = _radial_parts(field_, x, t)
    out = r * trace + r * (r - 2) * axx / n**2 + r * bx + n**2 * c
    return _squeeze(out, single)


def lyapunov_drift_exponential(field_, alpha, r, x, t=0.0):
    """Bracket B(x,t) with L exp(alpha|x|^r) = exp(alpha|x|^r) B(x,t)."""
    if r < 2 or not alpha > 0:
        raise ParameterError("exponential Lyapunov function needs alpha > 0 and r >= 2")
    pts, single, n, trace, axx, bx, c = _radial_parts(field_, x, t)
    ar = alpha * r
    out = (
        ar * n ** (r - 2) * trace
        + ar * (r - 2) * n ** (r - 4) * axx
        + ar**2 * n ** (2 * r - 4) * axx
        + ar * n ** (r - 2) * bx
        + c
    )
    return _squeeze(out, single)


def lyapunov_drift_exponential_gradient(field_, alpha, r, x, t=0.0):
    """alpha * (power expression) + alpha^2 r^2 |x|^{r-2} (Ax, x).

    Times |x|^{r-2} this equals L W + |sqrt(A) grad W|^2 for W = alpha |x|^r.
    """
    if r < 2 or not alpha > 0:
        raise ParameterError("needs alpha > 0 and r >= 2")
    pts, single, n, trace, axx, bx, c = _radial_parts(field_, x, t)
    out = alpha * (r * trace + r * (r - 2) * axx / n**2 + r * bx + n**2 * c) + (alpha * r) ** 2 * n ** (r - 2) * axx
    return _squeeze(out, single)


@dataclass(frozen=True)
class LyapunovExpression:
    kind: str
    r: float
    alpha: float = 1.0

    @classmethod
    def power(cls, r):
        return cls("power", float(r))

    @classmethod
    def exponential(cls, alpha, r):
        return cls("exponential", float(r), float(alpha))

    @classmethod
    def exponential_with_gradient(cls, alpha, r):
        return cls("exponential_with_gradient", float(r), float(alpha))

    def evaluate(self, field_, x, t=0.0):
        if self.kind == "power":
            return lyapunov_drift_power(field_, self.r, x, t)
        if self.kind == "exponential":
            return lyapunov_drift_exponential(field_, self.alpha, self.r, x, t)
        if self.kind == "exponential_with_gradient":
            return lyapunov_drift_exponential_gradient(field_, self.alpha, self.r, x, t)
        raise ParameterError(f"unknown Lyapunov expression {self.kind!r}")

    def lyapunov_value(self, x):
        """W(x) for the Lyapunov function the expression belongs to."""
        n = _norms(np.atleast_2d(x))
        if self.kind == "power":
            return n**self.r
        if self.kind == "exponential":
            return np.exp(self.alpha * n**self.r)
        return self.alpha * n**self.r

    def generator_of_lyapunov(self, field_, x, t=0.0):
        """L W (plus |sqrt(A) grad W|^2 for the gradient variant) recovered from the expression."""
        pts = np.atleast_2d(x)
        n = _norms(pts)
        e = self.evaluate(field_, pts, t)
        if self.kind == "exponential":
            return np.exp(self.alpha * n**self.r) * e
        return n ** (self.r - 2) * e


@dataclass(frozen=True)
class DissipativityCertificate:
    """Sample-based check of  expr(x, t) <= C1 - C2 |x|^k.

    Valid over the sampled set only; ``resolution`` and ``sample_count``
    say which set.
    """

    expression: LyapunovExpression
    k: float
    c1: float
    c2: float
    certified: bool
    worst_point: tuple
    worst_time: float
    min_margin: float
    sample_count: int
    resolution: tuple
    violations: np.ndarray

    @property
    def margin_report(self):
        return {
            "worst_point": list(self.worst_point),
            "worst_time": self.worst_time,
            "min_margin": self.min_margin,
            "sample_count": self.sample_count,
            "resolution": list(self.resolution),
            "scope": "sampled set only",
        }


def _annulus_samples(field_, region, resolution):
    pts, times = _region_samples(field_, region, resolution)
    r_in = 1e-6 * region.radius
    n = _norms(pts)
    pts = pts[n >= r_in]
    if np.linalg.norm(region.center) < region.radius:
        # the removable singularity at 0 is represented by its limit on a tiny sphere
        eye = np.eye(field_.dim) * r_in
        pts = np.vstack([pts, eye, -eye])
    return pts, times


def certify_dissipativity(expr, field_, k, region, resolution=(41, 3), strategy="smallest_c1"):
    """Constants with expr <= C1 - C2|x|^k on samples.

    ``smallest_c1``: C1 = sup expr, then the largest C2 keeping that C1.  When
    the sup sits away from x = 0 this leaves C2 near 0.
    ``tail``: C2 = half the smallest decay rate -expr/|x|^k over the outer half
    of the region, then C1 = sup(expr + C2|x|^k).  Gives usable growth constants
    at the cost of a larger C1.
    """
    if not k > 0:
        raise ParameterError("k must be positive")
    if strategy not in ("smallest_c1", "tail"):
        raise ParameterError(f"unknown certification strategy {strategy!r}")
    pts, times = _annulus_samples(field_, region, resolution)
    n = _norms(pts)
    p = n**k
    lhs = np.stack([expr.evaluate(field_, pts, t) for t in times])  # (n_t, n)
    pp = np.broadcast_to(p, lhs.shape)
    f0 = max(0.0, float(lhs.max()))
    tol = 1e-9 * max(1.0, abs(f0))
    p_max = float(p.max())
    if strategy == "tail":
        outer = n >= 0.5 * (region.radius + np.linalg.norm(region.center))
        allowance = -lhs[:, outer] / pp[:, outer]
        c2 = 0.5 * float(allowance.min())
        certified = c2 * p_max > 1e3 * tol
    else:
        allowance = (f0 + tol - lhs) / np.where(pp > 0, pp, np.inf)
        c2 = float(allowance.min())
        certified = c2 * p_max > 1e3 * tol
        outer = None
    c2 = max(c2, 0.0)
    total = lhs + c2 * pp
    c1 = max(0.0, float(total.max()))
    it, ip = np.unravel_index(int(np.argmax(total)), total.shape)
    margin = c1 - total
    if certified:
        violations = np.empty((0, field_.dim))
    else:
        cand = pts[outer] if strategy == "tail" else pts
        binding = allowance <= 1e3 * tol / p_max
        violations = np.unique(np.broadcast_to(cand, (len(times),) + cand.shape)[binding], axis=0)
    return DissipativityCertificate(
        expression=expr,
        k=float(k),
        c1=c1,
        c2=c2,
        certified=bool(certified),
        worst_point=tuple(float(v) for v in pts[ip]),
        worst_time=float(times[it]),
        min_margin=float(margin.min()),
        sample_count=int(lhs.size),
        resolution=tuple(resolution),
        violations=violations,
    )


@dataclass(frozen=True)
class GrowthCertificate:
    """Sampled C with  L W <= C + C W  (the linear-growth case)."""

    constant: float
    worst_point: tuple
    sample_count: int


def certify_linear_growth(expr, field_, region, resolution=(41, 3)):
    pts, times = _annulus_samples(field_, region, resolution)
    w = expr.lyapunov_value(pts)
    best, where = -math.inf, pts[0]
    for t in times:
        ratio = expr.generator_of_lyapunov(field_, pts, t) / (1.0 + w)
        i = int(np.argmax(ratio))
        if ratio[i] > best:
            best, where = float(ratio[i]), pts[i]
    return GrowthCertificate(max(best, 1e-12), tuple(float(v) for v in where), len(pts) * len(times))
