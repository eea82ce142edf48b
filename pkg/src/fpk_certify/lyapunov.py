"""Gronwall envelopes, the implicit time change eta(t) and the moment bounds built on it.

eta is defined by  t = int_0^eta ds / (s G(s^-delta)).  With u = s^-delta this
is  t = F(eta^-delta) / delta,  F(y) = int_y^inf du / (u G(u)),  a proper tail
integral.  Everything below works with ``s = ln y`` so that eta values far
below the double range (the log-power family gives exp(-1/t)-type curves)
stay representable as ``log eta = -s / delta``.
"""

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize

from .errors import DivergenceError, OverflowBoundError, ParameterError, QuadratureError, RangeError

QUAD_RTOL = 1e-10
QUAD_ATOL = 1e-300
TAIL_RTOL = 1e-12
ROOT_XTOL = 1e-12
ROOT_MAXITER = 200
LOG_FLOOR = 2.0  # constant extension threshold of the log-power family
MAX_EXP = 709.0


def _quad(f, a, b, rtol=QUAD_RTOL, atol=QUAD_ATOL, points=None):
    res = integrate.quad(f, a, b, epsrel=rtol, epsabs=atol, limit=200, full_output=1, points=points)
    if len(res) > 3 and res[2].get("neval", 0) and res[3]:
        msg = res[3]
        # roundoff-limited answers are still accurate to well below our tolerances
        if "roundoff" not in msg:
            raise QuadratureError(f"quadrature failed on [{a}, {b}]: {msg.splitlines()[0]}")
    return res[0]


# ----------------------------------------------------------------------------------------
# Gronwall envelope
# ----------------------------------------------------------------------------------------


@dataclass(frozen=True)
class RateFunctions:
    """Rates in  d_t V + L V <= K(t) + H(t) V."""

    K: Callable[[float], float]
    H: Callable[[float], float]

    @classmethod
    def constant(cls, k, h=None):
        h = k if h is None else h
        return cls(lambda s: k, lambda s: h)

    def _checked(self, fn, name):
        def g(s):
            v = float(fn(s))
            if not v >= 0 or not math.isfinite(v):
                raise ParameterError(f"rate {name}({s}) = {v} must be finite and nonnegative")
            return v

        return g


def gronwall_envelope(rates, t, initial_moment, rtol=QUAD_RTOL):
    """Q(t) + R(t) m with R = exp(int_0^t H) and Q = R int_0^t K/R."""
    if not t > 0:
        raise ParameterError("t must be positive")
    if initial_moment < 0:
        raise ParameterError("initial moment must be nonnegative")
    K = rates._checked(rates.K, "K")
    H = rates._checked(rates.H, "H")
    int_h = _quad(H, 0.0, t, rtol)

    def integrand(s):
        return K(s) * math.exp(-_quad(H, 0.0, s, rtol)) if s > 0 else K(s)

    try:
        R = math.exp(int_h)
    except OverflowError:
        raise OverflowBoundError("R(t) = exp(int H) overflows") from None
    Q = R * _quad(integrand, 0.0, t, rtol)
    return Q + R * initial_moment


def bound_case_i(C, t, initial_moment):
    """exp(Ct) (1 + int W d nu)."""
    if C < 0 or t < 0 or initial_moment < 0:
        raise ParameterError("case (i) needs C >= 0, t >= 0 and a nonnegative initial moment")
    try:
        return math.exp(C * t) * (1.0 + initial_moment)
    except OverflowError:
        raise OverflowBoundError(f"exp({C} * {t}) overflows") from None


# ----------------------------------------------------------------------------------------
# Growth functions and the tail integral F
# ----------------------------------------------------------------------------------------


def _safe_exp(v):
    return math.exp(v) if v < MAX_EXP else math.inf


@dataclass(frozen=True)
class GrowthFunction:
    """Positive, continuous, increasing G with  int_1^inf ds/(s G(s)) < inf.

    ``log_form(v)`` must return G(exp(v)); families supply it in closed form
    so that arguments like exp(1e6) never have to be materialised.
    """

    G: Callable[[float], float]
    log_form: Optional[Callable[[float], float]] = None
    name: str = "G"
    floor: Optional[float] = None  # arguments below this use a constant extension
    params: dict = field(default_factory=dict, compare=False)

    def at_log(self, v):
        if self.log_form is not None:
            return self.log_form(v)
        return self.G(_safe_exp(v))

    def __call__(self, z):
        return self.G(z)

    @classmethod
    def power(cls, C, sigma):
        """G(z) = C z^sigma."""
        if not (C > 0 and sigma > 0):
            raise ParameterError("power growth needs C > 0 and sigma > 0")

        def log_form(v):
            e = sigma * v + math.log(C)
            return _safe_exp(e) if e > -745 else 0.0

        return cls(lambda z: C * z**sigma, log_form, f"{C}*z^{sigma}", params={"C": C, "sigma": sigma})

    @classmethod
    def log_power(cls, C, sigma, floor=LOG_FLOOR):
        """G(z) = C (ln z)^sigma for z >= floor, extended by the constant G(floor) below."""
        if not (C > 0 and sigma > 0 and floor > 1):
            raise ParameterError("log-power growth needs C > 0, sigma > 0 and floor > 1")
        lf = math.log(floor)

        def log_form(v):
            return C * max(v, lf) ** sigma

        def G(z):
            return C * math.log(max(z, floor)) ** sigma

        return cls(G, log_form, f"{C}*ln(z)^{sigma}", floor=floor, params={"C": C, "sigma": sigma})

    def check(self, grid=None):
        """Positivity/monotonicity on a sample grid plus a Cauchy test of the tail."""
        grid = np.geomspace(1e-6, 1e6, 241) if grid is None else np.asarray(grid)
        vals = np.array([self.G(z) for z in grid])
        if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
            raise ParameterError(f"{self.name} must be positive and finite on the sample grid")
        if np.any(np.diff(vals) < -1e-12 * np.abs(vals[1:])):
            raise ParameterError(f"{self.name} is not increasing on the sample grid")
        tail_integral_log(self, 0.0)
        return True


def _tail_piece(h, a, b):
    return _quad(h, a, b, rtol=TAIL_RTOL)


def tail_integral_log(G, s):
    """F(e^s) = int_s^inf dv / G(e^v).

    Below v = 1 the integral is taken directly in v; above, w = ln v turns
    algebraic tails (log-power family) into exponential ones.  Upper limits
    double until an increment drops below TAIL_RTOL of the running total.
    """
    total = 0.0
    if s < 1.0:
        total += _tail_piece(lambda v: 1.0 / G.at_log(v), s, 1.0)
        w0 = 0.0
    else:
        w0 = math.log(s)

    def h(w):
        v = math.exp(w)
        g = G.at_log(v)
        return v / g if g < math.inf else 0.0

    width = 1.0
    total += _tail_piece(h, w0, w0 + width)
    # v = e^w must stay representable, which caps w at MAX_EXP
    while w0 + 2.0 * width <= MAX_EXP:
        inc = _tail_piece(h, w0 + width, w0 + 2.0 * width)
        total += inc
        width *= 2.0
        if abs(inc) <= TAIL_RTOL * abs(total):
            return total
    raise DivergenceError(f"tail integral of 1/(u {G.name}(u)) does not converge")


def tail_integral(G, y):
    """F(y) = int_y^inf du / (u G(u)) for y > 0."""
    if not y > 0:
        raise ParameterError("tail integral needs y > 0")
    return tail_integral_log(G, math.log(y))


# ----------------------------------------------------------------------------------------
# eta(t)
# ----------------------------------------------------------------------------------------


def _check_delta(delta):
    if not 0 < delta < 1:
        raise ParameterError(f"delta = {delta} must lie in (0, 1)")


def solve_log_y(G, delta, t):
    """s = ln(eta^-delta) solving  F(e^s) = delta t."""
    _check_delta(delta)
    if not t > 0:
        raise ParameterError("t must be positive")
    target = delta * t

    def f(s):
        return tail_integral_log(G, s) - target

    s_min = -MAX_EXP * delta  # eta = exp(-s/delta) must stay below the double range
    lo = hi = 0.0
    f0 = f(0.0)
    if f0 == 0:
        return 0.0
    step = 1.0
    if f0 > 0:
        for _ in range(ROOT_MAXITER):
            hi = lo + step
            if f(hi) < 0:
                break
            lo, step = hi, 2.0 * step
        else:
            raise RangeError("could not bracket eta from above", sup_t=None)
    else:
        for _ in range(ROOT_MAXITER):
            lo = max(hi - step, s_min)
            if f(lo) > 0:
                break
            if lo == s_min:
                raise RangeError(
                    f"t = {t} is beyond the representable range of eta",
                    sup_t=tail_integral_log(G, s_min) / delta,
                )
            hi, step = lo, 2.0 * step
    return optimize.brentq(f, lo, hi, xtol=ROOT_XTOL, rtol=1e-15, maxiter=ROOT_MAXITER)


def solve_eta(G, delta, t):
    """eta(t) with  t = int_0^eta ds / (s G(s^-delta))."""
    return math.exp(-solve_log_y(G, delta, t) / delta)


class EtaProfile:
    """Solved eta curve for fixed (G, delta) with a per-instance cache.

    The cache is guarded by a lock so concurrent readers are safe.
    """

    def __init__(self, G, delta=0.5):
        _check_delta(delta)
        self.G = G
        self.delta = float(delta)
        self._cache = {}
        self._lock = threading.Lock()

    def log_y(self, t):
        t = float(t)
        with self._lock:
            hit = self._cache.get(t)
        if hit is None:
            hit = solve_log_y(self.G, self.delta, t)
            with self._lock:
                self._cache[t] = hit
        return hit

    def log_eta(self, t):
        return -self.log_y(t) / self.delta

    def eta(self, t):
        return math.exp(self.log_eta(t))

    def constant_extension(self, t):
        """True when eta(t)^-delta falls below the family's floor (constant-extended G)."""
        if self.G.floor is None:
            return False
        return self.log_y(t) < math.log(self.G.floor)

    def integral_ratio(self, t):
        """(1/eta(t)) int_0^t eta(s) ds.

        Since dt = d eta / (eta G(eta^-delta)),  int_0^t eta = int_0^eta(t) d e / G(e^-delta);
        with e = eta(t) u this is eta(t) int_0^1 du / G(y u^-delta).
        """
        s = self.log_y(t)
        d = self.delta

        def f(u):
            return 1.0 / self.G.at_log(s - d * math.log(u))

        return _quad(f, 0.0, 1.0)

    def eta_integral(self, t):
        return self.eta(t) * self.integral_ratio(t)


# ----------------------------------------------------------------------------------------
# Bounds from the eta profile
# ----------------------------------------------------------------------------------------


def _profile(G, delta):
    return G if isinstance(G, EtaProfile) else EtaProfile(G, delta)


def log_bound_case_ii(G, delta, C, t):
    prof = _profile(G, delta)
    if C < 0:
        raise ParameterError("C must be nonnegative")
    first = prof.log_y(t) - math.log(1.0 - prof.delta)
    if C == 0:
        return first
    # separate logs: C * ratio can underflow for subnormal C
    second = math.log(C) + math.log(prof.integral_ratio(t))
    return float(np.logaddexp(first, second))


def bound_case_ii(G, delta, C, t):
    """1/((1-delta) eta^delta) + (C/eta) int_0^t eta."""
    log_v = log_bound_case_ii(G, delta, C, t)
    if log_v > MAX_EXP:
        raise OverflowBoundError("case (ii) bound overflows; use log_bound_case_ii")
    return math.exp(log_v)


def log_bound_case_iii(G, delta, C, t):
    prof = _profile(G, delta)
    if C < 0:
        raise ParameterError("C must be nonnegative")
    d = prof.delta
    log_eta = prof.log_eta(t)
    return math.exp((1.0 - d) * log_eta) / (1.0 - d) + C * math.exp(log_eta) * prof.integral_ratio(t)


def bound_case_iii(G, delta, C, t):
    """exp((1-delta)^-1 eta^(1-delta) + C int_0^t eta): bound on int exp(eta(t) W) d mu_t."""
    e = log_bound_case_iii(G, delta, C, t)
    if e > MAX_EXP:
        raise OverflowBoundError("case (iii) bound overflows")
    return math.exp(e)


# ----------------------------------------------------------------------------------------
# Moment envelopes for power, exponential and time-weighted Lyapunov functions
# ----------------------------------------------------------------------------------------


def power_growth_constants(c1, c2, r, k):
    """(additive C, G coefficient) with |x|^{r-2}(C1 - C2|x|^k) <= C - c_G |x|^{r+k-2}.

    For r = 2 this is (C1, C2); for r > 2 half of C2 is spent absorbing the
    C1 |x|^{r-2} term and the additive constant is its closed-form sup.
    """
    if r == 2:
        return float(c1), float(c2)
    cg = c2 / 2.0
    rho_k = 2.0 * c1 * (r - 2) / (c2 * (r + k - 2))
    rho = rho_k ** (1.0 / k)
    add = c1 * rho ** (r - 2) - cg * rho ** (r + k - 2)
    return max(float(add), 1e-12), float(cg)


def exponential_growth_constants(c1, c2, alpha, r, k, floor=LOG_FLOOR):
    """(additive C, c_G) for W = exp(alpha|x|^r), G(z) = c_G |ln z|^{k/r} (z >= floor).

    Needs  W (C1 - C2|x|^k) + W G(W) <= C;  c_G = C2 / (2 alpha^{k/r}) and C is
    the sup of the left side, found on a dense radial grid then polished.
    """
    sigma = k / r
    cg = c2 / (2.0 * alpha**sigma)
    G = GrowthFunction.log_power(cg, sigma, floor)

    def log_lhs(rho):
        w_log = alpha * rho**r
        bracket = c1 - c2 * rho**k + G.at_log(w_log)
        return w_log + math.log(bracket) if bracket > 0 else -math.inf

    # beyond this radius the bracket is negative for good
    rho_max = (2.0 * (c1 + G.at_log(0.0)) / c2 + 1.0) ** (1.0 / k) + 1.0
    grid = np.linspace(0.0, rho_max, 4001)
    vals = np.array([log_lhs(v) for v in grid])
    if not np.isfinite(vals.max()):
        return 1e-12, float(cg)
    i = int(np.argmax(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(lambda v: -log_lhs(v), bounds=(a, b), method="bounded", options={"xatol": 1e-12})
    best = max(float(vals[i]), -float(res.fun))
    if best > MAX_EXP:
        raise OverflowBoundError(f"additive constant exp({best:.4g}) overflows")
    return max(math.exp(best), 1e-12), float(cg)


def moment_envelope_power(r, k, c3, delta, t, additive=None):
    """Bound on int |x|^r d mu_t under L|x|^r <= C - c3 |x|^{r+k-2}:  case (ii) with G = c3 z^sigma."""
    if not (k > 2 and r >= 2):
        raise ParameterError("power moment envelope needs k > 2 and r >= 2")
    sigma = (k - 2.0) / r
    G = GrowthFunction.power(c3, sigma)
    return bound_case_ii(G, delta, c3 if additive is None else additive, t)


@dataclass(frozen=True)
class ExponentialMoment:
    value: float
    log_value: float
    eta: float
    log_eta: float
    constant_extension: bool
    sigma: float
    exponent: float  # r / (k - r), the blow-up power of t^-1 inside the exponential


def moment_envelope_exponential(r, k, alpha, c3, delta, t, additive=None):
    """Bound on int exp(alpha|x|^r) d mu_t via case (ii) with G = c3 |ln z|^{k/r} (z >= 2)."""
    if not (r > 2 and k > r):
        raise ParameterError("Let r>2 and k>r")
    if not alpha > 0:
        raise ParameterError("alpha must be positive")
    sigma = k / r
    prof = EtaProfile(GrowthFunction.log_power(c3, sigma), delta)
    log_v = log_bound_case_ii(prof, delta, c3 if additive is None else additive, t)
    log_eta = prof.log_eta(t)
    return ExponentialMoment(
        value=math.exp(log_v) if log_v < MAX_EXP else math.inf,
        log_value=log_v,
        eta=math.exp(log_eta),
        log_eta=log_eta,
        constant_extension=prof.constant_extension(t),
        sigma=sigma,
        exponent=r / (k - r),
    )


@dataclass(frozen=True)
class TimeWeightedEnvelope:
    value: float
    log_value: float
    exponents: tuple  # (beta - r/(k-2), beta + 1)
    delta: float
    c4: float  # eta(t) = c4 t^beta
    gamma1: float
    gamma2: float
    weight_rate: float  # the envelope controls int exp(weight_rate t^beta |x|^r) d mu_t


def time_weighted_shape(gamma1, gamma2, exponents, t):
    """gamma1 exp(gamma2 (t^e1 + t^e2))."""
    e1, e2 = exponents
    return gamma1 * math.exp(gamma2 * (t**e1 + t**e2))


def time_weighted_exponential_envelope(r, k, alpha, beta, c3, t, additive=None):
    """Case (iii) with W = alpha|x|^r and delta chosen so that eta(t) = C4 t^beta.

    Needs beta > r/(k-2); then delta = r/(beta (k-2)) lies in (0, 1).
    """
    if not (r > 2 and k > 2 and alpha > 0):
        raise ParameterError("time-weighted envelope needs r > 2, k > 2, alpha > 0")
    if not beta > r / (k - 2.0):
        raise ParameterError(f"beta = {beta} must exceed r/(k-2) = {r / (k - 2.0)}")
    sigma = (k - 2.0) / r
    delta = r / (beta * (k - 2.0))
    G = GrowthFunction.power(c3 * alpha ** (-(1.0 + sigma) / sigma), sigma)
    C = c3 if additive is None else additive
    prof = EtaProfile(G, delta)
    log_v = log_bound_case_iii(prof, delta, C, t)
    c4 = math.exp(prof.log_eta(t) - beta * math.log(t))
    gamma2 = max(c4 ** (1.0 - delta) / (1.0 - delta), C * c4 / (beta + 1.0))
    return TimeWeightedEnvelope(
        value=math.exp(log_v) if log_v < MAX_EXP else math.inf,
        log_value=log_v,
        exponents=(beta - r / (k - 2.0), beta + 1.0),
        delta=delta,
        c4=c4,
        gamma1=1.0,
        gamma2=gamma2,
        weight_rate=alpha * c4,
    )
