import math
import threading

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpk_certify.errors import DivergenceError, ParameterError
from fpk_certify.lyapunov import (
    EtaProfile,
    GrowthFunction,
    RateFunctions,
    bound_case_i,
    bound_case_ii,
    bound_case_iii,
    exponential_growth_constants,
    gronwall_envelope,
    log_bound_case_ii,
    moment_envelope_exponential,
    moment_envelope_power,
    power_growth_constants,
    solve_eta,
    tail_integral,
    time_weighted_exponential_envelope,
    time_weighted_shape,
)

# ----------------------------------------------------------------------------- Gronwall


def test_gronwall_examples():
    zero = RateFunctions(lambda s: 0.0, lambda s: 0.0)
    assert gronwall_envelope(zero, 1.0, 5.0) == pytest.approx(5.0)
    one = RateFunctions.constant(1.0)
    assert gronwall_envelope(one, 1.0, 2.0) == pytest.approx(math.e - 1 + 2 * math.e, rel=1e-12)
    k_only = RateFunctions(lambda s: 1.0, lambda s: 0.0)
    assert gronwall_envelope(k_only, 2.0, 0.0) == pytest.approx(2.0)


def test_gronwall_with_time_varying_rates():
    # H = 2s, K = 1:  R = e^{t^2},  Q = e^{t^2} int_0^t e^{-s^2} ds
    rates = RateFunctions(lambda s: 1.0, lambda s: 2.0 * s)
    t = 0.8
    exact = math.exp(t * t) * (math.sqrt(math.pi) / 2 * math.erf(t)) + math.exp(t * t) * 3.0
    assert gronwall_envelope(rates, t, 3.0) == pytest.approx(exact, rel=1e-10)


def test_case_i_examples():
    assert bound_case_i(1.0, math.log(2.0), 3.0) == pytest.approx(8.0)
    assert bound_case_i(2.0, 0.0, 4.0) == 5.0
    assert bound_case_i(1e-300, 1.0, 4.0) == pytest.approx(5.0)


# ----------------------------------------------------------------------------- tail integral and eta


def test_tail_integral_closed_forms():
    assert tail_integral(GrowthFunction.power(1.0, 1.0), 2.0) == pytest.approx(0.5, rel=1e-12)
    assert tail_integral(GrowthFunction.power(1.0, 2.0), 1.0) == pytest.approx(0.5, rel=1e-12)
    G = GrowthFunction.power(0.7, 1.3)
    assert tail_integral(G, 1.0) > tail_integral(G, 2.0)


def test_tail_integral_of_log_family():
    # F(y) = (ln y)^{1-sigma} / (C (sigma - 1)) for y >= 2
    C, sigma = 1.5, 2.5
    G = GrowthFunction.log_power(C, sigma)
    for y in (2.0, 10.0, 1e6):
        assert tail_integral(G, y) == pytest.approx(math.log(y) ** (1 - sigma) / (C * (sigma - 1)), rel=1e-10)


def test_eta_examples():
    assert solve_eta(GrowthFunction.power(1.0, 1.0), 0.5, 2.0) == pytest.approx(1.0, rel=1e-10)
    assert solve_eta(GrowthFunction.power(2.0, 2.0), 0.5, 1.0) == pytest.approx(2.0, rel=1e-10)


def test_eta_log_family_example():
    sigma, C, delta, t = 2.0, 1.0, 0.5, 0.08
    log_exact = -((C * (sigma - 1) * delta * t) ** (-1 / (sigma - 1))) / delta
    assert EtaProfile(GrowthFunction.log_power(C, sigma), delta).log_eta(t) == pytest.approx(log_exact, rel=1e-12)


def test_non_integrable_tail_diverges():
    with pytest.raises(DivergenceError):
        solve_eta(GrowthFunction.log_power(1.0, 1.0), 0.5, 0.1)


@pytest.mark.parametrize("delta", [0.0, 1.0, 1.5, -0.2])
def test_delta_outside_unit_interval(delta):
    with pytest.raises(ParameterError):
        solve_eta(GrowthFunction.power(1.0, 1.0), delta, 1.0)


def _defining_integral(G, delta, log_eta):
    """t = int_0^eta ds / (s G(s^-delta)), with s = e^-w: int_{-ln eta}^inf dw / G(e^{delta w})."""
    mpmath.mp.dps = 30
    f = lambda w: 1 / G.at_log(float(delta * w))
    a = -log_eta
    # the log family switches to its constant floor at z = 2
    kink = math.log(2.0) / delta
    pts = sorted({a, a + 1, a + 10} | ({kink} if kink > a else set()))
    return float(mpmath.quad(f, pts + [mpmath.inf]))


_families = st.one_of(
    st.tuples(st.just("power"), st.floats(0.3, 3.0), st.floats(0.4, 3.0)),
    st.tuples(st.just("log"), st.floats(0.3, 3.0), st.floats(1.5, 3.0)),
)


@settings(max_examples=60, deadline=None)
@given(_families, st.floats(0.2, 0.8), st.floats(-3.0, 0.0))
def test_eta_inverts_its_defining_integral(family, delta, log10_t):
    kind, C, sigma = family
    G = GrowthFunction.power(C, sigma) if kind == "power" else GrowthFunction.log_power(C, sigma)
    t = 10.0**log10_t
    log_eta = EtaProfile(G, delta).log_eta(t)
    assert _defining_integral(G, delta, log_eta) == pytest.approx(t, rel=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(0.4, 3.0), st.floats(0.2, 0.8), st.floats(1e-4, 1.0), st.floats(1.01, 3.0))
def test_eta_is_increasing(C, sigma, delta, t, factor):
    G = GrowthFunction.power(C, sigma)
    assert solve_eta(G, delta, t * factor) > solve_eta(G, delta, t)


def test_eta_integral_differentiates_to_eta():
    prof = EtaProfile(GrowthFunction.power(1.3, 1.7), 0.4)
    t = 0.5
    errors = []
    for h in (1e-2, 5e-3):
        d = (prof.eta_integral(t + h) - prof.eta_integral(t - h)) / (2 * h)
        errors.append(abs(d - prof.eta(t)))
    assert errors[1] < errors[0]
    assert 3.0 < errors[0] / errors[1] < 5.0


def test_profile_cache_is_thread_safe():
    prof = EtaProfile(GrowthFunction.power(1.0, 2.0), 0.5)
    ts = np.geomspace(1e-3, 1.0, 20)
    out = {}

    def work(k):
        out[k] = [prof.eta(t) for t in ts]

    threads = [threading.Thread(target=work, args=(k,)) for k in range(4)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert all(out[k] == out[0] for k in out)


# ----------------------------------------------------------------------------- case (ii) / (iii)


def test_case_ii_examples():
    G = GrowthFunction.power(1.0, 1.0)
    assert bound_case_ii(G, 0.5, 0.0, 1.0) == pytest.approx(4.0, rel=1e-10)
    assert bound_case_ii(G, 0.5, 0.0, 2.0) == pytest.approx(2.0, rel=1e-10)
    assert bound_case_ii(G, 0.5, 0.0, 2.0) < bound_case_ii(G, 0.5, 0.0, 1.0)


def test_case_ii_integral_term_closed_form():
    # G = z: eta = (t/2)^2, (C/eta) int_0^t eta = C t / 3
    G = GrowthFunction.power(1.0, 1.0)
    t, C = 0.7, 2.0
    assert bound_case_ii(G, 0.5, C, t) - bound_case_ii(G, 0.5, 0.0, t) == pytest.approx(C * t / 3, rel=1e-9)


def test_case_iii_examples():
    G = GrowthFunction.power(1.0, 1.0)
    assert bound_case_iii(G, 0.5, 0.0, 2.0) == pytest.approx(math.e**2, rel=1e-10)
    assert bound_case_iii(G, 0.5, 0.0, 1e-10) == pytest.approx(1.0, abs=1e-4)
    assert bound_case_iii(G, 0.5, 1.0, 0.5) > bound_case_iii(G, 0.5, 0.0, 0.5)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.01, 5.0), st.floats(1e-3, 1.0))
def test_bounds_monotone_in_constant(c_small, extra, t):
    G = GrowthFunction.power(1.0, 1.5)
    c_big = c_small + extra
    assert bound_case_i(c_big, t, 1.0) >= bound_case_i(c_small, t, 1.0)
    assert log_bound_case_ii(G, 0.5, c_big, t) > log_bound_case_ii(G, 0.5, c_small, t)
    assert bound_case_iii(G, 0.5, c_big, t) > bound_case_iii(G, 0.5, c_small, t)


# ----------------------------------------------------------------------------- example envelopes


def _slope(fn, ts):
    return np.polyfit(np.log(ts), np.log([fn(t) for t in ts]), 1)[0]


def test_power_envelope_slope_and_large_k():
    ts = np.geomspace(1e-4, 1e-2, 15)
    assert _slope(lambda t: moment_envelope_power(2, 4, 1.0, 0.5, t), ts) == pytest.approx(-1.0, abs=1e-3)
    assert abs(_slope(lambda t: moment_envelope_power(2, 100, 1.0, 0.5, t), ts)) < 0.05


def test_power_envelope_scales_with_constant():
    # eta scales like C3^{1/(delta sigma)} with everything else fixed
    r, k, delta, t = 2, 4, 0.5, 0.3
    sigma = (k - 2) / r
    e1 = EtaProfile(GrowthFunction.power(1.0, sigma), delta).eta(t)
    e2 = EtaProfile(GrowthFunction.power(2.0, sigma), delta).eta(t)
    assert e2 / e1 == pytest.approx(2.0 ** (1 / (delta * sigma)), rel=1e-9)


@pytest.mark.parametrize("r, k, q", [(3, 6, 1.0), (4, 6, 2.0), (3, 4, 3.0)])
def test_exponential_envelope_exponent(r, k, q):
    ts = np.geomspace(1e-4, 1e-3, 12)
    logs = [moment_envelope_exponential(r, k, 1.0, 1.0, 0.5, t).log_value for t in ts]
    assert -np.polyfit(np.log(ts), np.log(logs), 1)[0] == pytest.approx(q, rel=1e-2)
    assert moment_envelope_exponential(r, k, 1.0, 1.0, 0.5, 1e-3).exponent == pytest.approx(q)


def test_exponential_envelope_flags_constant_extension():
    assert moment_envelope_exponential(4, 6, 1.0, 1.0, 0.5, 50.0).constant_extension
    assert not moment_envelope_exponential(4, 6, 1.0, 1.0, 0.5, 1e-3).constant_extension


@pytest.mark.parametrize("r, k", [(3, 3), (2, 4), (3, 2.5)])
def test_exponential_envelope_hypotheses(r, k):
    with pytest.raises(ParameterError, match="Let r>2 and k>r"):
        moment_envelope_exponential(r, k, 1.0, 1.0, 0.5, 0.1)


def test_time_weighted_exponents_and_shape():
    env = time_weighted_exponential_envelope(3, 5, 1.0, 2.0, 1.0, 0.5)
    assert env.exponents == pytest.approx((1.0, 3.0))
    assert env.delta == pytest.approx(0.5)
    # eta(t) = c4 t^beta exactly for power growth
    e2 = time_weighted_exponential_envelope(3, 5, 1.0, 2.0, 1.0, 0.1)
    assert e2.c4 == pytest.approx(env.c4, rel=1e-9)
    assert time_weighted_shape(1.5, 0.0, (1.0, 3.0), 0.3) == 1.5
    beta = 3 / (5 - 2) + 1
    small = time_weighted_exponential_envelope(3, 5, 1.0, beta, 1.0, 1e-8)
    assert small.value == pytest.approx(1.0, abs=1e-6)


def test_time_weighted_needs_large_beta():
    with pytest.raises(ParameterError):
        time_weighted_exponential_envelope(3, 5, 1.0, 1.0, 1.0, 0.5)


def test_power_growth_constants_absorb_lower_order_term():
    add, cg = power_growth_constants(3.0, 2.0, 3.0, 4.0)
    rho = np.linspace(0, 10, 2001)
    lhs = rho ** (3 - 2) * (3.0 - 2.0 * rho**4)
    assert np.all(lhs <= add - cg * rho ** (3 + 4 - 2) + 1e-9)
    assert power_growth_constants(2.0, 2.0, 2.0, 4.0) == (2.0, 2.0)


def test_exponential_growth_constants_majorise():
    c1, c2, alpha, r, k = 1.8, 0.3, 1 / 3, 3.0, 4.0
    add, cg = exponential_growth_constants(c1, c2, alpha, r, k)
    G = GrowthFunction.log_power(cg, k / r)
    for rho in np.linspace(0, 6, 601):
        w = alpha * rho**r
        assert math.exp(w) * (c1 - c2 * rho**k + G.at_log(w)) <= add * (1 + 1e-9)
