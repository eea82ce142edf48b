"""Acceptance gate: one test per criterion; conftest prints a PASS/FAIL line for each."""

import filecmp
import itertools
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from fpk_certify.cli import main
from fpk_certify.coefficients import CoefficientField, bump
from fpk_certify.lyapunov import (
    GrowthFunction,
    RateFunctions,
    bound_case_i,
    gronwall_envelope,
    moment_envelope_exponential,
    moment_envelope_power,
    solve_eta,
    EtaProfile,
)
from fpk_certify.presets import killing_ou, mild_growth_killing, ornstein_uhlenbeck, polynomial_drift
from fpk_certify.solver import (
    Grid,
    InitialMeasure,
    SolverConfig,
    interpolate,
    l1_distance,
    mass_balance_residual,
    project_initial_measure,
    run,
    weak_identity_residual,
    weighted_moment,
)
from fpk_certify.verifier import (
    EnvelopeSpec,
    PhiWeight,
    blowup_exponent,
    check_envelope,
    decay_exponent_estimate,
    envelope_channel,
    fit_envelope_constants,
    reliable_times,
    scaled_field,
    transformed_field,
)


@pytest.mark.criterion(1, "eta matches the power-family closed form")
def test_eta_power_family_closed_form():
    start = time.perf_counter()
    worst = 0.0
    ts = np.geomspace(1e-6, 1.0, 10)
    for C, sigma, delta in itertools.product((0.5, 1.0, 3.0), (0.5, 1.0, 2.5), (0.2, 0.5, 0.8)):
        G = GrowthFunction.power(C, sigma)
        for t in ts:
            exact = (C * sigma * delta * t) ** (1.0 / (delta * sigma))
            worst = max(worst, abs(solve_eta(G, delta, t) / exact - 1.0))
    elapsed = time.perf_counter() - start
    assert worst <= 1e-8
    assert elapsed < 5.0


@pytest.mark.criterion(2, "eta matches the log-family closed form")
def test_eta_log_family_closed_form():
    delta = 0.5
    checked = 0
    for sigma, C in itertools.product((1.5, 2.0, 3.0), (0.5, 1.0, 2.0)):
        prof = EtaProfile(GrowthFunction.log_power(C, sigma), delta)
        for t in np.geomspace(1e-4, 1.0, 9):
            log_exact = -((C * (sigma - 1) * delta * t) ** (-1.0 / (sigma - 1))) / delta
            if -delta * log_exact < math.log(2.0):
                continue  # constant-extension regime
            # relative 1e-6 on eta is absolute 1e-6 on log eta
            err = abs(prof.log_eta(t) - log_exact)
            assert err <= max(1e-6, 1e-15 * abs(log_exact))
            checked += 1
    assert checked >= 30


@pytest.mark.criterion(3, "Gronwall envelope and case (i) closed forms")
def test_gronwall_constant_rates():
    rng = np.random.default_rng(3)
    for C, t, m in zip(rng.uniform(0.1, 3.0, 20), rng.uniform(0.01, 2.0, 20), rng.uniform(0.0, 5.0, 20)):
        exact = math.exp(C * t) - 1.0 + math.exp(C * t) * m
        got = gronwall_envelope(RateFunctions.constant(C), t, m)
        assert abs(got / exact - 1.0) <= 1e-10
        assert bound_case_i(C, t, m) == math.exp(C * t) * (1.0 + m)


@pytest.mark.criterion(4, "moment-envelope exponents")
def test_moment_envelope_exponents():
    t = np.geomspace(1e-4, 1e-2, 15)
    vals = [moment_envelope_power(2, 4, 1.0, 0.5, s) for s in t]
    est = decay_exponent_estimate(t, vals, "power")
    assert abs(est.exponent - 1.0) <= 1e-3

    t = np.geomspace(1e-4, 1e-3, 15)
    logs = [moment_envelope_exponential(3, 6, 1.0, 1.0, 0.5, s).log_value for s in t]
    est = decay_exponent_estimate(t, logs, "loglog", log_values=True)
    assert abs(est.exponent - 1.0) <= 1e-2


@pytest.mark.criterion(5, "OU relaxes to the standard Gaussian")
def test_ou_stationary_density():
    start = time.perf_counter()
    grid = Grid((8.0,), (512,))
    state = project_initial_measure(InitialMeasure.gaussian(1.0, 0.5), grid)
    final = run(state, ornstein_uhlenbeck(1), SolverConfig(end_time=10.0)).final
    x = grid.centers()[:, 0]
    exact = np.exp(-0.5 * x**2) / math.sqrt(2 * math.pi)
    assert l1_distance(final.values, exact, grid) <= 1e-3
    assert abs(weighted_moment(final, lambda p: p[:, 0] ** 2) - 1.0) <= 2e-3
    assert time.perf_counter() - start < 60.0


@pytest.mark.criterion(6, "mass identity with killing, second order in dt")
def test_mass_identity_killing():
    grid = Grid((5.0,), (100,))
    snaps = tuple(np.linspace(0.1, 1.0, 10))
    worst = []
    for dt in (1e-3, 5e-4):
        state = project_initial_measure(InitialMeasure.gaussian(1.0, 0.25), grid)
        res = run(state, killing_ou(4.0), SolverConfig(dt=dt, end_time=1.0, snapshot_times=snaps))
        worst.append(float(np.abs(mass_balance_residual(res.ledger)).max()))
    assert max(worst) <= 1e-6
    assert 3.5 <= worst[0] / worst[1] <= 4.5


def _weak_field():
    def a(x, t):
        return 1.0 + 0.5 * x[:, 0] ** 2 / (1.0 + x[:, 0] ** 2)

    def grad_a(x, t):
        return (x[:, 0] / (1.0 + x[:, 0] ** 2) ** 2)[:, None]

    return CoefficientField.isotropic(1, a, lambda x, t: -x, lambda x, t: -x[:, 0] ** 2, grad_a=grad_a)


@pytest.mark.criterion(7, "weak identity residual converges at second order")
def test_weak_identity_refinement():
    field_ = _weak_field()
    tests = [bump((0.0,), 3.0), bump((0.5,), 2.5), bump((-0.5,), 3.5)]
    residuals = []
    for N, dt in ((160, 5e-4), (320, 1.25e-4)):
        grid = Grid((5.0,), (N,))
        state = project_initial_measure(InitialMeasure.gaussian(0.5, 0.5), grid)
        res = run(state, field_, SolverConfig(dt=dt, end_time=0.2, snapshot_every_step=True))
        residuals.append(np.array([weak_identity_residual(res.snapshots, field_, u) for u in tests]))
    ratios = residuals[0] / residuals[1]
    assert np.all((ratios >= 3.5) & (ratios <= 4.5)), ratios


@pytest.mark.criterion(8, "numerical second moment stays under the analytic envelope")
def test_moment_below_envelope():
    field_ = polynomial_drift(1, 4.0)
    grid = Grid((8.0,), (256,))
    times = tuple(np.geomspace(0.01, 1.0, 25))
    # L|x|^2 = 2 - 2|x|^4, so C1 = C2 = 2 and the growth function is 2 z^1
    for x0 in (0.0, 2.0, 4.0):
        state = project_initial_measure(InitialMeasure.point_mass(x0), grid)
        res = run(state, field_, SolverConfig(end_time=1.0, snapshot_times=times))
        for snap in res.snapshots[1:]:
            m = float((grid.centers()[:, 0] ** 2 * snap.values).sum() * grid.cell_volume)
            assert m <= moment_envelope_power(2, 4, 2.0, 0.5, snap.t, additive=2.0)


@pytest.mark.criterion(9, "blow-up envelope fits, checks and reproduces q")
def test_envelope_verification_blowup():
    field_ = mild_growth_killing(3.0, 4.0, 0.5)
    times = tuple(np.geomspace(0.01, 1.0, 41))
    spec = EnvelopeSpec("blowup", 0.25, 3.0, q=3.0)
    uniform = InitialMeasure.grid_function(lambda p: np.ones(len(p)))

    def solve(N, halve=False):
        grid = Grid((8.0,), (N,))
        cfg = SolverConfig(end_time=1.0, snapshot_times=times)
        res = run(project_initial_measure(uniform, grid), field_, cfg)
        if halve:
            res = run(project_initial_measure(uniform, grid), field_, replace(cfg, dt=res.dt / 2))
        return res

    coarse, half, fine = solve(512), solve(512, True), solve(1024)
    ch = envelope_channel(coarse.snapshots, spec)
    ok = reliable_times(ch, envelope_channel(half.snapshots, spec))
    window = (ok[0], 1.0)
    fit = fit_envelope_constants(coarse.snapshots, spec, window)
    assert fit.success
    assert check_envelope(coarse.snapshots, fit.envelope, 0.25, window).passed
    assert check_envelope(fine.snapshots, fit.envelope, 0.25, window).passed
    est = blowup_exponent([c for c in ch if c.t in ok], fit.envelope.log_c4)
    assert abs(est.exponent - 3.0) <= 0.15 * 3.0


@pytest.mark.criterion(10, "weight transform reproduces Phi rho")
def test_phi_conjugation():
    ou = ornstein_uhlenbeck(1)
    phi = PhiWeight.radial_exponential(1, 0.25, 2)
    conj = transformed_field(ou, phi)

    def density(p):
        return np.exp(-((p[:, 0] - 1.0) ** 2) / (2 * 0.5)) / math.sqrt(2 * math.pi * 0.5)

    def solve(field_, N, init):
        grid = Grid((8.0,), (N,))
        return grid, run(project_initial_measure(init, grid), field_, SolverConfig(end_time=1.0)).final.values

    for N in (128, 256):
        grid, rho = solve(ou, N, InitialMeasure.gaussian(1.0, 0.5))
        grid2, rho2 = solve(ou, 2 * N, InitialMeasure.gaussian(1.0, 0.5))
        x = grid.centers()
        weight = phi.function.u(x)
        _, psi = solve(conj, N, InitialMeasure.grid_function(lambda p: phi.function.u(p) * density(p)))
        discretisation = l1_distance(weight * rho, weight * interpolate(rho2, grid2, x), grid)
        assert l1_distance(psi, weight * rho, grid) <= 2.0 * discretisation


@pytest.mark.criterion(11, "scaled solve maps back onto the direct solve")
def test_scaling_covariance():
    field_ = mild_growth_killing(3.0, 4.0, 0.5)
    x0, t0, T = 0.5, 0.25, 0.5
    sq = math.sqrt(t0)

    def init(p):
        return np.exp(-((p[:, 0] - 0.5) ** 2) / 0.6) / math.sqrt(0.6 * math.pi)

    def direct(N):
        grid = Grid((5.0,), (N,))
        state = project_initial_measure(InitialMeasure.grid_function(init), grid)
        return grid, run(state, field_, SolverConfig(end_time=T)).final.values

    scaled = scaled_field(field_, [x0], t0)
    for N in (100, 200):
        grid, rho = direct(N)
        grid2, rho2 = direct(2 * N)
        x = grid.centers()
        gs = Grid((9.0,), (int(1.3 * N),))
        state = project_initial_measure(InitialMeasure.grid_function(lambda y: sq * init(x0 + sq * y)), gs)
        rs = run(state, scaled, SolverConfig(end_time=T / t0)).final.values
        back = interpolate(rs, gs, (x - x0) / sq) / sq
        discretisation = l1_distance(rho, interpolate(rho2, grid2, x), grid)
        assert l1_distance(back, rho, grid) <= 2.0 * discretisation


@pytest.mark.criterion(12, "every pipeline mode is byte-deterministic")
def test_pipeline_determinism(tmp_path):
    for preset in ("intro2d", "example3_9"):
        spec = tmp_path / f"{preset}.toml"
        spec.write_text(f'[problem]\npreset = "{preset}"\n')
        dirs = []
        for run_id in ("a", "b"):
            out = tmp_path / f"{preset}_{run_id}"
            for mode in ("bounds", "simulate", "verify", "report"):
                assert main([mode, "--spec", str(spec), "--out", str(out)]) == 0
            dirs.append(out)
        cmp = filecmp.dircmp(dirs[0], dirs[1], ignore=["metadata.json"])
        _assert_same_tree(cmp)


def _assert_same_tree(cmp):
    assert not cmp.left_only and not cmp.right_only
    _, mismatch, errors = filecmp.cmpfiles(cmp.left, cmp.right, cmp.common_files, shallow=False)
    assert not mismatch and not errors, mismatch
    for sub in cmp.subdirs.values():
        _assert_same_tree(sub)
