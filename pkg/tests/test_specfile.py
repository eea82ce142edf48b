from pathlib import Path

import numpy as np
import pytest

from fpk_certify.errors import SpecError
from fpk_certify.presets import PRESETS
from fpk_certify.specfile import load_spec, parse_spec

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"


def _violations(text):
    with pytest.raises(SpecError) as info:
        parse_spec(text)
    return info.value.violations


def test_preset_defaults_are_filled_in():
    spec = parse_spec('[problem]\npreset = "example3_8"\n')
    assert spec.dimension == 1
    assert spec.lyapunov["r"] == 3.0 and spec.lyapunov["delta"] == 0.5
    assert spec.bounds["select"] == ["moment_exponential"]
    assert spec.initial["kind"] == "uniform"
    assert spec.name == "example3_8"


def test_user_keys_override_preset():
    spec = parse_spec('[problem]\npreset = "ou1d"\n[grid]\ncells = 64\n[solver]\nend_time = 2.0\n')
    assert spec.grid["cells"] == 64
    assert spec.solver["end_time"] == 2.0
    assert spec.grid["radius"] == PRESETS["ou1d"].defaults["grid"]["radius"]


def test_every_violation_is_reported():
    text = """
[problem]
preset = "example3_9"
colour = "blue"

[lyapunov]
delta = 1.5
beta = 0.5

[grid]
cells = "many"

[solver]
cfl = 2.0

[extra]
x = 1
"""
    v = _violations(text)
    joined = "\n".join(v)
    assert "unknown key problem.colour" in joined
    assert "unknown section [extra]" in joined
    assert "grid.cells has the wrong type" in joined
    assert "lyapunov.delta = 1.5" in joined
    assert "time_weighted: beta must exceed" in joined
    assert "solver.cfl = 2.0" in joined
    assert len(v) == 6


def test_bound_hypotheses_are_enforced():
    base = '[problem]\npreset = "ou1d"\n[lyapunov]\nr = {r}\nk = {k}\n[bounds]\nselect = ["{kind}"]\n'
    assert "moment_exponential: Let r>2 and k>r" in _violations(base.format(r=3.0, k=3.0, kind="moment_exponential"))
    assert "moment_power: Let k>2 and r>=2" in _violations(base.format(r=2.0, k=2.0, kind="moment_power"))
    assert "case_i: r >= 2 required" in _violations(base.format(r=1.5, k=2.0, kind="case_i"))
    assert any("unknown bound" in s for s in _violations(base.format(r=3.0, k=4.0, kind="case_iv")))


def test_syntax_error_carries_position():
    v = _violations('[problem]\npreset = "ou1d"\ncells = = 3\n')
    assert len(v) == 1
    assert v[0].startswith("syntax error") and "line 3" in v[0]


def test_preset_and_coefficients_conflict():
    v = _violations('[problem]\npreset = "ou1d"\n[coefficients]\ndrift = ["-x1"]\n')
    assert any("not both" in s for s in v)


def test_missing_problem_source():
    assert any("needs problem.preset" in s for s in _violations("[grid]\ncells = 64\n"))


def test_unknown_preset_lists_choices():
    v = _violations('[problem]\npreset = "nope"\n')
    assert "ou1d" in v[-1]


def test_bad_formula_is_reported_with_column():
    v = _violations('[problem]\ndimension = 1\n[coefficients]\ndrift = ["-x1 +* 2"]\n')
    assert any(s.startswith("coefficients.drift[0]") and "column" in s for s in v)


def test_expression_coefficients():
    text = """
[problem]
dimension = 2
[coefficients]
diffusion = ["1 + x1^2", "0", "0", "2"]
drift = ["-x1", "-x2^3"]
potential = "-norm(x)^2"
"""
    spec = parse_spec(text)
    f = spec.coefficient_field()
    x = np.array([[1.0, 2.0], [0.5, -1.0]])
    assert np.allclose(f.A(x)[:, 0, 0], 1 + x[:, 0] ** 2)
    assert np.allclose(f.A(x)[:, 1, 1], 2.0)
    assert np.allclose(f.b(x), np.stack([-x[:, 0], -x[:, 1] ** 3], axis=1))
    assert np.allclose(f.c(x), -(x**2).sum(axis=1))
    assert not f.time_dependent
    timed = parse_spec('[problem]\ndimension = 1\n[coefficients]\npotential = "-t*x1^2"\n')
    assert timed.coefficient_field().time_dependent


def test_snapshot_times():
    spec = parse_spec('[problem]\npreset = "ou1d"\n[solver]\nsnapshot_start = 0.1\nend_time = 1.0\nsnapshots = 3\n')
    assert spec.snapshot_times() == pytest.approx((0.1, 10**-0.5, 1.0))
    spec = parse_spec('[problem]\npreset = "ou1d"\n[solver]\nsnapshot_times = [0.2, 0.4]\n')
    assert spec.snapshot_times() == (0.2, 0.4)
    spec = parse_spec('[problem]\npreset = "ou1d"\n[solver]\nend_time = 0.0\n')
    assert spec.snapshot_times() == ()


@pytest.mark.parametrize("path", sorted(PROBLEMS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_problem_files_parse(path):
    spec = load_spec(path)
    assert spec.coefficient_field().dim == spec.dimension
