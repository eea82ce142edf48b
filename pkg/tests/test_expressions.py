import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpk_certify.errors import EvaluationError, ExpressionSyntaxError
from fpk_certify.expressions import parse_expression


def ev(src, x, dim=None, t=0.0, split=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return float(parse_expression(src, dim or x.shape[1], split)(x, t)[0])


def test_split_norms_reproduce_the_intro_weight():
    assert ev("exp(pow(norm1(x), 1.5) - pow(norm2(x), 1.5))", [1.0, 0.0], split=1) == pytest.approx(math.e)


def test_zero_power_of_norm():
    assert ev("-x1*pow(norm(x),0)", [2.0]) == -2.0


def test_log_of_zero_is_an_evaluation_error():
    with pytest.raises(EvaluationError) as info:
        ev("1 + ln(0)", [0.0])
    assert "ln(0.0)" in str(info.value)
    assert "column 5" in str(info.value)


@pytest.mark.parametrize(
    "src, value",
    [
        ("2^3^2", 512.0),
        ("-2^2", -4.0),
        ("2*3+4", 10.0),
        ("2+3*4", 14.0),
        ("(2+3)*4", 20.0),
        ("8/4/2", 1.0),
        ("1-2-3", -4.0),
        ("2^-1", 0.5),
        ("min(3, max(1, 2))", 2.0),
        ("sqrt(abs(-16))", 4.0),
        ("pi", math.pi),
        ("1e-3*1000", 1.0),
    ],
)
def test_precedence_and_associativity(src, value):
    assert ev(src, [0.0]) == pytest.approx(value)


def test_time_and_coordinates():
    assert ev("x1*t + x2", [2.0, 5.0], t=3.0) == 11.0


def test_vectorised_over_points():
    e = parse_expression("x1^2 + x2", 2)
    np.testing.assert_allclose(e(np.array([[1.0, 2.0], [3.0, 4.0]])), [3.0, 13.0])


@pytest.mark.parametrize(
    "src, pos, fragment",
    [
        ("x1 + y", 5, "unknown identifier"),
        ("foo(x1)", 0, "unknown function"),
        ("pow(x1)", 0, "expects 2"),
        ("(x1 + 1", 7, "missing ')'"),
        ("x1 + 1)", 6, "unbalanced"),
        ("x3", 0, "outside dimension"),
        ("x1 $ 2", 3, "unexpected character"),
        ("x1 +", 4, "end of input"),
        ("x + 1", 0, "only appear"),
        ("norm(x1)", 5, "takes the point x"),
    ],
)
def test_parse_errors_carry_positions(src, pos, fragment):
    with pytest.raises(ExpressionSyntaxError) as info:
        parse_expression(src, 2)
    assert info.value.position == pos
    assert fragment in str(info.value)
    assert f"column {pos + 1}" in str(info.value)


def test_evaluation_is_deterministic():
    e = parse_expression("exp(-norm(x)^2/3) * x1", 2)
    x = np.random.default_rng(0).normal(size=(50, 2))
    assert np.array_equal(e(x), e(x))


# random trees for the print/re-parse round trip
_leaf = st.one_of(
    st.floats(0, 1e6, allow_nan=False, allow_infinity=False).map(repr),
    st.sampled_from(["x1", "x2", "t", "pi", "norm(x)", "norm1(x)", "norm2(x)"]),
)


def _extend(children):
    return st.one_of(
        st.tuples(children, st.sampled_from("+-*/^"), children).map(lambda p: f"({p[0]} {p[1]} {p[2]})"),
        children.map(lambda c: f"-{c}"),
        st.tuples(st.sampled_from(["exp", "ln", "abs", "sqrt"]), children).map(lambda p: f"{p[0]}({p[1]})"),
        st.tuples(st.sampled_from(["pow", "min", "max"]), children, children).map(lambda p: f"{p[0]}({p[1]}, {p[2]})"),
    )


@settings(max_examples=200, deadline=None)
@given(st.recursive(_leaf, _extend, max_leaves=12))
def test_print_then_parse_gives_the_same_tree(src):
    e = parse_expression(src, 2)
    again = parse_expression(str(e), 2)
    assert again.tree == e.tree
    assert str(again) == str(e)
