import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracpmp.errors import DomainFault, ExprSyntaxError, ValidationError
from fracpmp.exprlang import BinOp, Num, Var, derive, evaluate, gradient, parse, to_source

from exprgen import DIMS, LABELS, random_env, random_tree

ENV = {"t": 0.5, "x": [1.5, -0.25], "u": [2.0]}


def test_precedence_and_associativity():
    assert evaluate(parse("1 + 2 * 3"), {}) == 7
    assert evaluate(parse("2 ^ 3 ^ 2"), {}) == 512
    assert evaluate(parse("-2 ^ 2"), {}) == -4
    assert evaluate(parse("8 / 4 / 2"), {}) == 1
    assert evaluate(parse("10 - 4 - 3"), {}) == 3
    assert evaluate(parse("2 ^ -1"), {}) == 0.5


def test_indexed_variables():
    e = parse("x1 * x2 + u1 - t", DIMS)
    assert e.variables() == {"x1", "x2", "u1", "t"}
    assert evaluate(e, ENV) == pytest.approx(1.5 * -0.25 + 2.0 - 0.5)


def test_bare_family_name_when_single_member():
    assert parse("u", {"u": 1}) == Var("u", 1)
    with pytest.raises(ValidationError):
        parse("x", {"x": 2})


def test_unknown_names_rejected():
    with pytest.raises(ValidationError):
        parse("x3", DIMS)
    with pytest.raises(ValidationError):
        parse("y1", DIMS)
    with pytest.raises(ValidationError):
        parse("tan(t)")
    with pytest.raises(ValidationError):
        parse("pow(t)")


def test_syntax_errors_carry_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse("1 + * 2")
    assert info.value.offset == 4
    for bad in ("", "(1 + 2", "1 2", "t $ 2", "exp(t,)"):
        with pytest.raises(ExprSyntaxError):
            parse(bad)


def test_functions():
    env = {"t": 0.3}
    assert evaluate(parse("exp(t)"), env) == pytest.approx(math.exp(0.3), rel=1e-15)
    assert evaluate(parse("ln(t)"), env) == pytest.approx(math.log(0.3), rel=1e-15)
    assert evaluate(parse("sqrt(t)"), env) == pytest.approx(math.sqrt(0.3), rel=1e-15)
    assert evaluate(parse("abs(-t)"), env) == pytest.approx(0.3)
    assert evaluate(parse("pow(t, 2)"), env) == pytest.approx(0.09)
    assert evaluate(parse("sin(t)^2 + cos(t)^2"), env) == pytest.approx(1.0, rel=1e-15)


def test_domain_faults():
    for src, env in [("ln(t)", {"t": 0.0}), ("sqrt(t)", {"t": -1.0}), ("1 / t", {"t": 0.0}),
                     ("t ^ 0.5", {"t": -1.0}), ("t ^ -1", {"t": 0.0}), ("exp(t)", {"t": 1e4})]:
        with pytest.raises(DomainFault):
            evaluate(parse(src), env)


def test_negative_base_integer_exponent():
    assert evaluate(parse("t ^ 3"), {"t": -2.0}) == -8.0


def test_missing_value_is_validation_error():
    with pytest.raises(ValidationError):
        evaluate(parse("x2", DIMS), {"x": [1.0]})


def test_array_evaluation_matches_scalar():
    e = parse("sin(t) * x1 + t ^ 2", DIMS)
    ts = np.linspace(0, 1, 7)
    xs = np.linspace(-1, 1, 7)
    got = evaluate(e, {"t": ts, "x": [xs, xs]})
    want = [evaluate(e, {"t": a, "x": [b, b]}) for a, b in zip(ts, xs)]
    np.testing.assert_allclose(got, want, rtol=1e-15)


def test_derivative_examples():
    e = parse("x1^2 * u1 + sin(t)", DIMS)
    d = derive(e, ENV, ["x1", "u1", "t", "x2"])
    np.testing.assert_allclose(d, [2 * 1.5 * 2.0, 1.5 ** 2, math.cos(0.5), 0.0], rtol=1e-15)
    val, g = gradient(parse("exp(x1) / x2", DIMS), ENV, ["x1", "x2"])
    assert val == pytest.approx(math.exp(1.5) / -0.25)
    np.testing.assert_allclose(g, [math.exp(1.5) / -0.25, -math.exp(1.5) / 0.0625], rtol=1e-14)


def test_derivative_variable_exponent():
    d = derive(parse("t ^ t"), {"t": 2.0}, ["t"])
    assert d[0] == pytest.approx(4 * (math.log(2) + 1), rel=1e-14)


def test_derivative_kinks_raise():
    with pytest.raises(DomainFault):
        derive(parse("abs(t)"), {"t": 0.0}, ["t"])
    with pytest.raises(DomainFault):
        derive(parse("sqrt(t)"), {"t": 0.0}, ["t"])
    assert derive(parse("t ^ 2"), {"t": 0.0}, ["t"])[0] == 0.0


def test_to_source_round_trip_examples():
    for src in ["1 + 2 * 3", "(1 + 2) * 3", "2 ^ 3 ^ 2", "(2 ^ 3) ^ 2", "-(t ^ 2)", "t - (t - 1)",
                "exp(-t) * pow(x1, 3)", "t / (t / 2)"]:
        e = parse(src, DIMS)
        assert parse(to_source(e), DIMS) == e


def test_rename_families():
    e = parse("v1 ^ 2 + x1", {"x": 1, "v": 1}).rename({"v": "u"})
    assert e.variables() == {"u1", "x1"}


def test_operator_overloads():
    e = 2 * Var("t") + 1
    assert isinstance(e, BinOp)
    assert evaluate(e, {"t": 3.0}) == 7.0
    assert evaluate(Var("t") * Num(2.0), {"t": 3.0}) == 6.0


def _safe(fn):
    try:
        return fn()
    except (DomainFault, OverflowError, ZeroDivisionError):
        return None


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_print_parse_idempotent(seed):
    rng = np.random.default_rng(seed)
    e = random_tree(rng, 4)
    once = parse(to_source(e), DIMS)
    assert parse(to_source(once), DIMS) == once
    env = random_env(rng)
    a, b = _safe(lambda: evaluate(e, env)), _safe(lambda: evaluate(once, env))
    if a is not None and b is not None and math.isfinite(a):
        assert b == pytest.approx(a, rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_product_rule(seed):
    rng = np.random.default_rng(seed)
    f, g = random_tree(rng, 3), random_tree(rng, 3)
    env = random_env(rng)
    df = _safe(lambda: gradient(f, env, LABELS))
    dg = _safe(lambda: gradient(g, env, LABELS))
    dfg = _safe(lambda: derive(BinOp("*", f, g), env, LABELS))
    if df is None or dg is None or dfg is None:
        return
    (fv, fd), (gv, gd) = df, dg
    want = fd * gv + fv * gd
    if not np.all(np.isfinite(want)):
        return
    np.testing.assert_allclose(dfg, want, rtol=1e-12, atol=1e-12 * (1 + np.max(np.abs(want))))


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(-2.0, 2.0))
def test_derivative_matches_finite_difference(t, x):
    e = parse("exp(sin(t) * x1) + ln(t) * x1 ^ 3", {"x": 1})
    env = {"t": t, "x": [x]}
    d = derive(e, env, ["t", "x1"])
    h = 1e-6
    fd_t = (evaluate(e, {"t": t + h, "x": [x]}) - evaluate(e, {"t": t - h, "x": [x]})) / (2 * h)
    fd_x = (evaluate(e, {"t": t, "x": [x + h]}) - evaluate(e, {"t": t, "x": [x - h]})) / (2 * h)
    np.testing.assert_allclose(d, [fd_t, fd_x], rtol=1e-6, atol=1e-6)
