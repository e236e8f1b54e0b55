import numpy as np
import pytest

from fracpmp.errors import ValidationError
from fracpmp.exprlang import parse
from fracpmp.grid import Grid, sample
from fracpmp.kernel import exp_kernel, make_kernel, rl_kernel
from fracpmp.variational import (IsoProblem, augmented_el_residual, cov_problem, el_residual,
                                 pmp_reduction_residual, solve_isoperimetric)

CLASSICAL = make_kernel([1.0], 1.0, 0.0)
K = exp_kernel(0.6, 0.5, 10)


def _curve(G):
    x = sample(G, lambda t: np.sin(np.pi * t) + t)
    dx = sample(G, lambda t: np.pi * np.cos(np.pi * t) + 1)
    return x, dx


def test_additive_constant_leaves_residual_unchanged():
    G = Grid(0.0, 1.0, 128)
    x, dx = _curve(G)
    a = el_residual(cov_problem("-(v1^2) + x1 * t", K, G, [0.0], [1.0]), x, dx)
    b = el_residual(cov_problem("-(v1^2) + x1 * t + 7.5", K, G, [0.0], [1.0]), x, dx)
    np.testing.assert_array_equal(a.values, b.values)


def test_lagrangian_without_curve_dependence_is_stationary():
    G = Grid(0.0, 1.0, 64)
    x, dx = _curve(G)
    r = el_residual(cov_problem("exp(t) + 2", K, G, [0.0], [1.0]), x, dx)
    assert np.all(r.values == 0)


def test_classical_straight_line_is_extremal():
    G = Grid(0.0, 1.0, 64)
    p = cov_problem("-(v1^2)", CLASSICAL, G, [0.0], [2.0])
    r = el_residual(p, sample(G, lambda t: 2 * t), sample(G, lambda t: 2 + 0 * t))
    assert np.max(np.abs(r.values)) <= 1e-12
    q = cov_problem("-(v1^2)", CLASSICAL, G, [0.0], [1.0])
    r = el_residual(q, sample(G, lambda t: t ** 2), sample(G, lambda t: 2 * t))
    assert np.max(np.abs(np.abs(r.values) - 4.0)) <= 1e-10


def test_el_and_pmp_reduction_agree():
    G = Grid(0.0, 1.0, 128)
    x, dx = _curve(G)
    p = cov_problem("-(v1 - x1)^2 + sin(t) * x1", K, G, [0.0], [1.0])
    a = el_residual(p, x, dx).values
    b = pmp_reduction_residual(p, x, dx).values
    assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(a)))


def test_boundary_mismatch_rejected():
    G = Grid(0.0, 1.0, 32)
    x, dx = _curve(G)
    with pytest.raises(ValidationError):
        el_residual(cov_problem("-(v1^2)", K, G, [0.0], [0.0]), x, dx)
    with pytest.raises(ValidationError):
        cov_problem("-(v1^2) + u1", K, G, [0.0], [1.0])
    with pytest.raises(ValidationError):
        cov_problem("-(v1^2)", K, G, [0.0], [1.0, 2.0])


def _parabola(G, l=1.0):
    base = cov_problem("-(v1^2)", CLASSICAL, G, [0.0], [0.0])
    return IsoProblem(base, parse("x1", base.dims), l)


def test_isoperimetric_parabola():
    G = Grid(0.0, 1.0, 128)
    r = solve_isoperimetric(_parabola(G), (0.0, 100.0), tol=1e-9, inner_tol=1e-8)
    assert abs(r.report["defect"]) <= 1e-9
    assert r.multiplier == pytest.approx(24.0, rel=1e-3)
    np.testing.assert_allclose(r.x.column(0), 6 * G.nodes * (1 - G.nodes), atol=1e-3)
    assert abs(r.x.column(0)[-1]) <= 1e-12
    assert not r.report["degenerate"]
    # for alpha = 1 the derivative of a constant multiplier vanishes
    assert r.report["multiplier_derivative_res"] <= 1e-10
    aug = augmented_el_residual(_parabola(G), r.x, r.multiplier).values
    assert np.max(np.abs(aug[2:-2])) <= 1e-2


def test_isoperimetric_bracket_errors():
    G = Grid(0.0, 1.0, 32)
    with pytest.raises(ValidationError):
        solve_isoperimetric(_parabola(G), (30.0, 100.0), inner_tol=1e-4)
    with pytest.raises(ValidationError):
        solve_isoperimetric(_parabola(G), (5.0, 5.0))


def test_isoperimetric_inactive_constraint_warns():
    G = Grid(0.0, 1.0, 32)
    with pytest.warns(RuntimeWarning):
        r = solve_isoperimetric(_parabola(G, l=0.0), (0.0, 10.0), inner_tol=1e-6)
    assert r.report["degenerate"] and r.multiplier == 0.0


def test_fractional_multiplier_has_nonzero_derivative():
    G = Grid(0.0, 1.0, 64)
    base = cov_problem("-(v1^2)", rl_kernel(0.7, normalized=True), G, [0.0], [0.0])
    r = solve_isoperimetric(IsoProblem(base, parse("x1", base.dims), 0.5), (0.0, 200.0),
                            tol=1e-6, inner_tol=1e-4)
    assert abs(r.report["defect"]) <= 1e-6
    assert r.multiplier > 0
    assert r.report["multiplier_derivative_res"] > 0


def test_constraint_variables_validated():
    G = Grid(0.0, 1.0, 16)
    base = cov_problem("-(v1^2)", CLASSICAL, G, [0.0], [0.0])
    with pytest.raises(ValidationError):
        IsoProblem(base, parse("x1 + u1", {"x": 1, "u": 1}), 1.0)
