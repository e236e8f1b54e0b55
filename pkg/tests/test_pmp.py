import math

import numpy as np
import pytest

from fracpmp.errors import ValidationError
from fracpmp.fde import control_system, solve_forward
from fracpmp.grid import Grid, SampledFn, sample
from fracpmp.kernel import exp_kernel, make_kernel, rl_kernel
from fracpmp.pmp import Candidate, check_pmp, hamiltonian, objective, oc_problem, solve_ocp
from fracpmp.weight import SingularWeight

CLASSICAL = make_kernel([1.0], 1.0, 0.0)


def test_weight_integral_rl():
    G = Grid(0.0, 1.0, 64)
    w = SingularWeight(rl_kernel(0.5), G)
    assert w.integrate(np.ones(G.n + 1)) == pytest.approx(1 / math.gamma(1.5), rel=1e-14)
    assert w.singular
    with pytest.raises(ValidationError):
        w(1.0)


def test_weight_exact_for_linear_integrands():
    K = exp_kernel(0.4, 0.7, 20)
    G = Grid(0.0, 1.0, 16)
    w = SingularWeight(K, G)
    # int_0^1 w(t) (1 - t) dt = sum a_i / ((mu_i + 1) norm) with mu_i = alpha + i beta
    want = sum(a / (K.alpha + i * K.beta + 1) for i, a in enumerate(K.coeffs)) / w.norm
    assert w.integrate(1 - G.nodes) == pytest.approx(want, rel=1e-13)


def test_weight_classical_is_one():
    G = Grid(0.0, 2.0, 10)
    w = SingularWeight(CLASSICAL, G)
    np.testing.assert_allclose(w.node_values(), 1.0, rtol=1e-15)
    assert w(2.0) == pytest.approx(1.0)


def _lq(G, kernel=CLASSICAL, L="-(x1^2 + u1^2)"):
    return oc_problem(control_system(["u1"], [1.0], 1, kernel, G), L)


def test_objective_examples():
    G = Grid(0.0, 1.0, 256)
    p = oc_problem(control_system(["u1"], [0.0], 1, CLASSICAL, G), "u1^2")
    u = sample(G, lambda t: t)
    x = solve_forward(p.system, u)
    assert objective(p, x, u) == pytest.approx(1 / 3, abs=1e-5)
    p = oc_problem(control_system(["u1"], [0.0], 1, rl_kernel(0.5), G), "1 + 0*u1")
    assert objective(p, x, u) == pytest.approx(1 / math.gamma(1.5), rel=1e-14)


def test_hamiltonian_examples():
    G = Grid(0.0, 1.0, 8)
    p = _lq(G)
    assert hamiltonian(p, 0.5, [1.0], [2.0], 1, [3.0]) == pytest.approx(-5.0 + 6.0)
    assert hamiltonian(p, 0.5, [1.0], [2.0], 0, [3.0]) == pytest.approx(6.0)
    q = _lq(G, rl_kernel(0.5))
    with pytest.raises(ValidationError):
        hamiltonian(q, 1.0, [1.0], [2.0], 1, [3.0])


def test_hamiltonian_affine_in_multiplier():
    G = Grid(0.0, 1.0, 8)
    p = _lq(G, exp_kernel(0.6, 0.5, 6))
    args = (0.3, [0.7], [-1.2])
    h0 = hamiltonian(p, *args, 1, [0.0])
    h1 = hamiltonian(p, *args, 1, [1.5])
    h2 = hamiltonian(p, *args, 1, [-0.4])
    h12 = hamiltonian(p, *args, 1, [1.1])
    assert h12 - h0 == pytest.approx((h1 - h0) + (h2 - h0), rel=1e-13)


def test_candidate_nontriviality():
    G = Grid(0.0, 1.0, 8)
    z = SampledFn(G, np.zeros(9))
    assert not Candidate(z, z, z, 0).nontrivial
    assert Candidate(z, z, z, 1).nontrivial
    assert Candidate(z, z, z + sample(G, lambda t: t), 0).nontrivial
    with pytest.raises(ValidationError):
        Candidate(z, z, z, 2)


def test_lagrangian_validation():
    G = Grid(0.0, 1.0, 8)
    with pytest.raises(ValidationError):
        oc_problem(control_system(["u1"], [1.0], 1, CLASSICAL, G), "x2")


def test_tracking_problem_recovers_target():
    G = Grid(0.0, 1.0, 128)
    p = oc_problem(control_system(["u1"], [0.0], 1, exp_kernel(0.5, 0.5, 10), G), "-(u1 - sin(3*t))^2")
    res = solve_ocp(p, SampledFn(G, np.zeros(G.n + 1)), tol=1e-9)
    assert res.converged
    np.testing.assert_allclose(res.candidate.u.column(0), np.sin(3 * G.nodes), atol=1e-8)
    Js = [J for J, _ in res.history]
    assert all(b >= a - 1e-12 for a, b in zip(Js, Js[1:]))


def test_lq_sweep_and_residuals():
    G = Grid(0.0, 1.0, 256)
    p = _lq(G)
    res = solve_ocp(p, SampledFn(G, np.zeros(G.n + 1)), tol=1e-7)
    assert res.converged
    c = res.candidate
    rep = check_pmp(p, c)
    assert rep.opt_res <= 1e-7 and rep.adj_res <= 1e-12 and rep.nontriviality
    # exact optimum: x(t) = cosh(1 - t) / cosh(1), u = x'
    exact_u = -np.sinh(1 - G.nodes) / np.cosh(1)
    assert np.max(np.abs(c.u.column(0) - exact_u)) <= 1e-4
    bumped = Candidate(c.x, c.u + sample(G, lambda t: 0.1 + 0 * t), c.lam)
    assert check_pmp(p, bumped).opt_res >= 0.1


def test_warm_start_at_optimum_stops_immediately():
    # the sweep gradient carries an O(h^2) discretisation floor; tolerances stay above it
    G = Grid(0.0, 1.0, 64)
    p = _lq(G)
    first = solve_ocp(p, SampledFn(G, np.zeros(G.n + 1)), tol=1e-3)
    again = solve_ocp(p, first.candidate.u, tol=1e-3)
    assert again.converged and again.iterations == 0
    assert again.J == pytest.approx(first.J, abs=1e-14)


def test_projection_hook_keeps_iterates_feasible():
    G = Grid(0.0, 1.0, 64)
    p = _lq(G)
    mean_zero = lambda U: U - G.trap_weights @ U / G.length
    q = type(p)(p.system, p.L, projection=mean_zero)
    res = solve_ocp(q, SampledFn(G, np.full(G.n + 1, 0.3)), tol=1e-3)
    assert res.converged
    assert abs(G.trap_weights @ res.candidate.u.column(0)) <= 1e-12


def test_sweep_rejects_bad_step():
    G = Grid(0.0, 1.0, 8)
    with pytest.raises(ValidationError):
        solve_ocp(_lq(G), SampledFn(G, np.zeros(9)), step=0.0)
