"""Hamiltonian, objective, necessary-condition residuals and a gradient sweep.

The problem is ``max int_a^b w L(t, x, u) dt`` subject to the controlled
system. ``H = lambda0 (w L + E) + lam . f`` where ``E`` is an optional
unweighted running term (used by the isoperimetric solver).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConvergenceError, DomainFault, NumericalError, ValidationError
from .exprlang import Expr, evaluate, gradient, parse
from .fde import (AdjointProblem, ControlSystem, adjoint_residual, solve_adjoint, solve_forward,
                  transversality_residual, volterra_residual)
from .fracops import RIGHT, rl_derivative
from .grid import SampledFn
from .weight import SingularWeight, weight_w

__all__ = [
    "OCProblem", "Candidate", "ResidualReport", "weight_w", "objective", "hamiltonian",
    "hamiltonian_gradients", "check_pmp", "adjoint_problem", "differential_adjoint_residual",
    "SweepResult", "solve_ocp", "oc_problem",
]


@dataclass(frozen=True)
class OCProblem:
    system: ControlSystem
    L: Expr
    extra: Expr | None = None
    projection: Callable[[np.ndarray], np.ndarray] | None = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        s = self.system
        allowed = {"t"} | set(s.x_labels) | set(s.u_labels)
        for name, e in (("lagrangian", self.L), ("extra term", self.extra)):
            if e is None:
                continue
            bad = e.variables() - allowed
            if bad:
                raise ValidationError(f"{name} uses undeclared {sorted(bad)}")

    @property
    def grid(self):
        return self.system.grid

    @property
    def kernel(self):
        return self.system.kernel

    @property
    def weight(self) -> SingularWeight:
        if "w" not in self._cache:
            self._cache["w"] = weight_w(self.kernel, self.grid)
        return self._cache["w"]


def oc_problem(system: ControlSystem, lagrangian: str, extra: str | None = None) -> OCProblem:
    dims = {"x": system.n_states, "u": system.n_controls}
    return OCProblem(system, parse(lagrangian, dims), parse(extra, dims) if extra else None)


@dataclass(frozen=True)
class Candidate:
    x: SampledFn
    u: SampledFn
    lam: SampledFn
    lambda0: int = 1

    def __post_init__(self):
        if self.lambda0 not in (0, 1):
            raise ValidationError(f"lambda0 must be 0 or 1, got {self.lambda0}")
        self.u.require_grid(self.x.grid)
        self.lam.require_grid(self.x.grid)
        if self.lam.dim != self.x.dim:
            raise ValidationError("lambda needs one component per state")

    @property
    def nontrivial(self) -> bool:
        return self.lambda0 != 0 or bool(np.any(self.lam.values != 0.0))


@dataclass(frozen=True)
class ResidualReport:
    opt_res: float
    adj_res: float
    trans_res: float
    nontriviality: bool
    dynamics_res: float
    J: float

    def as_dict(self) -> dict:
        return {"opt_res": self.opt_res, "adj_res": self.adj_res, "trans_res": self.trans_res,
                "nontriviality": self.nontriviality, "dynamics_res": self.dynamics_res, "J": self.J}


def _env(p: OCProblem, x: SampledFn, u: SampledFn) -> dict:
    x.require_grid(p.grid)
    u.require_grid(p.grid)
    return p.system.env(p.grid.nodes, x.values.T, u.values.T)


def _samples(e: Expr, env, N: int) -> np.ndarray:
    v = np.broadcast_to(np.asarray(evaluate(e, env), dtype=float), (N,))
    if not np.all(np.isfinite(v)):
        raise NumericalError("non-finite integrand value")
    return v


def objective(p: OCProblem, x: SampledFn, u: SampledFn) -> float:
    """``int w L`` by product integration, plus the trapezoid integral of the extra term."""
    env = _env(p, x, u)
    N = p.grid.n + 1
    J = float(p.weight.integrate(_samples(p.L, env, N)))
    if p.extra is not None:
        J += float(p.grid.trap_weights @ _samples(p.extra, env, N))
    return J


def hamiltonian(p: OCProblem, t: float, x_vec, u_vec, lambda0: int, lam_vec) -> float:
    """Pointwise ``H``; ``t = b`` is rejected when the weight is singular there."""
    wt = float(p.weight(float(t)))
    env = p.system.env(float(t), np.asarray(x_vec, float), np.asarray(u_vec, float))
    H = float(np.dot(lam_vec, p.system.rhs(float(t), env["x"], env["u"])))
    if lambda0:
        H += wt * float(evaluate(p.L, env))
        if p.extra is not None:
            H += float(evaluate(p.extra, env))
    return H


def _grads(p: OCProblem, e: Expr | None, env, labels, N):
    if e is None:
        return np.zeros((N, len(labels)))
    _, d = gradient(e, env, labels)
    return np.broadcast_to(d.reshape(len(labels), -1), (len(labels), N)).T


def lagrangian_gradients(p: OCProblem, x: SampledFn, u: SampledFn):
    """Unweighted ``(grad_x L, grad_u L, grad_x E, grad_u E)`` at every node."""
    env = _env(p, x, u)
    N = p.grid.n + 1
    s = p.system
    return (_grads(p, p.L, env, s.x_labels, N), _grads(p, p.L, env, s.u_labels, N),
            _grads(p, p.extra, env, s.x_labels, N), _grads(p, p.extra, env, s.u_labels, N))


def hamiltonian_gradients(p: OCProblem, c: Candidate):
    """``(grad_x H, grad_u H)`` at every node, shape ``(N, n)`` and ``(N, m)``.

    The weight at a singular ``t = b`` is replaced by its last-cell mean.
    """
    Lx, Lu, Ex, Eu = lagrangian_gradients(p, c.x, c.u)
    Jx, Ju = p.system.jacobians(c.x, c.u)
    w = p.weight.node_values()[:, None]
    lam = c.lam.values
    gx = c.lambda0 * (w * Lx + Ex) + np.einsum("kji,kj->ki", Jx, lam)
    gu = c.lambda0 * (w * Lu + Eu) + np.einsum("kji,kj->ki", Ju, lam)
    return gx, gu


def adjoint_problem(p: OCProblem, x: SampledFn, u: SampledFn, lambda0: int = 1) -> AdjointProblem:
    Lx, _, Ex, _ = lagrangian_gradients(p, x, u)
    extra = SampledFn(p.grid, lambda0 * Ex) if p.extra is not None else None
    return AdjointProblem(p.system, x, u, lambda0, SampledFn(p.grid, Lx), p.weight, extra)


def _opt_nodes(p: OCProblem) -> slice:
    return slice(1, -1) if p.kernel.alpha < 1.0 else slice(None)


def check_pmp(p: OCProblem, c: Candidate) -> ResidualReport:
    """Residuals of the optimality, adjoint, transversality and state equations at ``c``."""
    c.x.require_grid(p.grid)
    _, gu = hamiltonian_gradients(p, c)
    opt = float(np.max(np.abs(gu[_opt_nodes(p)]))) if gu.size else 0.0
    ap = adjoint_problem(p, c.x, c.u, c.lambda0)
    adj = float(np.max(adjoint_residual(ap, c.lam)))
    trans = transversality_residual(p.kernel, p.grid, c.lam)
    dyn = float(np.max(volterra_residual(p.system, c.x, c.u)))
    return ResidualReport(opt, adj, trans, c.nontrivial, dyn, objective(p, c.x, c.u))


def differential_adjoint_residual(p: OCProblem, c: Candidate) -> np.ndarray:
    """``RL right derivative of lam - grad_x H`` at every node, shape ``(N, n)``.

    The derivative is taken numerically, so this form is less accurate than
    the integrated residual; it serves to compare against reductions that are
    stated in differential form.
    """
    gx, _ = hamiltonian_gradients(p, c)
    D = rl_derivative(p.kernel, p.grid, RIGHT, c.lam).values
    return D - gx


# -- sweep ---------------------------------------------------------------------------

@dataclass
class SweepResult:
    candidate: Candidate
    history: list
    converged: bool
    iterations: int

    @property
    def J(self) -> float:
        return self.history[-1][0]

    @property
    def opt_res(self) -> float:
        return self.history[-1][1]


MAX_HALVINGS = 20
MONOTONE_SLACK = 1e-12


def solve_ocp(p: OCProblem, u0: SampledFn, step: float = 0.5, tol: float = 1e-6,
              max_iter: int = 500, forward_tol: float = 1e-12) -> SweepResult:
    """Forward-backward sweep with backtracking gradient ascent (normal case).

    The ascent direction is ``grad_u H / w``, the gradient in the inner product
    weighted by ``w``; it keeps the step scale-free near a singular endpoint.
    With a projection hook the iterates stay on its affine set and the
    stopping measure is the projected direction, scaled back by ``w``.
    """
    if not step > 0:
        raise ValidationError(f"step must be positive, got {step}")
    u0.require_grid(p.grid)
    project = p.projection or (lambda v: v)
    w = p.weight.node_values()
    scale = np.maximum(np.abs(w), 1e-12 * np.max(np.abs(w)))[:, None]
    inner = _opt_nodes(p)

    def evaluate_control(values):
        u = SampledFn(p.grid, values)
        x = solve_forward(p.system, u, tol=forward_tol)
        return u, x, objective(p, x, u)

    u, x, J = evaluate_control(project(np.array(u0.values)))
    history = []
    lam = None
    converged = False
    it = 0
    for it in range(max_iter + 1):
        lam = solve_adjoint(adjoint_problem(p, x, u))
        _, gu = hamiltonian_gradients(p, Candidate(x, u, lam, 1))
        d = gu / scale
        if p.projection is not None:
            d = project(u.values + d) - u.values
        opt = float(np.max(np.abs((d * scale)[inner])))
        history.append((J, opt))
        if opt <= tol:
            converged = True
            break
        if it == max_iter:
            break
        s = step
        for _ in range(MAX_HALVINGS + 1):
            try:
                trial = evaluate_control(project(u.values + s * d))
            except (NumericalError, DomainFault):
                trial = None
            if trial is not None and trial[2] >= J - MONOTONE_SLACK:
                u, x, J = trial
                break
            s *= 0.5
        else:
            raise ConvergenceError("line search exhausted without an ascent step", iteration=it)
    return SweepResult(Candidate(x, u, lam, 1), history, converged, it)
