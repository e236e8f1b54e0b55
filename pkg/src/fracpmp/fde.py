"""Forward, variational and adjoint solvers for the controlled system.

The state equation ``C-derivative of x = f(t, x, u)`` is solved in its
Volterra form ``x = x_a + I_A^alpha f``; the adjoint in the integrated form
``(Abar right-integral of order 1-alpha of lam)(t) = int_t^b grad_x H``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConvergenceError, DomainFault, NumericalError, SingularSystemError, ValidationError
from .exprlang import Expr, derive, evaluate, parse
from .fracops import LEFT, RIGHT, build_plan, dual_plan
from .grid import Grid, SampledFn
from .kernel import AnalyticKernel
from .weight import SingularWeight

__all__ = [
    "ControlSystem", "AdjointProblem", "control_system", "solve_forward",
    "volterra_residual", "solve_variational", "solve_adjoint", "adjoint_residual",
    "transversality_residual",
]

DAMPING = 0.5


def _labels(family: str, k: int) -> list[str]:
    return [f"{family}{i}" for i in range(1, k + 1)]


@dataclass(frozen=True)
class ControlSystem:
    f: tuple[Expr, ...]
    x_a: tuple[float, ...]
    n_controls: int
    kernel: AnalyticKernel
    grid: Grid

    def __post_init__(self):
        if len(self.f) != len(self.x_a):
            raise ValidationError(f"{len(self.f)} dynamics components for {len(self.x_a)} states")
        if not self.f:
            raise ValidationError("system needs at least one state")
        allowed = {"t"} | set(_labels("x", self.n_states)) | set(_labels("u", self.n_controls))
        for i, fi in enumerate(self.f):
            extra = fi.variables() - allowed
            if extra:
                raise ValidationError(f"dynamics component {i + 1} uses undeclared {sorted(extra)}")
        if self.kernel.alpha < 1.0 and self.kernel.coeffs[0] == 0.0:
            raise ValidationError("forward solve needs a_0 != 0 when alpha < 1")
        self.kernel.check_interval(self.grid.length)

    @property
    def n_states(self) -> int:
        return len(self.x_a)

    @property
    def x_labels(self) -> list[str]:
        return _labels("x", self.n_states)

    @property
    def u_labels(self) -> list[str]:
        return _labels("u", self.n_controls)

    def env(self, t, x, u) -> dict:
        return {"t": t, "x": x, "u": u}

    def rhs(self, t, x, u) -> np.ndarray:
        env = self.env(t, x, u)
        return np.array([np.broadcast_to(evaluate(fi, env), np.shape(t)) for fi in self.f], dtype=float)

    def rhs_samples(self, x: SampledFn, u: SampledFn) -> np.ndarray:
        """``f`` along sampled trajectories, shape ``(N, n)``."""
        return self.rhs(self.grid.nodes, x.values.T, u.values.T).T

    def jacobians(self, x: SampledFn, u: SampledFn):
        """``(J_x, J_u)`` at every node, shapes ``(N, n, n)`` and ``(N, n, m)``."""
        env = self.env(self.grid.nodes, x.values.T, u.values.T)
        wrt = self.x_labels + self.u_labels
        n, N = self.n_states, self.grid.n + 1
        J = np.empty((N, n, len(wrt)))
        for i, fi in enumerate(self.f):
            J[:, i, :] = derive(fi, env, wrt).reshape(len(wrt), -1).T
        return J[:, :, :n], J[:, :, n:]


def control_system(dynamics: Sequence[str], x_a: Sequence[float], n_controls: int,
                   kernel: AnalyticKernel, grid: Grid) -> ControlSystem:
    dims = {"x": len(x_a), "u": n_controls}
    f = tuple(parse(s, dims) for s in dynamics)
    return ControlSystem(f, tuple(float(v) for v in x_a), int(n_controls), kernel, grid)


def _check_control(sys: ControlSystem, u: SampledFn) -> None:
    u.require_grid(sys.grid)
    if u.dim != sys.n_controls:
        raise ValidationError(f"control has {u.dim} components, system expects {sys.n_controls}")


def _history(g: np.ndarray, e: np.ndarray, F: np.ndarray, k: int) -> np.ndarray:
    """Known part of row ``k`` of the left plan applied to ``F``: nodes ``0..k-1``."""
    out = e[k] * F[0]
    if k > 1:
        out = out + g[k - 1:0:-1] @ F[1:k]
    return out


def solve_forward(sys: ControlSystem, u: SampledFn, tol: float = 1e-12,
                  max_iter: int = 100) -> SampledFn:
    """Node-by-node damped Picard iteration on the discrete Volterra equation.

    At node ``k`` the unknown appears only through the diagonal weight, so the
    fixed-point map is ``x -> S_k + g_0 f(t_k, x, u_k)``. Damping (factor 0.5)
    switches on once the residual stops decreasing or successive steps
    reverse direction.
    """
    _check_control(sys, u)
    plan = build_plan(sys.kernel, sys.grid, LEFT)
    g, e = plan.g, plan.e
    t = sys.grid.nodes
    U = u.values
    N, n = sys.grid.n + 1, sys.n_states
    X = np.empty((N, n))
    F = np.empty((N, n))
    X[0] = sys.x_a

    def fk(k, x):
        try:
            v = sys.rhs(t[k], x, U[k])
        except DomainFault as exc:
            raise NumericalError(f"dynamics evaluation failed: {exc}", node=k) from None
        if not np.all(np.isfinite(v)):
            raise NumericalError("non-finite dynamics value", node=k)
        return v

    F[0] = fk(0, X[0])
    for k in range(1, N):
        S = np.asarray(sys.x_a) + _history(g, e, F, k)
        x = X[k - 1].copy()
        fx = fk(k, x)
        res = np.inf
        damped = False
        prev_step = None
        for it in range(max_iter):
            target = S + g[0] * fx
            step = target - x
            new_res = float(np.max(np.abs(step)))
            if new_res <= tol * max(1.0, float(np.max(np.abs(target)))):
                x = target
                fx = fk(k, x)
                break
            # growth or sign-alternating steps: the undamped map is (near) expansive
            if new_res >= res or (prev_step is not None and float(step @ prev_step) < 0.0):
                damped = True
            res = new_res
            prev_step = step
            x = x + DAMPING * (target - x) if damped else target
            fx = fk(k, x)
        else:
            raise ConvergenceError(f"Picard iteration did not converge (residual {res:.3e})",
                                   node=k, iteration=max_iter)
        X[k] = x
        F[k] = fx
    return SampledFn(sys.grid, X)


def volterra_residual(sys: ControlSystem, x: SampledFn, u: SampledFn) -> np.ndarray:
    """Per-node sup-norm of ``x - x_a - I_A^alpha f(x, u)``."""
    _check_control(sys, u)
    x.require_grid(sys.grid)
    F = SampledFn(sys.grid, sys.rhs_samples(x, u))
    I = build_plan(sys.kernel, sys.grid, LEFT).apply(F).values
    return np.max(np.abs(x.values - np.asarray(sys.x_a) - I), axis=1)


def solve_variational(sys: ControlSystem, x_star: SampledFn, u_star: SampledFn,
                      h: SampledFn) -> SampledFn:
    """Linearised state equation ``eta = I_A^alpha (J_x eta + J_u h)``, ``eta(a) = 0``."""
    _check_control(sys, u_star)
    _check_control(sys, h)
    Jx, Ju = sys.jacobians(x_star, u_star)
    plan = build_plan(sys.kernel, sys.grid, LEFT)
    g, e = plan.g, plan.e
    N, n = sys.grid.n + 1, sys.n_states
    H = h.values
    eta = np.zeros((N, n))
    B = np.zeros((N, n))
    B[0] = Ju[0] @ H[0]
    I = np.eye(n)
    for k in range(1, N):
        rhs = _history(g, e, B, k) + g[0] * (Ju[k] @ H[k])
        M = I - g[0] * Jx[k]
        try:
            eta[k] = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            raise SingularSystemError("singular linear step in variational solve", node=k) from None
        B[k] = Jx[k] @ eta[k] + Ju[k] @ H[k]
    return SampledFn(sys.grid, eta)


# -- adjoint ------------------------------------------------------------------

@dataclass(frozen=True)
class AdjointProblem:
    """Data of the adjoint equation along a fixed candidate.

    ``grad_L_x`` holds unweighted samples of ``grad_x L``; the singular weight
    multiplies them inside product integration. ``extra`` holds unweighted
    samples added to the right-hand side as is (an isoperimetric multiplier
    term, for instance).
    """

    system: ControlSystem
    x_star: SampledFn
    u_star: SampledFn
    lambda0: int
    grad_L_x: SampledFn
    weight: SingularWeight
    extra: SampledFn | None = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.lambda0 not in (0, 1):
            raise ValidationError(f"lambda0 must be 0 or 1, got {self.lambda0}")
        g = self.system.grid
        for s in (self.x_star, self.grad_L_x) + ((self.extra,) if self.extra is not None else ()):
            s.require_grid(g)
            if s.dim != self.system.n_states:
                raise ValidationError("adjoint data must have one column per state")
        _check_control(self.system, self.u_star)

    @property
    def Jx(self) -> np.ndarray:
        if "Jx" not in self._cache:
            self._cache["Jx"] = self.system.jacobians(self.x_star, self.u_star)[0]
        return self._cache["Jx"]

    def source_tail(self) -> np.ndarray:
        """``int_{t_k}^b (lambda0 w grad_x L + extra)`` at every node."""
        out = self.lambda0 * self.weight.tail_integrals(self.grad_L_x)
        if self.extra is not None:
            out = out + _trap_tail(self.extra.values, self.system.grid.h)
        return out


def _trap_tail(V: np.ndarray, h: float) -> np.ndarray:
    cells = 0.5 * h * (V[:-1] + V[1:])
    out = np.zeros_like(V)
    out[:-1] = np.cumsum(cells[::-1], axis=0)[::-1]
    return out


def _classical(K: AnalyticKernel) -> bool:
    if K.alpha == 1.0:
        if K.beta != 0.0:
            raise ValidationError("alpha = 1 requires beta = 0 (classical limit)")
        return True
    return False


def solve_adjoint(p: AdjointProblem) -> SampledFn:
    """Back-substitution on the integrated adjoint equation.

    Unknowns are the node values of ``lam``. For ``alpha < 1`` the equation is
    imposed at nodes ``0..n-1`` (node ``b`` carries the transversality
    condition, met identically by the right integral) and the last cell is
    closed with ``lam_n = lam_{n-1}``. For ``alpha = 1`` the equation reads
    ``lam / A(1) = int_t^b grad_x H`` at every node, so ``lam(b) = 0``.
    """
    sys = p.system
    K, grid = sys.kernel, sys.grid
    n, h, d = grid.n, grid.h, sys.n_states
    Jt = np.transpose(p.Jx, (0, 2, 1))
    R = p.source_tail()
    lam = np.zeros((n + 1, d))
    I = np.eye(d)

    def solve(M, rhs, k):
        try:
            return np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            raise SingularSystemError("singular adjoint step", node=k) from None

    if _classical(K):
        c = 1.0 / K.at_one()
        lam[n] = R[n] / c
        T = np.zeros(d)
        for k in range(n - 1, -1, -1):
            rhs = R[k] + T + 0.5 * h * (Jt[k + 1] @ lam[k + 1])
            lam[k] = solve(c * I - 0.5 * h * Jt[k], rhs, k)
            T = T + 0.5 * h * (Jt[k] @ lam[k] + Jt[k + 1] @ lam[k + 1])
        return SampledFn(grid, lam)

    plan = dual_plan(K, grid, RIGHT)
    g, e = plan.g, plan.e
    k = n - 1
    M = (g[0] + e[1]) * I - 0.5 * h * (Jt[k] + Jt[n])
    lam[k] = solve(M, R[k], k)
    lam[n] = lam[k]
    T = 0.5 * h * (Jt[k] + Jt[n]) @ lam[k]
    for k in range(n - 2, -1, -1):
        known = g[1:n - k] @ lam[k + 1:n] + e[n - k] * lam[n - 1]
        rhs = R[k] - known + 0.5 * h * (Jt[k + 1] @ lam[k + 1]) + T
        lam[k] = solve(g[0] * I - 0.5 * h * Jt[k], rhs, k)
        T = T + 0.5 * h * (Jt[k] @ lam[k] + Jt[k + 1] @ lam[k + 1])
    return SampledFn(grid, lam)


def _integrated_lhs(K: AnalyticKernel, grid: Grid, lam: SampledFn) -> np.ndarray:
    if _classical(K):
        return lam.values / K.at_one()
    return dual_plan(K, grid, RIGHT).apply(lam).values


def adjoint_residual(p: AdjointProblem, lam: SampledFn) -> np.ndarray:
    """Per-node defect of the integrated adjoint equation.

    Node ``b`` is excluded for ``alpha < 1``; there the equation reduces to
    the transversality condition, reported separately.
    """
    sys = p.system
    lam.require_grid(sys.grid)
    F = _integrated_lhs(sys.kernel, sys.grid, lam)
    JtL = np.einsum("kji,kj->ki", p.Jx, lam.values)
    rhs = p.source_tail() + _trap_tail(JtL, sys.grid.h)
    res = np.max(np.abs(F - rhs), axis=1)
    return res if _classical(sys.kernel) else res[:-1]


def transversality_residual(K: AnalyticKernel, grid: Grid, lam: SampledFn) -> float:
    """``|(Abar right-integral of order 1-alpha of lam)(b)|``; ``|lam(b)|/A(1)`` when alpha = 1."""
    return float(np.max(np.abs(_integrated_lhs(K, grid, lam)[-1])))
