"""Euler-Lagrange residuals and an isoperimetric solver by multiplier shooting.

Variational Lagrangians are written over ``t``, ``x1..xn`` and ``v1..vn``
where ``v`` stands for the left Caputo derivative of ``x``. Reduction to the
control problem sets ``v = u`` with dynamics ``f = u``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, ValidationError
from .exprlang import BinOp, Expr, Num, gradient, evaluate, parse
from .fde import control_system
from .fracops import LEFT, RIGHT, build_plan, caputo_derivative, rl_derivative
from .grid import Grid, SampledFn
from .kernel import AnalyticKernel
from .pmp import Candidate, OCProblem, differential_adjoint_residual, solve_ocp
from .weight import weight_w

__all__ = [
    "CoVProblem", "IsoProblem", "cov_problem", "el_residual", "pmp_reduction_residual",
    "IsoResult", "solve_isoperimetric", "augmented_el_residual",
]

BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class CoVProblem:
    L: Expr
    kernel: AnalyticKernel
    grid: Grid
    x_a: tuple[float, ...]
    x_b: tuple[float, ...]

    def __post_init__(self):
        if len(self.x_a) != len(self.x_b) or not self.x_a:
            raise ValidationError("x_a and x_b must be non-empty and of equal length")
        n = self.n
        allowed = {"t"} | {f"x{i}" for i in range(1, n + 1)} | {f"v{i}" for i in range(1, n + 1)}
        bad = self.L.variables() - allowed
        if bad:
            raise ValidationError(f"lagrangian uses undeclared {sorted(bad)}")

    @property
    def n(self) -> int:
        return len(self.x_a)

    @property
    def dims(self) -> dict:
        return {"x": self.n, "v": self.n}

    def to_ocp(self, extra: Expr | None = None, projection=None) -> OCProblem:
        sys = control_system([f"u{i}" for i in range(1, self.n + 1)], self.x_a, self.n,
                             self.kernel, self.grid)
        ren = {"v": "u"}
        return OCProblem(sys, self.L.rename(ren), extra.rename(ren) if extra is not None else None,
                         projection)


def cov_problem(lagrangian: str, kernel: AnalyticKernel, grid: Grid, x_a, x_b) -> CoVProblem:
    x_a = tuple(float(v) for v in np.atleast_1d(x_a))
    x_b = tuple(float(v) for v in np.atleast_1d(x_b))
    return CoVProblem(parse(lagrangian, {"x": len(x_a), "v": len(x_a)}), kernel, grid, x_a, x_b)


@dataclass(frozen=True)
class IsoProblem:
    base: CoVProblem
    y: Expr
    l: float

    def __post_init__(self):
        bad = self.y.variables() - ({"t"} | {f"{f}{i}" for f in "xv" for i in range(1, self.base.n + 1)})
        if bad:
            raise ValidationError(f"constraint uses undeclared {sorted(bad)}")


def _check_boundary(p: CoVProblem, x: SampledFn) -> None:
    x.require_grid(p.grid)
    if x.dim != p.n:
        raise ValidationError(f"curve has {x.dim} components, problem expects {p.n}")
    if (np.max(np.abs(x.values[0] - p.x_a)) > BOUNDARY_TOL
            or np.max(np.abs(x.values[-1] - p.x_b)) > BOUNDARY_TOL):
        raise ValidationError("curve does not match the boundary values")


def _env(p: CoVProblem, x: SampledFn, v: SampledFn) -> dict:
    return {"t": p.grid.nodes, "x": x.values.T, "v": v.values.T}


def _grad(e: Expr, env, labels, N) -> np.ndarray:
    _, d = gradient(e, env, labels)
    return np.broadcast_to(d.reshape(len(labels), -1), (len(labels), N)).T


def _labels(fam, n):
    return [f"{fam}{i}" for i in range(1, n + 1)]


def el_residual(p: CoVProblem, x: SampledFn, x_deriv: SampledFn | None = None,
                extra: Expr | None = None) -> SampledFn:
    """``RL right derivative of (w grad_v L + grad_v E) + w grad_x L + grad_x E``.

    ``E`` is an optional unweighted term (a multiplier times a constraint
    integrand). The weight at a singular ``t = b`` is its last-cell mean.
    """
    _check_boundary(p, x)
    v = caputo_derivative(p.kernel, p.grid, LEFT, x, x_deriv)
    env = _env(p, x, v)
    N = p.grid.n + 1
    w = weight_w(p.kernel, p.grid).node_values()[:, None]
    gv = w * _grad(p.L, env, _labels("v", p.n), N)
    gx = w * _grad(p.L, env, _labels("x", p.n), N)
    if extra is not None:
        gv = gv + _grad(extra, env, _labels("v", p.n), N)
        gx = gx + _grad(extra, env, _labels("x", p.n), N)
    D = rl_derivative(p.kernel, p.grid, RIGHT, SampledFn(p.grid, gv)).values
    return SampledFn(p.grid, D + gx)


def pmp_reduction_residual(p: CoVProblem, x: SampledFn, x_deriv: SampledFn | None = None) -> SampledFn:
    """The Euler-Lagrange residual rebuilt from the control formulation.

    Sets ``u = v``, eliminates the multiplier through the optimality condition
    ``lam = -w grad_u L`` and returns minus the differential adjoint residual,
    which equals the Euler-Lagrange left-hand side.
    """
    _check_boundary(p, x)
    ocp = p.to_ocp()
    u = caputo_derivative(p.kernel, p.grid, LEFT, x, x_deriv)
    env = ocp.system.env(p.grid.nodes, x.values.T, u.values.T)
    N = p.grid.n + 1
    w = ocp.weight.node_values()[:, None]
    lam = -w * _grad(ocp.L, env, ocp.system.u_labels, N)
    c = Candidate(x, u, SampledFn(p.grid, lam), 1)
    return SampledFn(p.grid, -differential_adjoint_residual(ocp, c))


# -- isoperimetric ----------------------------------------------------------------------

@dataclass
class IsoResult:
    x: SampledFn
    u: SampledFn
    multiplier: float
    report: dict


def _endpoint_projection(p: CoVProblem):
    """Affine projection onto controls whose state ends at ``x_b``.

    With ``f = u`` the endpoint is ``x_a + c . u`` where ``c`` is the last row
    of the order-alpha plan; the projection is orthogonal in the inner product
    weighted by trapezoid weights times ``w``, matching the sweep direction.
    """
    c = build_plan(p.kernel, p.grid, LEFT).row(p.grid.n)
    w = weight_w(p.kernel, p.grid).node_values()
    metric = p.grid.trap_weights * np.maximum(np.abs(w), 1e-12 * np.max(np.abs(w)))
    q = c / metric
    denom = float(c @ q)
    target = np.asarray(p.x_b) - np.asarray(p.x_a)

    def project(U: np.ndarray) -> np.ndarray:
        U = np.array(U, dtype=float)
        defect = c @ U - target
        return U - np.outer(q, defect / denom)

    return project


def augmented_el_residual(p: IsoProblem, x: SampledFn, multiplier: float) -> SampledFn:
    return el_residual(p.base, x, extra=BinOp("*", Num(float(multiplier)), p.y))


def solve_isoperimetric(p: IsoProblem, lambda_bracket, tol: float = 1e-8, inner_tol: float = 1e-8,
                        step: float = 0.5, max_outer: int = 60, max_inner: int = 2000) -> IsoResult:
    """Shoot on a constant multiplier until the constraint defect is below ``tol``.

    For fixed multiplier ``m`` the sweep maximises ``int w L + m int y`` with
    the endpoint enforced by projection; the outer loop is Illinois regula
    falsi on ``z(b) - l`` where ``z(b)`` is the order-alpha integral of ``y``.
    """
    base = p.base
    lo, hi = (float(v) for v in lambda_bracket)
    if not lo < hi:
        raise ValidationError("bracket must satisfy lo < hi")
    project = _endpoint_projection(base)
    row = build_plan(base.kernel, base.grid, LEFT).row(base.grid.n)
    y_u = p.y.rename({"v": "u"})
    state = {"u": None, "inner": 0}

    def run(m: float):
        ocp = base.to_ocp(BinOp("*", Num(m), p.y), project)
        if state["u"] is None:
            slope = (np.asarray(base.x_b) - np.asarray(base.x_a)) / base.grid.length
            u0 = np.tile(slope, (base.grid.n + 1, 1))
        else:
            u0 = state["u"]
        res = solve_ocp(ocp, SampledFn(base.grid, u0), step=step, tol=inner_tol, max_iter=max_inner)
        if not res.converged:
            raise ConvergenceError(f"inner sweep did not reach tolerance at multiplier {m:.6g}",
                                   iteration=res.iterations)
        cand = res.candidate
        state["u"] = cand.u.values
        state["inner"] += res.iterations
        env = ocp.system.env(base.grid.nodes, cand.x.values.T, cand.u.values.T)
        yv = np.broadcast_to(np.asarray(evaluate(y_u, env), dtype=float), (base.grid.n + 1,))
        return float(row @ yv) - p.l, res

    f_lo, r_lo = run(lo)
    best = (lo, f_lo, r_lo)
    if abs(f_lo) > tol:
        f_hi, r_hi = run(hi)
        if abs(f_hi) < abs(f_lo):
            best = (hi, f_hi, r_hi)
        if abs(f_hi) > tol:
            if np.sign(f_lo) == np.sign(f_hi):
                raise ValidationError(
                    f"bracket does not enclose a root: defects {f_lo:.3e} and {f_hi:.3e}")
            side = 0
            for outer in range(max_outer):
                m = (lo * f_hi - hi * f_lo) / (f_hi - f_lo)
                f_m, r_m = run(m)
                best = (m, f_m, r_m)
                if abs(f_m) <= tol:
                    break
                if np.sign(f_m) == np.sign(f_hi):
                    hi, f_hi = m, f_m
                    if side == -1:
                        f_lo *= 0.5
                    side = -1
                else:
                    lo, f_lo = m, f_m
                    if side == 1:
                        f_hi *= 0.5
                    side = 1
            else:
                raise ConvergenceError("multiplier shooting did not converge", iteration=max_outer)
    m, defect, res = best
    cand = res.candidate
    degenerate = abs(m) <= 1e-8 * max(1.0, abs(lo), abs(hi))
    if degenerate:
        warnings.warn("constraint inactive: multiplier is numerically zero", RuntimeWarning,
                      stacklevel=2)
    const = SampledFn(base.grid, np.full(base.grid.n + 1, m))
    mult_res = rl_derivative(base.kernel, base.grid, RIGHT, const).values[:-1]
    report = {
        "lambda": m,
        "defect": defect,
        "opt_res": res.opt_res,
        "J": res.J,
        "degenerate": bool(degenerate),
        "inner_iterations": state["inner"],
        "multiplier_derivative_res": float(np.max(np.abs(mult_res))),
    }
    return IsoResult(cand.x, cand.u, m, report)
