"""Discretised general-kernel fractional operators on uniform grids.

Left integrals are realised as

    (I x)(t_k) ~= sum_j W[k, j] x(t_j)

with product-integration weights: the kernel series is expanded term by
term and every power ``(t - s)**(mu - 1)`` is integrated exactly against the
piecewise-linear interpolant of ``x``. Right-sided operators are the mirror
image of the left ones.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .errors import ValidationError
from .grid import Grid, SampledFn, trapezoid
from .kernel import (AnalyticKernel, dual_kernel, make_kernel, semigroup_check,
                     series_tail_bound)

__all__ = [
    "OperatorPlan",
    "build_plan",
    "apply",
    "direct_integral",
    "derivative_samples",
    "caputo_derivative",
    "rl_derivative",
    "duality_residual",
    "ibp_residual",
    "GronwallResult",
    "gronwall_bound",
    "verify_gronwall",
]

LEFT, RIGHT = "left", "right"


def _check_side(side: str) -> str:
    if side not in (LEFT, RIGHT):
        raise ValidationError(f"side must be 'left' or 'right', got {side!r}")
    return side


def power_weights(mu: float, n: int, h: float):
    """Product-integration weights for the kernel ``r**(mu - 1)``.

    Returns ``(g, e)``: ``g[m]`` multiplies ``x(t_{k-m})`` for ``k - m >= 1``
    and ``e[k]`` multiplies ``x(t_0)`` in row ``k``. Both are written as
    ``h**mu / (mu (mu + 1))`` times a second difference of ``m**(mu + 1)``,
    evaluated with ``expm1/log1p`` to keep the cancellation benign.
    """
    p = mu + 1.0
    m = np.arange(1, n + 1, dtype=float)
    log_s = mu * math.log(h) - math.log(mu * p)
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        up = np.expm1(p * np.log1p(1.0 / m))
        down = np.expm1(p * np.log1p(-1.0 / m))
        scale = np.exp(log_s + p * np.log(m))
        g_tail = scale * (up + down)
        e_tail = scale * (down + p / m)
    g = np.empty(n + 1)
    g[0] = math.exp(log_s)
    g[1:] = g_tail
    e = np.zeros(n + 1)
    e[1:] = e_tail
    return g, e


def _series_weights(K: AnalyticKernel, order: float, n_trunc: int, grid: Grid):
    g = np.zeros(grid.n + 1)
    e = np.zeros(grid.n + 1)
    for i in range(n_trunc + 1):
        a_i = K.coeffs[i]
        if a_i == 0.0:
            continue
        gi, ei = power_weights(order + i * K.beta, grid.n, grid.h)
        g += a_i * gi
        e += a_i * ei
    return g, e


def _apply_left(g: np.ndarray, e: np.ndarray, V: np.ndarray) -> np.ndarray:
    n = len(g) - 1
    out = np.zeros_like(V)
    for c in range(V.shape[1]):
        v = V[:, c]
        out[1:, c] = e[1:] * v[0] + np.convolve(g[:n], v[1:])[:n]
    return out


@dataclass(frozen=True)
class OperatorPlan:
    kernel: AnalyticKernel
    grid: Grid
    side: str
    order: float
    g: np.ndarray
    e: np.ndarray
    truncation: int
    tail_estimate: float

    def apply(self, x: SampledFn) -> SampledFn:
        x.require_grid(self.grid)
        V = x.values
        if self.side == LEFT:
            out = _apply_left(self.g, self.e, V)
        else:
            out = _apply_left(self.g, self.e, V[::-1])[::-1]
        return SampledFn(self.grid, out)

    def row(self, k: int) -> np.ndarray:
        """Row ``k`` of the weight matrix."""
        n = self.grid.n
        if self.side == RIGHT:
            return self._left_row(n - k)[::-1]
        return self._left_row(k)

    def _left_row(self, k: int) -> np.ndarray:
        r = np.zeros(self.grid.n + 1)
        if k == 0:
            return r
        r[1:k + 1] = self.g[k - 1::-1]
        r[0] = self.e[k]
        return r

    def matrix(self) -> np.ndarray:
        return np.array([self.row(k) for k in range(self.grid.n + 1)])


def build_plan(K: AnalyticKernel, grid: Grid, side: str = LEFT, order: float | None = None,
               n_trunc: int | None = None) -> OperatorPlan:
    """Weights of ``int (t-s)**(order-1) A((t-s)**beta) x(s) ds`` on ``grid``."""
    _check_side(side)
    order = K.alpha if order is None else float(order)
    if not order > 0:
        raise ValidationError(f"order must be positive, got {order}")
    K.check_interval(grid.length)
    n_trunc = K.length - 1 if n_trunc is None else int(n_trunc)
    if not 0 <= n_trunc <= K.length - 1:
        raise ValidationError(f"n_trunc must lie in [0, {K.length - 1}]")
    g, e = _series_weights(K, order, n_trunc, grid)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(e))):
        raise ValidationError("plan weights are not finite; reduce the truncation")
    tail = series_tail_bound(K, n_trunc, grid.length, order)
    g.setflags(write=False)
    e.setflags(write=False)
    return OperatorPlan(K, grid, side, order, g, e, n_trunc, tail)


def apply(plan: OperatorPlan, x: SampledFn) -> SampledFn:
    return plan.apply(x)


# -- direct quadrature (oracle path) ---------------------------------------

def _cell_moments(K: AnalyticKernel, order: float, grid: Grid, nq: int = 20):
    """Moments of the full weight ``r**(order-1) A(r**beta)`` on every cell.

    Cell ``m`` covers ``r in [m h, (m+1) h]``; ``p[m]`` pairs with the node at
    ``r = m h`` and ``q[m]`` with the node at ``r = (m+1) h``. The cell touching
    the singularity uses Gauss-Jacobi, the others Gauss-Legendre.
    """
    h, n = grid.h, grid.n
    # singular cell
    xj, wj = roots_jacobi(nq, 0.0, order - 1.0)
    r0 = 0.5 * h * (1.0 + xj)
    f0 = K(r0 ** K.beta) if K.beta != 0 else np.full_like(r0, K.at_one())
    s0 = (0.5 * h) ** order
    p = np.empty(n)
    q = np.empty(n)
    p[0] = s0 * np.sum(wj * f0 * (h - r0) / h)
    q[0] = s0 * np.sum(wj * f0 * r0 / h)
    if n > 1:
        xl, wl = roots_legendre(nq)
        m = np.arange(1, n)[:, None]
        r = (m + 0.5 * (1.0 + xl[None, :])) * h
        kern = r ** (order - 1.0) * (K(r ** K.beta) if K.beta != 0 else K.at_one())
        frac = (r - m * h) / h
        p[1:] = 0.5 * h * np.sum(wl * kern * (1.0 - frac), axis=1)
        q[1:] = 0.5 * h * np.sum(wl * kern * frac, axis=1)
    return p, q


def direct_integral(K: AnalyticKernel, grid: Grid, side: str, order: float | None,
                    x: SampledFn) -> SampledFn:
    """Evaluate the kernel integral cell by cell against the unexpanded weight."""
    _check_side(side)
    x.require_grid(grid)
    order = K.alpha if order is None else float(order)
    K.check_interval(grid.length)
    p, q = _cell_moments(K, order, grid)
    V = x.values if side == LEFT else x.values[::-1]
    out = np.zeros_like(V)
    for k in range(1, grid.n + 1):
        # cells m = 0..k-1 between t_{k-m-1} and t_{k-m}
        out[k] = p[:k] @ V[k:0:-1] + q[:k] @ V[k - 1::-1]
    if side == RIGHT:
        out = out[::-1]
    return SampledFn(grid, out)


# -- derivatives ------------------------------------------------------------

def derivative_samples(x: SampledFn) -> SampledFn:
    """Second-order finite differences (one-sided second order at the ends)."""
    return SampledFn(x.grid, np.gradient(x.values, x.grid.h, axis=0, edge_order=2))


def _classical_limit(K: AnalyticKernel) -> bool:
    if K.alpha == 1.0:
        if K.beta != 0.0:
            raise ValidationError("alpha = 1 requires beta = 0 (classical limit)")
        if K.at_one() == 0.0:
            raise ValidationError("classical limit needs A(1) != 0")
        return True
    return False


def dual_plan(K: AnalyticKernel, grid: Grid, side: str) -> OperatorPlan:
    """Plan of the dual-kernel integral of order ``1 - alpha``."""
    Kbar = dual_kernel(K)
    return build_plan(Kbar, grid, side, order=1.0 - K.alpha)


def caputo_derivative(K: AnalyticKernel, grid: Grid, side: str, x: SampledFn,
                      x_deriv: SampledFn | None = None) -> SampledFn:
    _check_side(side)
    x.require_grid(grid)
    dx = derivative_samples(x) if x_deriv is None else x_deriv
    dx.require_grid(grid)
    sign = 1.0 if side == LEFT else -1.0
    if _classical_limit(K):
        return dx * (1.0 / K.at_one())
    return dual_plan(K, grid, side).apply(dx) * sign


def rl_derivative(K: AnalyticKernel, grid: Grid, side: str, x: SampledFn) -> SampledFn:
    _check_side(side)
    x.require_grid(grid)
    sign = 1.0 if side == LEFT else -1.0
    if _classical_limit(K):
        return derivative_samples(x) * (sign / K.at_one())
    F = dual_plan(K, grid, side).apply(x)
    return derivative_samples(F) * sign


# -- identities ---------------------------------------------------------------

def _scalar(f: SampledFn, name: str) -> np.ndarray:
    if f.dim != 1:
        raise ValidationError(f"{name} must be scalar-valued")
    return f.column(0)


def duality_residual(K: AnalyticKernel, grid: Grid, order: float | None,
                     x: SampledFn, y: SampledFn) -> float:
    """``|int x (I_left y) - int y (I_right x)|`` with trapezoid outer integrals."""
    xs, ys = _scalar(x, "x"), _scalar(y, "y")
    y.require_grid(grid)
    x.require_grid(grid)
    left = build_plan(K, grid, LEFT, order).apply(y).column(0)
    right = build_plan(K, grid, RIGHT, order).apply(x).column(0)
    w = grid.trap_weights
    return abs(float(w @ (xs * left) - w @ (ys * right)))


def ibp_residual(K: AnalyticKernel, grid: Grid, x: SampledFn, y: SampledFn,
                 y_deriv: SampledFn | None = None, x_deriv: SampledFn | None = None) -> float:
    """Defect of the integration-by-parts formula for the left Caputo derivative.

    The right Riemann-Liouville derivative of ``x`` is split as
    ``Kbar(b - t) x(b) + (right Caputo x)(t)``, where ``Kbar(r) = r**(-alpha)
    Abar(r**beta)``; the singular first part is integrated against ``y`` by
    product integration, the regular part by the trapezoid rule.
    """
    if not 0.0 < K.alpha < 1.0:
        raise ValidationError("integration by parts needs 0 < alpha < 1")
    xs, ys = _scalar(x, "x"), _scalar(y, "y")
    w = grid.trap_weights
    n = grid.n
    Kbar = dual_kernel(K)
    left_bar = build_plan(Kbar, grid, LEFT, 1.0 - K.alpha)
    right_bar = build_plan(Kbar, grid, RIGHT, 1.0 - K.alpha)

    lhs = w @ (xs * caputo_derivative(K, grid, LEFT, y, y_deriv).column(0))
    F = right_bar.apply(x).column(0)
    boundary = ys[n] * F[n] - ys[0] * F[0]
    singular = xs[n] * float(left_bar.row(n) @ ys)
    regular = w @ (ys * caputo_derivative(K, grid, RIGHT, x, x_deriv).column(0))
    return abs(float(lhs - boundary - singular - regular))


# -- Gronwall ---------------------------------------------------------------------

@dataclass
class GronwallResult:
    bound: SampledFn
    terms_used: int
    tail_estimate: float
    semigroup_ok: bool | None


def gronwall_bound(K: AnalyticKernel, grid: Grid, a_fn: SampledFn, g_fn: SampledFn,
                   k_max: int, family=None, composition: str = "series") -> GronwallResult:
    """``a + sum_{k=1}^{k_max} g**k (I^{k alpha} a)`` on ``[grid.a, grid.b]``.

    ``family(order, beta, n)`` supplies the kernel coefficients at order
    ``k*alpha``; without it the coefficients of ``K`` are used at every
    order. The composition behind the bound needs the semigroup condition;
    when it fails a warning is emitted and the sum is still returned.

    With ``composition="series"`` every ``I^{k alpha}`` gets its own plan.
    ``composition="iterated"`` uses the k-fold power of the order-alpha plan
    instead; that variant is an exact upper bound for sampled ``u`` obeying
    the discrete inequality ``u <= a + g * (plan u)`` when the weights are
    non-negative.
    """
    if composition not in ("series", "iterated"):
        raise ValidationError(f"unknown composition {composition!r}")
    a = _scalar(a_fn, "a")
    g = _scalar(g_fn, "g")
    a_fn.require_grid(grid)
    g_fn.require_grid(grid)
    T = grid.length
    if np.any(a < 0) or np.any(g < 0):
        raise ValidationError("a and g must be non-negative")
    if np.any(np.diff(g) < 0):
        raise ValidationError("g must be monotone non-decreasing")
    M = float(np.max(g))
    if not M < T ** -K.alpha:
        raise ValidationError(f"max g = {M} violates max g < 1/T**alpha = {T ** -K.alpha}")

    semigroup_ok = None
    if family is not None:
        rep = semigroup_check(family, K.alpha, K.alpha, K.beta, K.length - 1, tol=1e-10,
                              variant="symmetric")
        semigroup_ok = rep.passed
    else:
        semigroup_ok = semigroup_check(
            lambda o, b, n: np.pad(K.a, (0, max(0, n + 1 - K.length)))[: n + 1],
            K.alpha, K.alpha, K.beta, K.length - 1, tol=1e-10, variant="symmetric").passed
    if not semigroup_ok:
        warnings.warn("kernel family fails the semigroup condition; the bound is not guaranteed",
                      RuntimeWarning, stacklevel=2)

    total = a.copy()
    gk = np.ones_like(g)
    used = 0
    base = build_plan(K, grid, LEFT) if composition == "iterated" else None
    power = a_fn
    for k in range(1, k_max + 1):
        order = k * K.alpha
        if base is not None:
            power = base.apply(power)
            gk = gk * g
            term = gk * power.column(0)
            total += term
            used = k
            if np.max(np.abs(term)) < 1e-14:
                break
            continue
        if family is not None:
            Kk = make_kernel(family(order, K.beta, K.length - 1), min(order, 1.0), K.beta,
                             K.radius_hint, K.name)
        else:
            Kk = K
        gk = gk * g
        term = gk * build_plan(Kk, grid, LEFT, order).apply(a_fn).column(0)
        total += term
        used = k
        if np.max(np.abs(term)) < 1e-14:
            break

    mu = float(np.sum(np.abs(K.a) * T ** (K.beta * np.arange(K.length))))
    q = M * T ** K.alpha
    int_a = float(trapezoid(SampledFn(grid, np.abs(a)))[0])
    tail = mu / T * q ** (used + 1) / (1.0 - q) * int_a
    return GronwallResult(SampledFn(grid, total), used, tail, semigroup_ok)


def verify_gronwall(u: SampledFn, bound) -> bool:
    if isinstance(bound, GronwallResult):
        bound = bound.bound
    u.require_grid(bound.grid)
    return bool(np.all(u.values <= bound.values + 1e-9))
