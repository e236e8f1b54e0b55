"""Analytic kernels: power-series coefficients, Gamma transforms and duals.

A kernel is the truncated power series ``A(x) = sum a_n x^n`` together with
the order ``alpha`` and the exponent ``beta`` that enter the weight
``(t - s)**(alpha - 1) * A((t - s)**beta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import GammaOverflowError, ValidationError

__all__ = [
    "AnalyticKernel",
    "GammaSeries",
    "SemigroupReport",
    "make_kernel",
    "rl_kernel",
    "exp_kernel",
    "kernel_from_dict",
    "gamma_transform",
    "dual_kernel",
    "dual_identity_residuals",
    "series_tail_bound",
    "semigroup_check",
    "rl_family",
    "tempered_family",
    "constant_family",
]


@dataclass(frozen=True)
class AnalyticKernel:
    coeffs: tuple
    alpha: float
    beta: float
    radius_hint: float
    name: str = "custom"

    def __post_init__(self):
        if len(self.coeffs) == 0:
            raise ValidationError("kernel needs at least one coefficient")
        if not 0.0 < self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.beta >= 0.0:
            raise ValidationError(f"beta must be >= 0, got {self.beta}")
        if not self.radius_hint > 0.0:
            raise ValidationError(f"radius_hint must be > 0, got {self.radius_hint}")
        if not all(math.isfinite(c) for c in self.coeffs):
            raise ValidationError("kernel coefficients must be finite")

    @property
    def a(self) -> np.ndarray:
        return np.asarray(self.coeffs, dtype=float)

    @property
    def length(self) -> int:
        return len(self.coeffs)

    def __call__(self, x):
        """Evaluate the truncated series by Horner's rule."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c in reversed(self.coeffs):
            out = out * x + c
        return out if out.ndim else float(out)

    def at_one(self) -> float:
        return float(math.fsum(self.coeffs))

    def check_interval(self, length: float) -> None:
        """Reject intervals whose ``length**beta`` leaves the convergence disc."""
        if not length ** self.beta < self.radius_hint:
            raise ValidationError(
                f"interval length {length} violates L**beta < R "
                f"({length ** self.beta} >= {self.radius_hint})"
            )

    def with_alpha(self, alpha: float) -> "AnalyticKernel":
        return AnalyticKernel(self.coeffs, alpha, self.beta, self.radius_hint, self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "coeffs": list(self.coeffs),
            "alpha": self.alpha,
            "beta": self.beta,
            "radius": self.radius_hint,
            "truncation": self.length - 1,
        }


@dataclass(frozen=True)
class GammaSeries:
    """Coefficients ``a_n * Gamma(beta*n + sigma)``."""

    terms: np.ndarray = field(repr=False)
    sigma: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.terms)):
            raise GammaOverflowError("Gamma-weighted coefficients overflow")


def make_kernel(coeffs: Sequence[float], alpha: float, beta: float,
                radius_hint: float = math.inf, name: str = "custom") -> AnalyticKernel:
    return AnalyticKernel(tuple(float(c) for c in coeffs), float(alpha), float(beta),
                          float(radius_hint), name)


def rl_kernel(alpha: float, beta: float = 0.0, normalized: bool = False) -> AnalyticKernel:
    """Constant series ``A = 1`` (or ``1/Gamma(alpha)`` when normalized).

    With ``normalized=True`` and ``beta = 0`` the kernel integral is the
    classical Riemann-Liouville integral.
    """
    c = math.exp(-math.lgamma(alpha)) if normalized else 1.0
    return make_kernel([c], alpha, beta, math.inf, "rl")


def exp_kernel(alpha: float, beta: float, truncation: int = 40) -> AnalyticKernel:
    coeffs = [math.exp(-math.lgamma(n + 1)) for n in range(truncation + 1)]
    return make_kernel(coeffs, alpha, beta, math.inf, "exp")


def kernel_from_dict(obj: dict) -> AnalyticKernel:
    """Build a kernel from its JSON object form.

    ``{"name": "rl"|"exp"|"custom", "coeffs": [...], "alpha": .., "beta": ..,
    "radius": .., "truncation": n}``; named kernels may omit ``coeffs``.
    """
    try:
        name = obj.get("name", "custom")
        alpha = float(obj["alpha"])
        beta = float(obj.get("beta", 0.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad kernel object: {exc}") from exc
    radius = float(obj.get("radius", math.inf))
    if "coeffs" in obj:
        coeffs = [float(c) for c in obj["coeffs"]]
        if "truncation" in obj:
            coeffs = coeffs[: int(obj["truncation"]) + 1]
        return make_kernel(coeffs, alpha, beta, radius, name)
    if name == "rl":
        k = rl_kernel(alpha, beta, normalized=bool(obj.get("normalized", False)))
        return make_kernel(k.coeffs, alpha, beta, radius, "rl")
    if name == "exp":
        k = exp_kernel(alpha, beta, int(obj.get("truncation", 40)))
        return make_kernel(k.coeffs, alpha, beta, radius, "exp")
    raise ValidationError(f"kernel '{name}' requires explicit coeffs")


def _gamma_weighted(a: np.ndarray, beta: float, sigma: float) -> np.ndarray:
    n = np.arange(len(a))
    args = beta * n + sigma
    if np.any(args <= 0):
        raise ValidationError("Gamma argument beta*n + sigma must be positive")
    with np.errstate(over="ignore", divide="ignore"):
        mag = np.where(a == 0, 0.0, np.exp(np.log(np.abs(np.where(a == 0, 1.0, a))) + gammaln(args)))
    out = np.sign(a) * mag
    if not np.all(np.isfinite(out)):
        bad = int(np.argmax(~np.isfinite(out)))
        raise GammaOverflowError(
            f"Gamma-weighted coefficient {bad} overflows; reduce the truncation", node=bad)
    return out


def gamma_transform(K: AnalyticKernel, sigma: float) -> GammaSeries:
    return GammaSeries(_gamma_weighted(K.a, K.beta, sigma), float(sigma))


def dual_kernel(K: AnalyticKernel, n_terms: int | None = None) -> AnalyticKernel:
    """Kernel ``Abar`` with ``A_Gamma * Abar_Gamma = 1``.

    ``n_terms`` is the highest coefficient index computed (default: the
    source kernel's). Source coefficients beyond the stored length count
    as zero. The result carries order ``1 - alpha``.
    """
    if K.alpha >= 1.0:
        raise ValidationError("alpha = 1 has no dual kernel (classical limit)")
    if K.coeffs[0] == 0.0:
        raise ValidationError("kernel with a_0 = 0 is not dualizable")
    if n_terms is None:
        n_terms = K.length - 1
    N = n_terms + 1
    a = np.zeros(N)
    m = min(N, K.length)
    a[:m] = K.a[:m]
    c = _gamma_weighted(a, K.beta, K.alpha)
    d = np.zeros(N)
    d[0] = 1.0 / c[0]
    for k in range(1, N):
        d[k] = -np.dot(c[1:k + 1], d[k - 1::-1]) / c[0]
    if not np.all(np.isfinite(d)):
        raise GammaOverflowError("dual coefficients overflow; reduce n_terms")
    lg = gammaln(K.beta * np.arange(N) + 1.0 - K.alpha)
    with np.errstate(over="ignore", under="ignore"):
        abar = d * np.exp(-lg)
    if not np.all(np.isfinite(abar)):
        raise GammaOverflowError("dual coefficients overflow; reduce n_terms")
    return make_kernel(abar, 1.0 - K.alpha, K.beta, K.radius_hint, f"dual({K.name})")


def dual_identity_residuals(K: AnalyticKernel, Kbar: AnalyticKernel, scaled: bool = False) -> np.ndarray:
    """Entries of ``sum_{m+n=k} a_m G(bm+alpha) abar_n G(bn+1-alpha) - delta_k0``.

    With ``scaled=True`` each entry is divided by ``max(1, sum |summands|)``,
    i.e. measured against the magnitude that floating-point summation can
    resolve.
    """
    N = Kbar.length
    a = np.zeros(N)
    m = min(N, K.length)
    a[:m] = K.a[:m]
    c = _gamma_weighted(a, K.beta, K.alpha)
    d = _gamma_weighted(Kbar.a, Kbar.beta, 1.0 - K.alpha)
    res = np.empty(N)
    for k in range(N):
        terms = c[:k + 1] * d[k::-1]
        r = math.fsum(terms) - (1.0 if k == 0 else 0.0)
        if scaled:
            r /= max(1.0, float(np.sum(np.abs(terms))))
        res[k] = r
    return res


def series_tail_bound(K: AnalyticKernel, n_trunc: int, interval_length: float,
                      order: float | None = None) -> float:
    """Sup-norm bound for the series terms dropped after index ``n_trunc``.

    Applies to a unit sup-norm integrand: the term of index n contributes at
    most ``|a_n| L**(order + n*beta) / (order + n*beta)``.
    """
    K.check_interval(interval_length)
    order = K.alpha if order is None else order
    if n_trunc + 1 >= K.length:
        return 0.0
    n = np.arange(n_trunc + 1, K.length)
    mu = order + n * K.beta
    with np.errstate(under="ignore"):
        terms = np.abs(K.a[n_trunc + 1:]) * np.exp(mu * math.log(interval_length)) / mu
    return float(np.sum(terms))


# -- semigroup condition ---------------------------------------------------

Family = Callable[[float, float, int], np.ndarray]


def rl_family(order: float, beta: float, n: int) -> np.ndarray:
    """``a_0 = 1/Gamma(order)``, higher coefficients zero."""
    out = np.zeros(n + 1)
    out[0] = math.exp(-math.lgamma(order))
    return out


def tempered_family(lam: float) -> Family:
    """``a_n(s) = (lam*s)**n / (n! Gamma(s + n*beta))``.

    Satisfies the index-symmetric form of the semigroup condition for every
    ``beta``.
    """
    def family(order, beta, n):
        k = np.arange(n + 1)
        with np.errstate(divide="ignore"):
            logs = k * np.log(abs(lam * order)) if lam != 0 else np.where(k == 0, 0.0, -np.inf)
        return np.sign(lam * order) ** k * np.exp(logs - gammaln(k + 1) - gammaln(order + k * beta))
    return family


def constant_family(coeffs: Sequence[float]) -> Family:
    """Same coefficients at every order."""
    coeffs = np.asarray(coeffs, dtype=float)

    def family(order, beta, n):
        out = np.zeros(n + 1)
        m = min(n + 1, len(coeffs))
        out[:m] = coeffs[:m]
        return out
    return family


@dataclass
class SemigroupReport:
    residuals: np.ndarray
    tol: float
    variant: str

    @property
    def passed(self) -> bool:
        return bool(np.all(self.residuals <= self.tol))

    def first_failure(self):
        bad = np.nonzero(self.residuals > self.tol)[0]
        return int(bad[0]) if len(bad) else None


def semigroup_check(family: Family, alpha1: float, alpha2: float, beta: float,
                    k_max: int, tol: float = 1e-12, variant: str = "printed") -> SemigroupReport:
    """Per-index residuals of the coefficient condition for composing orders.

    ``variant="printed"`` pairs ``Gamma(alpha1 + n beta) Gamma(alpha2 + n beta)``
    (one summation index in both factors); ``variant="symmetric"`` uses
    ``Gamma(alpha2 + m beta)`` for the second factor.
    """
    if variant not in ("printed", "symmetric"):
        raise ValidationError(f"unknown variant {variant!r}")
    a1 = np.asarray(family(alpha1, beta, k_max), dtype=float)
    a2 = np.asarray(family(alpha2, beta, k_max), dtype=float)
    a12 = np.asarray(family(alpha1 + alpha2, beta, k_max), dtype=float)
    res = np.empty(k_max + 1)
    for k in range(k_max + 1):
        total = []
        for n in range(k + 1):
            m = k - n
            g2 = alpha2 + (n if variant == "printed" else m) * beta
            total.append(_prod_gamma(a1[n] * a2[m], [alpha1 + n * beta, g2]))
        rhs = _prod_gamma(a12[k], [alpha1 + alpha2 + k * beta])
        res[k] = abs(math.fsum(total) - rhs)
    if not np.all(np.isfinite(res)):
        raise GammaOverflowError("semigroup residual overflow; reduce k_max")
    return SemigroupReport(res, tol, variant)


def _prod_gamma(coef: float, args) -> float:
    if coef == 0.0:
        return 0.0
    return math.copysign(math.exp(math.log(abs(coef)) + sum(math.lgamma(x) for x in args)), coef)
