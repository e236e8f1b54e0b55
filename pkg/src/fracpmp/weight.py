"""The objective weight ``w(t) = (b-t)**(alpha-1) A((b-t)**beta) / (Gamma(alpha) A(1))``.

Kept in factored form: integrals of ``w * phi`` are computed by product
integration (exact for ``phi`` piecewise linear), never by sampling ``w`` at
its singular endpoint.
"""

from __future__ import annotations

import math
from functools import cached_property

import numpy as np

from .errors import ValidationError
from .grid import Grid, SampledFn
from .kernel import AnalyticKernel


class SingularWeight:
    def __init__(self, kernel: AnalyticKernel, grid: Grid):
        A1 = kernel.at_one()
        if A1 == 0.0:
            raise ValidationError("weight needs A(1) != 0")
        kernel.check_interval(grid.length)
        self.kernel = kernel
        self.grid = grid
        self.norm = math.gamma(kernel.alpha) * A1

    @property
    def exponent(self) -> float:
        """Exponent of the singular factor ``(b - t)``."""
        return self.kernel.alpha - 1.0

    @property
    def singular(self) -> bool:
        return self.kernel.alpha < 1.0

    def smooth_factor(self, t):
        r = self.grid.b - np.asarray(t, dtype=float)
        return self.kernel(r ** self.kernel.beta) / self.norm

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.singular and np.any(t >= self.grid.b):
            raise ValidationError("w is singular at t = b")
        r = self.grid.b - t
        return r ** self.exponent * self.smooth_factor(t)

    @cached_property
    def cell_weights(self):
        """``(lo, hi)`` per cell: ``int_cell w phi = lo[j] phi_j + hi[j] phi_{j+1}``."""
        K, g = self.kernel, self.grid
        n, h = g.n, g.h
        j = np.arange(n)
        c = (n - j - 1) * h   # r at t_{j+1}
        d = (n - j) * h       # r at t_j
        lo = np.zeros(n)
        hi = np.zeros(n)
        for i, a_i in enumerate(K.coeffs):
            if a_i == 0.0:
                continue
            mu = K.alpha + i * K.beta
            P = lambda r: r ** mu / mu
            Q = lambda r: r ** (mu + 1.0) / (mu * (mu + 1.0))
            lo += a_i * (h * P(d) - Q(d) + Q(c)) / h
            hi += a_i * (Q(d) - Q(c) - h * P(c)) / h
        return lo / self.norm, hi / self.norm

    def tail_integrals(self, phi) -> np.ndarray:
        """``int_{t_k}^b w phi`` for every node ``k``; ``phi`` is (N,) or (N, d)."""
        phi = np.asarray(phi.values if isinstance(phi, SampledFn) else phi, dtype=float)
        lo, hi = self.cell_weights
        shape = (-1,) + (1,) * (phi.ndim - 1)
        cells = lo.reshape(shape) * phi[:-1] + hi.reshape(shape) * phi[1:]
        out = np.zeros_like(phi)
        out[:-1] = np.cumsum(cells[::-1], axis=0)[::-1]
        return out

    def integrate(self, phi) -> np.ndarray:
        return self.tail_integrals(phi)[0]

    def node_values(self) -> np.ndarray:
        """``w`` at the nodes; at a singular ``t = b`` the mean over the last cell."""
        t = self.grid.nodes
        out = np.empty_like(t)
        if self.singular:
            out[:-1] = self(t[:-1])
            lo, hi = self.cell_weights
            out[-1] = (lo[-1] + hi[-1]) / self.grid.h
        else:
            out[:] = (self.grid.b - t) ** self.exponent * self.smooth_factor(t)
        return out


def weight_w(kernel: AnalyticKernel, grid: Grid) -> SingularWeight:
    return SingularWeight(kernel, grid)
