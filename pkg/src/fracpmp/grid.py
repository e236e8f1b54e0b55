"""Uniform grids, sampled functions and their CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ValidationError

__all__ = ["Grid", "SampledFn", "sample", "trapezoid", "write_csv", "read_csv"]


@dataclass(frozen=True)
class Grid:
    a: float
    b: float
    n: int

    def __post_init__(self):
        if not self.b > self.a:
            raise ValidationError(f"grid needs b > a, got [{self.a}, {self.b}]")
        if int(self.n) != self.n or self.n < 2:
            raise ValidationError(f"grid needs n >= 2 subintervals, got {self.n}")

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.n

    @property
    def length(self) -> float:
        return self.b - self.a

    @cached_property
    def nodes(self) -> np.ndarray:
        t = self.a + np.arange(self.n + 1) * self.h
        t[-1] = self.b
        return t

    @cached_property
    def trap_weights(self) -> np.ndarray:
        w = np.full(self.n + 1, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.a, self.b, self.n * factor)


@dataclass(frozen=True)
class SampledFn:
    """Per-node samples; ``values`` has one row per node, one column per component."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.grid.n + 1:
            raise ValidationError(
                f"expected {self.grid.n + 1} rows of samples, got shape {np.shape(self.values)}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("sampled values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes

    def column(self, i: int = 0) -> np.ndarray:
        return self.values[:, i]

    def require_grid(self, grid: Grid) -> None:
        if self.grid != grid:
            raise ValidationError(f"grid mismatch: {self.grid} vs {grid}")

    def __add__(self, other):
        other.require_grid(self.grid)
        return SampledFn(self.grid, self.values + other.values)

    def __sub__(self, other):
        other.require_grid(self.grid)
        return SampledFn(self.grid, self.values - other.values)

    def __mul__(self, c: float):
        return SampledFn(self.grid, self.values * c)

    __rmul__ = __mul__


def sample(grid: Grid, fn) -> SampledFn:
    """Sample a vectorised callable ``fn(t)`` (scalar or tuple of components)."""
    t = grid.nodes
    out = fn(t)
    if isinstance(out, (tuple, list)):
        out = np.column_stack([np.broadcast_to(np.asarray(c, dtype=float), t.shape) for c in out])
    else:
        out = np.broadcast_to(np.asarray(out, dtype=float), t.shape)
    return SampledFn(grid, np.array(out))


def trapezoid(f: SampledFn) -> np.ndarray:
    """Componentwise trapezoid integral over the whole grid."""
    return f.grid.trap_weights @ f.values


def write_csv(path_or_buf, columns, names) -> None:
    """Write columns with 17 significant digits (round-trip exact doubles)."""
    cols = [np.asarray(c, dtype=float) for c in columns]
    rows = zip(*cols)
    text = io.StringIO()
    text.write(",".join(names) + "\n")
    for row in rows:
        text.write(",".join(f"{v:.17g}" for v in row) + "\n")
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text.getvalue())
    else:
        with open(path_or_buf, "w", newline="") as fh:
            fh.write(text.getvalue())


def read_csv(path, grid: Grid | None = None):
    """Read ``t,v1,...`` back; returns ``(t, values, header)``.

    When ``grid`` is given the ``t`` column must match its nodes.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader if row])
    if data.ndim != 2 or data.shape[1] < 2:
        raise ValidationError(f"{path}: expected at least two columns")
    t, values = data[:, 0], data[:, 1:]
    if grid is not None:
        if len(t) != grid.n + 1 or not np.allclose(t, grid.nodes, rtol=0, atol=1e-12 * max(1.0, abs(grid.b))):
            raise ValidationError(f"{path}: time column does not match the problem grid")
    return t, values, header
