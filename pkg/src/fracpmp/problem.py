"""Problem files: JSON documents binding a kernel, a grid and one task."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ValidationError
from .exprlang import evaluate, parse
from .grid import Grid, SampledFn, read_csv
from .kernel import AnalyticKernel, kernel_from_dict

TASKS = ("operator", "gronwall", "fde", "ocp", "candidate", "cov", "iso", "dual", "semigroup")


@dataclass(frozen=True)
class Problem:
    kernel: AnalyticKernel
    grid: Grid
    task: str
    section: dict
    base_dir: str

    def get(self, key, default=None):
        return self.section.get(key, default)

    def require(self, key):
        if key not in self.section:
            raise ValidationError(f"'{self.task}' section is missing '{key}'")
        return self.section[key]

    def path(self, rel: str) -> str:
        return rel if os.path.isabs(rel) else os.path.join(self.base_dir, rel)


def bundled_fixture(name: str) -> str | None:
    ref = resources.files("fracpmp").joinpath("fixtures", name)
    return str(ref) if ref.is_file() else None


def resolve_path(path: str) -> str:
    """Existing paths win; otherwise a bundled fixture of that file name."""
    if os.path.exists(path):
        return path
    found = bundled_fixture(os.path.basename(path))
    if found is None:
        raise FileNotFoundError(path)
    return found


def load_problem(path: str, grid_n: int | None = None) -> Problem:
    path = resolve_path(path)
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON in {path}: {exc}") from None
    return problem_from_dict(doc, os.path.dirname(os.path.abspath(path)), grid_n)


def problem_from_dict(doc, base_dir: str = ".", grid_n: int | None = None) -> Problem:
    if not isinstance(doc, dict):
        raise ValidationError("problem file must hold a JSON object")
    for key in ("kernel", "interval", "grid"):
        if key not in doc:
            raise ValidationError(f"problem file is missing the '{key}' section")
    tasks = [t for t in TASKS if t in doc]
    if len(tasks) != 1:
        raise ValidationError(f"problem file needs exactly one task section, found {tasks or 'none'}")
    kernel = kernel_from_dict(doc["kernel"])
    try:
        a, b = float(doc["interval"]["a"]), float(doc["interval"]["b"])
        n = int(doc["grid"]["n"]) if grid_n is None else int(grid_n)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad interval/grid section: {exc}") from None
    section = doc[tasks[0]]
    if not isinstance(section, dict):
        raise ValidationError(f"'{tasks[0]}' section must be an object")
    return Problem(kernel, Grid(a, b, n), tasks[0], section, base_dir)


def sampled(problem: Problem, value, dim: int, what: str) -> SampledFn:
    """Samples from a list of expressions in ``t`` or ``{"csv": path}``."""
    grid = problem.grid
    if isinstance(value, dict) and "csv" in value:
        _, values, _ = read_csv(problem.path(value["csv"]), grid)
        if values.shape[1] != dim:
            raise ValidationError(f"{what}: CSV has {values.shape[1]} value columns, expected {dim}")
        return SampledFn(grid, values)
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, list) or len(value) != dim:
        raise ValidationError(f"{what}: expected {dim} expression(s) in t")
    t = grid.nodes
    cols = [np.broadcast_to(np.asarray(evaluate(parse(s), {"t": t}), dtype=float), t.shape)
            for s in value]
    return SampledFn(grid, np.column_stack(cols))
