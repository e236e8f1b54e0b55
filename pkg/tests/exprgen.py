"""Random expression trees for property tests."""

import numpy as np

from fracpmp.exprlang import BinOp, Call, Neg, Num, Var

VARS = [Var("t"), Var("x", 1), Var("x", 2), Var("u", 1)]
DIMS = {"x": 2, "u": 1}
UNARY = ["exp", "sin", "cos", "sqrt", "ln", "abs"]


def random_tree(rng: np.random.Generator, depth: int):
    if depth <= 0 or rng.random() < 0.25:
        if rng.random() < 0.35:
            return Num(float(np.round(rng.uniform(-3, 3), 3)))
        return VARS[rng.integers(len(VARS))]
    kind = rng.random()
    if kind < 0.55:
        op = "+-*/^"[rng.integers(5)]
        left = random_tree(rng, depth - 1)
        if op == "^":
            return BinOp("^", left, Num(float(rng.integers(0, 4))))
        return BinOp(op, left, random_tree(rng, depth - 1))
    if kind < 0.65:
        return Neg(random_tree(rng, depth - 1))
    if kind < 0.72:
        return Call("pow", (random_tree(rng, depth - 1), Num(float(rng.integers(1, 3)))))
    fn = UNARY[rng.integers(len(UNARY))]
    return Call(fn, (random_tree(rng, depth - 1),))


def random_env(rng: np.random.Generator) -> dict:
    return {"t": float(rng.uniform(0.1, 2.0)),
            "x": [float(v) for v in rng.uniform(-2, 2, 2)],
            "u": [float(rng.uniform(-2, 2))]}


LABELS = ["t", "x1", "x2", "u1"]


def shifted(env: dict, label: str, delta: float) -> dict:
    out = {"t": env["t"], "x": list(env["x"]), "u": list(env["u"])}
    if label == "t":
        out["t"] += delta
    else:
        out[label[0]][int(label[1:]) - 1] += delta
    return out
