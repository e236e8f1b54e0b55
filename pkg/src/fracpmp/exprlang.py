"""A small expression language with exact forward-mode derivatives.

Grammar (loosest binding first)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          # right-associative
    atom    := number | name | name '(' args ')' | '(' expr ')'

Variables are ``t`` and indexed families such as ``x1..xn``, ``u1..um``,
``lam1..lamn``; which families exist, and their sizes, is fixed by the
``dims`` mapping handed to :func:`parse`. A bare family name (``x``) is
accepted when that family has exactly one member.

Evaluation accepts floats or numpy arrays for every variable, so an
expression can be evaluated over all grid nodes at once. Domain faults
raise instead of producing NaN.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import DomainFault, ExprSyntaxError, ValidationError

__all__ = [
    "Expr", "Num", "Var", "Neg", "BinOp", "Call",
    "parse", "evaluate", "derive", "gradient", "to_source",
]

FUNCTIONS = {"exp": 1, "ln": 1, "sin": 1, "cos": 1, "sqrt": 1, "abs": 1, "pow": 2}


class Expr:
    """Base of the immutable AST."""

    def __add__(self, other):
        return BinOp("+", self, _lift(other))

    def __mul__(self, other):
        return BinOp("*", self, _lift(other))

    def __rmul__(self, other):
        return BinOp("*", _lift(other), self)

    def variables(self) -> set:
        out = set()
        _collect(self, out)
        return out

    def rename(self, mapping: Mapping[str, str]) -> "Expr":
        """Rename variable families, e.g. ``{"v": "u"}``."""
        return _rename(self, mapping)


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str
    index: int = 0  # 0 for scalar variables such as t; 1-based otherwise

    @property
    def label(self) -> str:
        return self.name if self.index == 0 else f"{self.name}{self.index}"


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    args: tuple


def _lift(v):
    return v if isinstance(v, Expr) else Num(float(v))


def _collect(e, out):
    if isinstance(e, Var):
        out.add(e.label)
    elif isinstance(e, Neg):
        _collect(e.arg, out)
    elif isinstance(e, BinOp):
        _collect(e.left, out)
        _collect(e.right, out)
    elif isinstance(e, Call):
        for a in e.args:
            _collect(a, out)


def _rename(e, mapping):
    if isinstance(e, Var):
        return Var(mapping.get(e.name, e.name), e.index)
    if isinstance(e, Neg):
        return Neg(_rename(e.arg, mapping))
    if isinstance(e, BinOp):
        return BinOp(e.op, _rename(e.left, mapping), _rename(e.right, mapping))
    if isinstance(e, Call):
        return Call(e.fn, tuple(_rename(a, mapping) for a in e.args))
    return e


# -- parsing -------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_][A-Za-z_0-9]*)|(.))")
_NAME = re.compile(r"([A-Za-z_]+?)(\d+)$")


def _tokenize(src: str):
    toks = []
    pos = 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            break
        num, name, op = m.groups()
        start = m.start(m.lastindex)
        if num is not None:
            toks.append(("num", num, start))
        elif name is not None:
            toks.append(("name", name, start))
        elif op is not None:
            if op not in "+-*/^(),":
                raise ExprSyntaxError(f"unexpected character {op!r}", start)
            toks.append(("op", op, start))
        pos = m.end()
    toks.append(("end", "", len(src)))
    return toks


class _Parser:
    def __init__(self, src, dims):
        self.src = src
        self.dims = dict(dims)
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, op):
        tok = self.take()
        if tok[0] == "end":
            raise ExprSyntaxError("unexpected end of input", tok[2])
        if tok[1] != op:
            raise ExprSyntaxError(f"expected {op!r}, found {tok[1]!r}", tok[2])

    def parse(self):
        if not self.src.strip():
            raise ExprSyntaxError("empty expression", 0)
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExprSyntaxError(f"unexpected {tok[1]!r}", tok[2])
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.term())
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.unary())
        return e

    def unary(self):
        if self.peek() == ("op", "-", self.peek()[2]):
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                return self.call(text, pos)
            return self.variable(text, pos)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "end":
            raise ExprSyntaxError("unexpected end of input", pos)
        raise ExprSyntaxError(f"unexpected {text!r}", pos)

    def call(self, name, pos):
        if name not in FUNCTIONS:
            raise ValidationError(f"unknown function {name!r} at offset {pos}")
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == "," and self.peek()[0] == "op":
            self.take()
            args.append(self.expr())
        self.expect(")")
        if len(args) != FUNCTIONS[name]:
            raise ValidationError(f"{name} takes {FUNCTIONS[name]} argument(s), got {len(args)}")
        return Call(name, tuple(args))

    def variable(self, text, pos):
        if text == "t":
            return Var("t", 0)
        m = _NAME.match(text)
        if m and m.group(1) in self.dims:
            family, idx = m.group(1), int(m.group(2))
            if not 1 <= idx <= self.dims[family]:
                raise ValidationError(
                    f"{text} out of declared range {family}1..{family}{self.dims[family]} at offset {pos}")
            return Var(family, idx)
        if text in self.dims and self.dims[text] == 1:
            return Var(text, 1)
        raise ValidationError(f"unknown identifier {text!r} at offset {pos}")


def parse(src: str, dims: Mapping[str, int] | None = None) -> Expr:
    """Parse ``src``; ``dims`` maps family names to their sizes, e.g. ``{"x": 2, "u": 2}``."""
    return _Parser(src, dims or {}).parse()


# -- printing --------------------------------------------------------------------

def to_source(e: Expr) -> str:
    """Fully parenthesised source text that parses back to the same tree."""
    if isinstance(e, Num):
        if e.value < 0 or math.copysign(1.0, e.value) < 0:
            return f"(-{repr(abs(e.value))})"
        return repr(e.value)
    if isinstance(e, Var):
        return e.label
    if isinstance(e, Neg):
        return f"(-{to_source(e.arg)})"
    if isinstance(e, BinOp):
        return f"({to_source(e.left)} {e.op} {to_source(e.right)})"
    if isinstance(e, Call):
        return f"{e.fn}({', '.join(to_source(a) for a in e.args)})"
    raise TypeError(e)


# -- evaluation --------------------------------------------------------------------

class Dual:
    """Value plus a tuple of partial derivatives (scalars or arrays)."""

    __slots__ = ("val", "der")

    def __init__(self, val, der):
        self.val = val
        self.der = der


def _lookup(env, var: Var):
    try:
        if var.index == 0:
            return env[var.name]
        return env[var.name][var.index - 1]
    except (KeyError, IndexError, TypeError):
        raise ValidationError(f"no value supplied for variable {var.label}") from None


def _any(cond):
    return bool(np.any(cond))


def _integral_valued(x):
    return bool(np.all(np.floor(x) == x))


def _pow_val(a, b):
    if _any((a == 0) & (np.asarray(b) < 0)):
        raise DomainFault("0 raised to a negative power")
    if _any(np.asarray(a) < 0) and not _integral_valued(np.asarray(b)):
        raise DomainFault("negative base with non-integer exponent")
    with np.errstate(over="raise"):
        try:
            return np.power(a, b) if isinstance(a, np.ndarray) or isinstance(b, np.ndarray) else float(a) ** float(b)
        except (FloatingPointError, OverflowError):
            raise DomainFault("overflow in power") from None


def _val(e, env):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return _lookup(env, e)
    if isinstance(e, Neg):
        return -_val(e.arg, env)
    if isinstance(e, BinOp):
        a, b = _val(e.left, env), _val(e.right, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if _any(np.asarray(b) == 0):
                raise DomainFault("division by zero")
            return a / b
        return _pow_val(a, b)
    if isinstance(e, Call):
        args = [_val(a, env) for a in e.args]
        return _call_val(e.fn, args)
    raise TypeError(e)


def _call_val(fn, args):
    x = args[0]
    if fn == "exp":
        with np.errstate(over="raise"):
            try:
                return np.exp(x) if isinstance(x, np.ndarray) else math.exp(x)
            except (FloatingPointError, OverflowError):
                raise DomainFault("overflow in exp") from None
    if fn == "ln":
        if _any(np.asarray(x) <= 0):
            raise DomainFault("ln of a non-positive number")
        return np.log(x) if isinstance(x, np.ndarray) else math.log(x)
    if fn == "sqrt":
        if _any(np.asarray(x) < 0):
            raise DomainFault("sqrt of a negative number")
        return np.sqrt(x) if isinstance(x, np.ndarray) else math.sqrt(x)
    if fn == "sin":
        return np.sin(x)
    if fn == "cos":
        return np.cos(x)
    if fn == "abs":
        return np.abs(x)
    if fn == "pow":
        return _pow_val(args[0], args[1])
    raise TypeError(fn)


def evaluate(e: Expr, env: Mapping) -> float:
    """Evaluate with ``env`` such as ``{"t": 1.0, "x": [x1, x2], "u": [u1]}``."""
    v = _val(e, env)
    if isinstance(v, np.ndarray):
        return v
    return float(v)


def _dual(e, env, seeds, nvar):
    zero = (0.0,) * nvar
    if isinstance(e, Num):
        return Dual(e.value, zero)
    if isinstance(e, Var):
        val = _lookup(env, e)
        return Dual(val, seeds.get(e.label, zero))
    if isinstance(e, Neg):
        a = _dual(e.arg, env, seeds, nvar)
        return Dual(-a.val, tuple(-d for d in a.der))
    if isinstance(e, BinOp):
        a = _dual(e.left, env, seeds, nvar)
        b = _dual(e.right, env, seeds, nvar)
        op = e.op
        if op == "+":
            return Dual(a.val + b.val, tuple(x + y for x, y in zip(a.der, b.der)))
        if op == "-":
            return Dual(a.val - b.val, tuple(x - y for x, y in zip(a.der, b.der)))
        if op == "*":
            return Dual(a.val * b.val, tuple(x * b.val + a.val * y for x, y in zip(a.der, b.der)))
        if op == "/":
            if _any(np.asarray(b.val) == 0):
                raise DomainFault("division by zero")
            q = a.val / b.val
            return Dual(q, tuple((x - q * y) / b.val for x, y in zip(a.der, b.der)))
        return _dual_pow(a, b)
    if isinstance(e, Call):
        args = [_dual(x, env, seeds, nvar) for x in e.args]
        if e.fn == "pow":
            return _dual_pow(args[0], args[1])
        a = args[0]
        val = _call_val(e.fn, [a.val])
        if e.fn == "exp":
            s = val
        elif e.fn == "ln":
            s = 1.0 / a.val
        elif e.fn == "sin":
            s = np.cos(a.val)
        elif e.fn == "cos":
            s = -np.sin(a.val)
        elif e.fn == "sqrt":
            if _any(np.asarray(a.val) == 0) and any(_any(np.asarray(d) != 0) for d in a.der):
                raise DomainFault("sqrt is not differentiable at 0")
            s = 0.5 / np.where(np.asarray(a.val) == 0, 1.0, val) if isinstance(a.val, np.ndarray) \
                else (0.5 / val if val != 0 else 0.0)
        elif e.fn == "abs":
            if _any(np.asarray(a.val) == 0) and any(_any(np.asarray(d) != 0) for d in a.der):
                raise DomainFault("abs is not differentiable at 0")
            s = np.sign(a.val)
        else:
            raise TypeError(e.fn)
        return Dual(val, tuple(s * d for d in a.der))
    raise TypeError(e)


def _dual_pow(a: Dual, b: Dual) -> Dual:
    val = _pow_val(a.val, b.val)
    b_const = all(not _any(np.asarray(d) != 0) for d in b.der)
    if b_const:
        # d(a^c) = c a^(c-1) da ; c a^(c-1) written to stay finite at a = 0 for c >= 1
        c = b.val
        if _any((np.asarray(a.val) == 0) & (np.asarray(c) < 1) & (np.asarray(c) != 0)) and \
                any(_any(np.asarray(d) != 0) for d in a.der):
            raise DomainFault("power not differentiable at 0 for exponent < 1")
        s = c * _pow_val(a.val, c - 1) if not _any(np.asarray(c) == 0) else 0.0 * a.val
        return Dual(val, tuple(s * d for d in a.der))
    if _any(np.asarray(a.val) <= 0):
        raise DomainFault("variable exponent needs a positive base")
    la = np.log(a.val) if isinstance(a.val, np.ndarray) else math.log(a.val)
    return Dual(val, tuple(val * (db * la + b.val * da / a.val) for da, db in zip(a.der, b.der)))


def derive(e: Expr, env: Mapping, wrt) -> np.ndarray:
    """Exact partial derivatives of ``e`` with respect to the labels in ``wrt``.

    ``wrt`` lists variable labels, e.g. ``["u1", "u2"]``. Returns an array of
    shape ``(len(wrt),)`` (or ``(len(wrt), N)`` for array-valued envs).
    """
    wrt = list(wrt)
    nvar = len(wrt)
    seeds = {}
    for i, label in enumerate(wrt):
        seeds[label] = tuple(1.0 if j == i else 0.0 for j in range(nvar))
    d = _dual(e, env, seeds, nvar)
    return np.array([np.broadcast_to(np.asarray(x, dtype=float), np.shape(d.val)) for x in d.der],
                    dtype=float)


def gradient(e: Expr, env: Mapping, wrt):
    """Value and derivatives in one dual-number pass."""
    wrt = list(wrt)
    nvar = len(wrt)
    seeds = {label: tuple(1.0 if j == i else 0.0 for j in range(nvar)) for i, label in enumerate(wrt)}
    d = _dual(e, env, seeds, nvar)
    val = d.val if isinstance(d.val, np.ndarray) else float(d.val)
    return val, np.array([np.broadcast_to(np.asarray(x, dtype=float), np.shape(d.val)) for x in d.der],
                         dtype=float)
