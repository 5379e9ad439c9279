"""Closed-form scalar fields with exact first and second derivatives.

Expressions are parsed once into an immutable tree and evaluated on numpy
arrays with second-order forward-mode jets, so gradients and Hessians carry
no finite-difference noise.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := number | name | name '(' expr ')' | '(' expr ')'
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

__all__ = [
    "ExpressionError", "ExpressionSyntaxError", "FieldDomainError",
    "Num", "Var", "Neg", "BinOp", "Call",
    "parse", "to_source", "Jet2", "eval_jet", "ScalarField",
    "DEFAULT_VARIABLES", "FUNCTIONS",
]

DEFAULT_VARIABLES = ("y1", "y2")


class ExpressionError(ValueError):
    """Base class for parse and evaluation problems."""


class ExpressionSyntaxError(ExpressionError):
    """Malformed source.  ``offset`` is the 1-based column of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class FieldDomainError(ExpressionError):
    """Argument outside a function's domain, or a non-finite result."""


# ---------------------------------------------------------------- AST nodes

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "tanh")

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(source):
    tokens = []
    pos = 0
    n = len(source)
    while pos < n:
        if source[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            raise ExpressionSyntaxError(f"unexpected character {source[pos]!r}", pos + 1)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, source, variables):
        self.source = source
        self.variables = tuple(variables)
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.take()
        if text != value or kind == "end":
            what = "end of input" if kind == "end" else repr(text)
            raise ExpressionSyntaxError(f"expected {value!r}, found {what}", pos + 1)

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"unexpected {text!r}", pos + 1)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[0] == "op" and self.peek()[1] == "-":
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
            value = float(text)
            if not math.isfinite(value):
                raise ExpressionSyntaxError("literal overflows", pos + 1)
            return Num(value)
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if text not in FUNCTIONS:
                    raise ExpressionError(f"unknown function {text!r} at offset {pos + 1}")
                self.take()
                arg = self.expr()
                if self.peek()[1] == ",":
                    raise ExpressionError(
                        f"function {text!r} takes 1 argument (arity mismatch at offset {self.peek()[2] + 1})")
                self.expect(")")
                return Call(text, arg)
            if text in FUNCTIONS:
                raise ExpressionError(f"function {text!r} used without argument (arity mismatch at offset {pos + 1})")
            if text not in self.variables:
                raise ExpressionError(f"unknown identifier {text!r} at offset {pos + 1}")
            return Var(text)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if kind == "end" else repr(text)
        raise ExpressionSyntaxError(f"unexpected {what}", pos + 1)


def parse(source: str, variables: Sequence[str] = DEFAULT_VARIABLES) -> Node:
    """Parse ``source`` into an expression tree.

    Only names listed in ``variables`` may appear as free variables.
    Syntax errors report a 1-based character offset.
    """
    if not isinstance(source, str):
        raise ExpressionError("expression source must be a string")
    return _Parser(source, variables).parse()


def to_source(node: Node) -> str:
    """Fully parenthesised text that parses back to an equal tree."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_source(node.arg)})"
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    return f"({to_source(node.left)} {node.op} {to_source(node.right)})"


# --------------------------------------------------------------------- jets

class Jet2:
    """Value, gradient and Hessian of a scalar on an array of points.

    ``value`` has the broadcast shape S of the points, ``grad`` has shape
    (d, *S) and ``hess`` (d, d, *S), where d is the number of variables.
    """

    __slots__ = ("value", "grad", "hess")

    def __init__(self, value, grad, hess):
        self.value = value
        self.grad = grad
        self.hess = hess

    @classmethod
    def constant(cls, c, shape, d):
        v = np.full(shape, float(c))
        return cls(v, np.zeros((d,) + shape), np.zeros((d, d) + shape))

    def directional(self, v):
        """First derivative along v (shape (d, *S) or (d,))."""
        v = np.asarray(v, dtype=float)
        v = v.reshape(v.shape + (1,) * (self.grad.ndim - v.ndim))
        return np.sum(self.grad * v, axis=0)

    def directional2(self, v, w=None):
        """Second derivative v^T H w (w defaults to v)."""
        v = np.asarray(v, dtype=float)
        w = v if w is None else np.asarray(w, dtype=float)
        v = v.reshape(v.shape + (1,) * (self.grad.ndim - v.ndim))
        w = w.reshape(w.shape + (1,) * (self.grad.ndim - w.ndim))
        return np.einsum("i...,ij...,j...->...", v, self.hess, w)

    def _chain(self, f0, f1, f2):
        g = f1 * self.grad
        h = f2 * np.einsum("i...,j...->ij...", self.grad, self.grad) + f1 * self.hess
        return Jet2(f0, g, h)

    def __add__(self, o):
        return Jet2(self.value + o.value, self.grad + o.grad, self.hess + o.hess)

    def __sub__(self, o):
        return Jet2(self.value - o.value, self.grad - o.grad, self.hess - o.hess)

    def __neg__(self):
        return Jet2(-self.value, -self.grad, -self.hess)

    def __mul__(self, o):
        outer = np.einsum("i...,j...->ij...", self.grad, o.grad)
        return Jet2(self.value * o.value,
                    self.grad * o.value + o.grad * self.value,
                    self.hess * o.value + o.hess * self.value + outer + np.swapaxes(outer, 0, 1))

    def reciprocal(self):
        u = self.value
        if np.any(u == 0):
            raise FieldDomainError("division by zero")
        return self._chain(1.0 / u, -1.0 / u**2, 2.0 / u**3)

    def __truediv__(self, o):
        return self * o.reciprocal()

    def is_constant(self):
        return not (np.any(self.grad) or np.any(self.hess))


def _const_power(u: Jet2, c: float) -> Jet2:
    x = u.value
    if float(c).is_integer():
        k = int(c)
        if k == 0:
            return Jet2.constant(1.0, x.shape, u.grad.shape[0])
        if k < 0 and np.any(x == 0):
            raise FieldDomainError("zero raised to a negative power")
        f0 = x**k if k > 0 else 1.0 / x**(-k)
        f1 = k * _ipow(x, k - 1)
        f2 = k * (k - 1) * _ipow(x, k - 2) if k not in (0, 1) else np.zeros_like(x)
        return u._chain(f0, f1, f2)
    if np.any(x < 0):
        raise FieldDomainError("non-integer power of a negative base")
    if np.any(x == 0) and c < 2:
        raise FieldDomainError("derivative of fractional power is unbounded at zero")
    return u._chain(x**c, c * x**(c - 1), c * (c - 1) * x**(c - 2))


def _ipow(x, k):
    if k >= 0:
        return x**k
    return 1.0 / x**(-k)


def _apply(func, u: Jet2) -> Jet2:
    x = u.value
    if func == "sin":
        s, c = np.sin(x), np.cos(x)
        return u._chain(s, c, -s)
    if func == "cos":
        s, c = np.sin(x), np.cos(x)
        return u._chain(c, -s, -c)
    if func == "exp":
        e = np.exp(x)
        return u._chain(e, e, e)
    if func == "log":
        if np.any(x <= 0):
            raise FieldDomainError("log of nonpositive argument")
        return u._chain(np.log(x), 1.0 / x, -1.0 / x**2)
    if func == "sqrt":
        if np.any(x <= 0):
            raise FieldDomainError("sqrt argument must be positive for a differentiable field")
        r = np.sqrt(x)
        return u._chain(r, 0.5 / r, -0.25 / (r * x))
    if func == "tanh":
        th = np.tanh(x)
        s2 = 1.0 - th**2
        return u._chain(th, s2, -2.0 * th * s2)
    raise ExpressionError(f"unknown function {func!r}")


def _eval(node, env, shape, d):
    if isinstance(node, Num):
        return Jet2.constant(node.value, shape, d)
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_eval(node.arg, env, shape, d)
    if isinstance(node, Call):
        return _apply(node.func, _eval(node.arg, env, shape, d))
    a = _eval(node.left, env, shape, d)
    if node.op == "^":
        b = _eval(node.right, env, shape, d)
        if b.is_constant() and np.all(b.value == b.value.flat[0]):
            return _const_power(a, float(b.value.flat[0]))
        if np.any(a.value <= 0):
            raise FieldDomainError("variable exponent needs a positive base")
        return _apply("exp", b * _apply("log", a))
    b = _eval(node.right, env, shape, d)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        return a / b
    raise ExpressionError(f"unknown operator {node.op!r}")


def eval_jet(node: Node, point, variables: Sequence[str] = DEFAULT_VARIABLES) -> Jet2:
    """Evaluate value, gradient and Hessian of ``node``.

    ``point`` has shape (d,) or (d, *S) with d = len(variables).
    """
    pts = np.asarray(point, dtype=float)
    d = len(variables)
    if pts.shape[0] != d:
        raise ExpressionError(f"point must have leading dimension {d}")
    shape = pts.shape[1:]
    env = {}
    for i, name in enumerate(variables):
        g = np.zeros((d,) + shape)
        g[i] = 1.0
        env[name] = Jet2(pts[i].copy(), g, np.zeros((d, d) + shape))
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        jet = _eval(node, env, shape, d)
    for arr in (jet.value, jet.grad, jet.hess):
        if not np.all(np.isfinite(arr)):
            raise FieldDomainError("expression evaluated to a non-finite value")
    return jet


class ScalarField:
    """A parsed expression bound to its variable names."""

    def __init__(self, source: str, variables: Sequence[str] = DEFAULT_VARIABLES):
        self.source = source
        self.variables = tuple(variables)
        self.tree = parse(source, self.variables)

    def __repr__(self):
        return f"ScalarField({self.source!r})"

    def jet(self, point) -> Jet2:
        return eval_jet(self.tree, point, self.variables)

    def __call__(self, *coords):
        pts = np.stack(np.broadcast_arrays(*[np.asarray(c, dtype=float) for c in coords]))
        return self.jet(pts).value

    def is_constant(self) -> bool:
        return not _has_var(self.tree)


def _has_var(node):
    if isinstance(node, Var):
        return True
    if isinstance(node, Num):
        return False
    if isinstance(node, (Neg, Call)):
        return _has_var(node.arg)
    return _has_var(node.left) or _has_var(node.right)
