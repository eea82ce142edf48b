"""A small arithmetic language for coefficient formulas.

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | power
    power  := atom ("^" unary)?          # right-associative, binds tighter than unary minus
    atom   := number | name | name "(" args ")" | "(" expr ")"

Names: x1..xd, t, pi, and ``x`` (the whole point, only as the argument of
norm, norm1, norm2).  Functions: exp ln abs sqrt norm norm1 norm2 pow min max.
Evaluation is vectorised over points of shape (n, d).
"""

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError, ExpressionSyntaxError

UNARY_FUNCS = {"exp": np.exp, "ln": np.log, "abs": np.abs, "sqrt": np.sqrt}
NORM_FUNCS = ("norm", "norm1", "norm2")
BINARY_FUNCS = {"pow": np.power, "min": np.minimum, "max": np.maximum}
CONSTANTS = {"pi": math.pi}

_TOKEN = re.compile(r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))")


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=0, compare=False)

    def __str__(self):
        return repr(float(self.value))


@dataclass(frozen=True)
class Var:
    name: str
    pos: int = field(default=0, compare=False)

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg:
    operand: object
    pos: int = field(default=0, compare=False)

    def __str__(self):
        return f"(-{self.operand})"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object
    pos: int = field(default=0, compare=False)

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple
    pos: int = field(default=0, compare=False)

    def __str__(self):
        return f"{self.name}({', '.join(str(a) for a in self.args)})"


def _tokenize(src):
    pos, out = 0, []
    src_len = len(src)
    while pos < src_len:
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if not m or m.end() == pos:
            bad = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ExpressionSyntaxError(f"unexpected character {src[bad]!r}", bad, src)
        kind = m.lastgroup
        out.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    out.append(("end", "", len(src)))
    return out


class _Parser:
    def __init__(self, src, dim):
        self.src = src
        self.dim = dim
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def error(self, msg, pos):
        raise ExpressionSyntaxError(msg, pos, self.src)

    def parse(self):
        node = self.expr()
        kind, v, pos = self.peek()
        if kind != "end":
            self.error(f"unexpected {v!r}" + (" (unbalanced parentheses)" if v == ")" else ""), pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            _, op, pos = self.take()
            node = BinOp(op, node, self.term(), pos)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            _, op, pos = self.take()
            node = BinOp(op, node, self.unary(), pos)
        return node

    def unary(self):
        kind, v, pos = self.peek()
        if kind == "op" and v == "-":
            self.take()
            return Neg(self.unary(), pos)
        return self.power()

    def power(self):
        base = self.atom()
        kind, v, pos = self.peek()
        if kind == "op" and v == "^":
            self.take()
            return BinOp("^", base, self.unary(), pos)
        return base

    def atom(self):
        kind, v, pos = self.take()
        if kind == "num":
            value = float(v)
            if not math.isfinite(value):
                self.error(f"number {v} is out of range", pos)
            return Num(value, pos)
        if kind == "op" and v == "(":
            node = self.expr()
            k2, v2, p2 = self.peek()
            if v2 != ")":
                self.error("unbalanced parentheses: missing ')'", p2)
            self.take()
            return node
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                return self.call(v, pos)
            return self.variable(v, pos)
        if kind == "end":
            self.error("unexpected end of input", pos)
        self.error(f"unexpected {v!r}", pos)

    def variable(self, name, pos):
        if name == "t" or name in CONSTANTS:
            return Var(name, pos)
        m = re.fullmatch(r"x(\d+)", name)
        if m:
            i = int(m.group(1))
            if not 1 <= i <= self.dim:
                self.error(f"variable {name} outside dimension {self.dim}", pos)
            return Var(name, pos)
        if name == "x":
            self.error("the point x may only appear as the argument of norm, norm1 or norm2", pos)
        self.error(f"unknown identifier {name!r}", pos)

    def call(self, name, pos):
        self.take()  # "("
        args = []
        if self.peek()[1] != ")":
            while True:
                if name in NORM_FUNCS and not args:
                    k, v, p = self.take()
                    if v != "x":
                        self.error(f"{name} takes the point x as its argument", p)
                    args.append(Var("x", p))
                else:
                    args.append(self.expr())
                if self.peek()[1] == ",":
                    self.take()
                    continue
                break
        k, v, p = self.peek()
        if v != ")":
            self.error("unbalanced parentheses: missing ')'", p)
        self.take()
        if name in UNARY_FUNCS or name in NORM_FUNCS:
            arity = 1
        elif name in BINARY_FUNCS:
            arity = 2
        else:
            self.error(f"unknown function {name!r}", pos)
        if len(args) != arity:
            self.error(f"{name} expects {arity} argument(s), got {len(args)}", pos)
        return Call(name, tuple(args), pos)


@dataclass(frozen=True)
class Expression:
    """Parsed formula; call with points (n, d) and a time."""

    tree: object
    dim: int
    split: int  # norm1 uses the first ``split`` coordinates, norm2 the rest
    source: str = field(default="", compare=False)

    def __str__(self):
        return str(self.tree)

    def __call__(self, x, t=0.0):
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        if pts.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}")
        out = self._eval(self.tree, pts, t)
        return np.broadcast_to(out, (len(pts),)).astype(float)

    def _check(self, node, value, pts):
        value = np.asarray(value, dtype=float)
        if not np.all(np.isfinite(value)):
            flat = np.broadcast_to(value, (len(pts),))
            i = int(np.argmax(~np.isfinite(flat)))
            raise EvaluationError(
                f"'{node}' is not finite (column {node.pos + 1} of '{self.source or self}')",
                point=tuple(pts[i].tolist()),
            )
        return value

    def _eval(self, node, pts, t):
        with np.errstate(all="ignore"):
            if isinstance(node, Num):
                return np.float64(node.value)
            if isinstance(node, Var):
                if node.name == "t":
                    return np.asarray(t, dtype=float)
                if node.name in CONSTANTS:
                    return np.float64(CONSTANTS[node.name])
                return pts[:, int(node.name[1:]) - 1]
            if isinstance(node, Neg):
                return -self._eval(node.operand, pts, t)
            if isinstance(node, BinOp):
                a = self._eval(node.left, pts, t)
                b = self._eval(node.right, pts, t)
                val = {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide, "^": np.power}[node.op](a, b)
                return self._check(node, val, pts)
            if isinstance(node, Call):
                if node.name in NORM_FUNCS:
                    sl = {"norm": slice(None), "norm1": slice(0, self.split), "norm2": slice(self.split, None)}[node.name]
                    return np.linalg.norm(pts[:, sl], axis=1)
                args = [self._eval(a, pts, t) for a in node.args]
                fn = UNARY_FUNCS.get(node.name) or BINARY_FUNCS[node.name]
                return self._check(node, fn(*args), pts)
        raise TypeError(f"unknown node {node!r}")


def parse_expression(src, dim, split=None):
    """Parse ``src`` for points of dimension ``dim``; ``split`` defaults to d // 2 (at least 1)."""
    if split is None:
        split = max(1, dim // 2)
    if not 0 <= split <= dim:
        raise ValueError("split must lie in [0, dim]")
    tree = _Parser(str(src), dim).parse()
    return Expression(tree, dim, split, str(src))
