"""Arithmetic expressions in ``t, x1..xk``: parser, printer, derivative, compiler.

Grammar (precedence low to high, binary operators left associative)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | primary
    primary := NUMBER | "t" | "x" INDEX | FUNC "(" expr ("," expr)* ")" | "(" expr ")"
    FUNC    := "exp" | "min" | "max"

``exp`` takes one argument, ``min``/``max`` two or more.
"""

from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ModelSemanticError, ModelSyntaxError

MAX_DEPTH = 64
FUNCTIONS = {"exp": (1, 1), "min": (2, None), "max": (2, None)}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    # 0 is time, i >= 1 is the coordinate x_i
    index: int

    @property
    def name(self):
        return "t" if self.index == 0 else f"x{self.index}"


@dataclass(frozen=True)
class Neg:
    arg: "Expression"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expression = Union[Num, Var, Neg, BinOp, Call]


def depth(e):
    if isinstance(e, (Num, Var)):
        return 1
    if isinstance(e, Neg):
        return 1 + depth(e.arg)
    if isinstance(e, BinOp):
        return 1 + max(depth(e.left), depth(e.right))
    return 1 + max(depth(a) for a in e.args)


def variables(e):
    """Set of variable indices used by ``e`` (0 is ``t``)."""
    if isinstance(e, Var):
        return {e.index}
    if isinstance(e, Num):
        return set()
    if isinstance(e, Neg):
        return variables(e.arg)
    if isinstance(e, BinOp):
        return variables(e.left) | variables(e.right)
    return set().union(*(variables(a) for a in e.args))


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/(),])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    col: int


class _Parser:
    def __init__(self, text, k, line, column):
        self.text = text
        self.k = k
        self.line = line
        self.col0 = column
        self.toks = self._tokenize()
        self.pos = 0

    def _err(self, msg, col, expected=()):
        return ModelSyntaxError(msg, self.line, self.col0 + col, expected)

    def _tokenize(self):
        toks, i = [], 0
        while i < len(self.text):
            m = _TOKEN.match(self.text, i)
            if m is None:
                raise self._err(f"unexpected character {self.text[i]!r}", i)
            if m.lastgroup != "ws":
                toks.append(_Tok(m.lastgroup, m.group(), i))
            i = m.end()
        toks.append(_Tok("end", "", len(self.text)))
        return toks

    def peek(self):
        return self.toks[self.pos]

    def take(self):
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def expect(self, text):
        tok = self.take()
        if tok.text != text:
            raise self._err(f"unexpected {tok.text or 'end of input'!r}", tok.col, [repr(text)])
        return tok

    def parse(self):
        if self.peek().kind == "end":
            raise self._err("empty expression", 0, ["expression"])
        e = self.expr(1)
        tok = self.peek()
        if tok.kind != "end":
            raise self._err(f"unexpected {tok.text!r}", tok.col, ["operator", "end of input"])
        if depth(e) > MAX_DEPTH:
            raise self._err(f"expression tree deeper than {MAX_DEPTH}", 0)
        return e

    def _check_depth(self, d, tok):
        # recursion guard only; the tree-depth limit is checked after parsing
        if d > 4 * MAX_DEPTH:
            raise self._err(f"expression tree deeper than {MAX_DEPTH}", tok.col)

    def expr(self, d):
        self._check_depth(d, self.peek())
        left = self.term(d + 1)
        while self.peek().text in ("+", "-"):
            op = self.take().text
            left = BinOp(op, left, self.term(d + 1))
        return left

    def term(self, d):
        left = self.unary(d)
        while self.peek().text in ("*", "/"):
            op = self.take().text
            left = BinOp(op, left, self.unary(d))
        return left

    def unary(self, d):
        self._check_depth(d, self.peek())
        if self.peek().text == "-":
            self.take()
            return Neg(self.unary(d + 1))
        return self.primary(d)

    def primary(self, d):
        tok = self.take()
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.text == "(":
            e = self.expr(d + 1)
            self.expect(")")
            return e
        if tok.kind == "name":
            if tok.text in FUNCTIONS:
                return self.call(tok, d)
            if tok.text == "t":
                return Var(0)
            m = re.fullmatch(r"x([1-9]\d*)", tok.text)
            if m and int(m.group(1)) <= self.k:
                return Var(int(m.group(1)))
            raise ModelSemanticError(
                f"unknown variable {tok.text!r} (allowed: t, x1..x{self.k})",
                self.line, self.col0 + tok.col)
        raise self._err(f"unexpected {tok.text or 'end of input'!r}", tok.col,
                        ["number", "variable", "function", "'('"])

    def call(self, tok, d):
        self.expect("(")
        args = [self.expr(d + 1)]
        while self.peek().text == ",":
            self.take()
            args.append(self.expr(d + 1))
        self.expect(")")
        lo, hi = FUNCTIONS[tok.text]
        if len(args) < lo or (hi is not None and len(args) > hi):
            raise ModelSemanticError(
                f"{tok.text} takes {'exactly' if lo == hi else 'at least'} {lo} argument(s), got {len(args)}",
                self.line, self.col0 + tok.col)
        return Call(tok.text, tuple(args))


def parse_expression(text, k, line=1, column=1):
    """Parse ``text`` into an expression tree over ``t, x1..xk``.

    ``line``/``column`` locate the text inside a larger document so that
    errors point at the right place.
    """
    return _Parser(text, k, line, column).parse()


# --------------------------------------------------------------- printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_num(v):
    return repr(float(v))


def to_text(e, _min_prec=0):
    """Render ``e`` with the minimal parentheses needed to parse back to ``e``."""
    if isinstance(e, Num):
        s, prec = _fmt_num(e.value), 4
    elif isinstance(e, Var):
        s, prec = e.name, 4
    elif isinstance(e, Call):
        s, prec = f"{e.func}({', '.join(to_text(a) for a in e.args)})", 4
    elif isinstance(e, Neg):
        s, prec = "-" + to_text(e.arg, 3), 3
    else:
        prec = _PREC[e.op]
        s = f"{to_text(e.left, prec)} {e.op} {to_text(e.right, prec + 1)}"
    return f"({s})" if prec < _min_prec else s


# ----------------------------------------------------------- derivatives

ZERO, ONE = Num(0.0), Num(1.0)


def _add(a, b):
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    return BinOp("+", a, b)


def _sub(a, b):
    if b == ZERO:
        return a
    if a == ZERO:
        return Neg(b)
    return BinOp("-", a, b)


def _mul(a, b):
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    return BinOp("*", a, b)


def _div(a, b):
    if a == ZERO:
        return ZERO
    return BinOp("/", a, b)


def derivative(e, index):
    """Symbolic partial derivative of ``e`` with respect to variable ``index``.

    ``min``/``max`` differentiate to the branch that is active (ties take the
    first argument); the result is a tree of the same grammar.
    """
    if isinstance(e, Num):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == index else ZERO
    if isinstance(e, Neg):
        d = derivative(e.arg, index)
        return ZERO if d == ZERO else Neg(d)
    if isinstance(e, BinOp):
        da, db = derivative(e.left, index), derivative(e.right, index)
        if e.op == "+":
            return _add(da, db)
        if e.op == "-":
            return _sub(da, db)
        if e.op == "*":
            return _add(_mul(da, e.right), _mul(e.left, db))
        # (a/b)' = a'/b - a b' / b^2
        return _sub(_div(da, e.right), _div(_mul(e.left, db), _mul(e.right, e.right)))
    if e.func == "exp":
        return _mul(e, derivative(e.args[0], index))
    return _select_derivative(e, index)


def _select_derivative(e, index):
    a = e.args[0]
    rest = e.args[1:]
    rest_e = rest[0] if len(rest) == 1 else Call(e.func, rest)
    da, dr = derivative(a, index), derivative(rest_e, index)
    if da == dr:
        return da
    # internal node, not part of the surface grammar (never printed or parsed)
    return Call("_pick" + e.func, (a, rest_e, da, dr))


# -------------------------------------------------------------- compiling

def _emit(e, argnames, array):
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, Var):
        return argnames[e.index]
    if isinstance(e, Neg):
        return f"(-{_emit(e.arg, argnames, array)})"
    if isinstance(e, BinOp):
        return f"({_emit(e.left, argnames, array)} {e.op} {_emit(e.right, argnames, array)})"
    args = ", ".join(_emit(a, argnames, array) for a in e.args)
    return f"_{e.func.lstrip('_')}({args})"


def _pickmin_scalar(a, b, da, db):
    return da if a <= b else db


def _pickmax_scalar(a, b, da, db):
    return da if a >= b else db


_SCALAR_NS = {
    "_exp": math.exp, "_min": min, "_max": max,
    "_pickmin": _pickmin_scalar, "_pickmax": _pickmax_scalar,
}
_ARRAY_NS = {
    "_exp": np.exp,
    "_min": lambda *a: functools.reduce(np.minimum, a),
    "_max": lambda *a: functools.reduce(np.maximum, a),
    "_pickmin": lambda a, b, da, db: np.where(a <= b, da, db),
    "_pickmax": lambda a, b, da, db: np.where(a >= b, da, db),
}


def compile_many(exprs, k, array=False):
    """Compile expressions into one function ``f(t, x1, ..., xk) -> tuple``.

    The scalar flavour uses ``math`` and raises on overflow or division by
    zero; the array flavour uses numpy ufuncs and lets non-finite values
    through for the caller to inspect.
    """
    argnames = ["t"] + [f"x{i}" for i in range(1, k + 1)]
    body = ", ".join(_emit(e, argnames, array) for e in exprs)
    src = f"def _f({', '.join(argnames)}):\n    return ({body}{',' if len(exprs) == 1 else ''})\n"
    ns = dict(_ARRAY_NS if array else _SCALAR_NS)
    exec(compile(src, "<jumpmfg-expr>", "exec"), ns)
    return ns["_f"]


def evaluate(e, t, x):
    """Evaluate a single expression at time ``t`` and point ``x`` (length k)."""
    f = compile_many([e], len(x))
    return f(t, *[float(v) for v in x])[0]
