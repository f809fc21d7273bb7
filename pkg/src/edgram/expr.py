"""Arithmetic expressions for user-defined vector fields and signals.

Grammar (whitespace-insensitive)::

    expr  := term (('+' | '-') term)*
    term  := unary (('*' | '/') power)*
    unary := '-' unary | power
    power := atom ('^' UINT)?
    atom  := NUMBER | 'x' INDEX | 't' | '(' expr ')' | FUNC '(' expr ')'
    FUNC  := sin | cos | tan | exp | log | tanh | sqrt

A negated operand to the right of ``*`` or ``/`` must be parenthesised:
``2*(-3)`` is accepted, ``2*-3`` is not.  ``-x1^2`` means ``-(x1^2)``.
Exponents are non-negative integer literals.  State variables are
``x1 .. xn`` (1-based); there is no ``u``.

Evaluation follows IEEE double semantics (division by zero gives an
infinity, overflow gives ``inf``) except for ``log`` of a non-positive
number and ``sqrt`` of a negative one, which raise
:class:`~edgram.errors.EvaluationError` with the offset of the call.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import EvaluationError, ParseError

__all__ = [
    "Num", "Var", "Time", "Neg", "BinOp", "Pow", "Call", "Expr",
    "FUNCTIONS", "parse", "evaluate", "to_string", "max_index",
    "uses_time", "compile_vector", "compile_signal",
]

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "tanh", "sqrt")


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Var:
    index: int  # 1-based
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Time:
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Neg:
    operand: "Expr"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"
    pos: int = field(default=0, compare=False)


Expr = Union[Num, Var, Time, Neg, BinOp, Pow, Call]


# -- tokenizer ---------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # num, name, op, end
    text: str
    pos: int


def _tokenize(text):
    toks = []
    i = 0
    end = len(text)
    while True:
        while i < end and text[i].isspace():
            i += 1
        if i >= end:
            break
        m = _TOKEN.match(text, i)
        if m is None or m.end() == i:
            raise ParseError(f"unexpected character {text[i]!r}", i,
                             ("number", "identifier", "operator"))
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), m.start(kind)))
        i = m.end()
    toks.append(_Tok("end", "", end))
    return toks


class _Parser:
    def __init__(self, text, n, allow_state, allow_time):
        self.toks = _tokenize(text)
        self.i = 0
        self.n = n
        self.allow_state = allow_state
        self.allow_time = allow_time

    @property
    def tok(self):
        return self.toks[self.i]

    def advance(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail(self, message, expected=()):
        raise ParseError(message, self.tok.pos, expected)

    def is_op(self, *ops):
        return self.tok.kind == "op" and self.tok.text in ops

    def expect_op(self, op):
        if not self.is_op(op):
            found = self.tok.text or "end of input"
            self.fail(f"found {found!r}", (repr(op),))
        return self.advance()

    def parse(self):
        e = self.expr()
        if self.tok.kind != "end":
            self.fail(f"trailing input {self.tok.text!r}", ("'+'", "'-'", "'*'", "'/'", "end of input"))
        return e

    def expr(self):
        node = self.term()
        while self.is_op("+", "-"):
            op = self.advance()
            node = BinOp(op.text, node, self.term(), op.pos)
        return node

    def term(self):
        node = self.unary()
        while self.is_op("*", "/"):
            op = self.advance()
            if self.is_op("-"):
                self.fail("unary minus after binary operator must be parenthesised", ("number", "variable", "'('"))
            node = BinOp(op.text, node, self.power(), op.pos)
        return node

    def unary(self):
        if self.is_op("-"):
            op = self.advance()
            return Neg(self.unary(), op.pos)
        return self.power()

    def power(self):
        base = self.atom()
        if self.is_op("^"):
            op = self.advance()
            tok = self.tok
            if tok.kind != "num" or not tok.text.isdigit():
                self.fail("exponent must be a non-negative integer literal", ("unsigned integer",))
            self.advance()
            return Pow(base, int(tok.text), op.pos)
        return base

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text), tok.pos)
        if tok.kind == "name":
            return self.name()
        if self.is_op("("):
            self.advance()
            inner = self.expr()
            self.expect_op(")")
            return inner
        found = tok.text or "end of input"
        self.fail(f"found {found!r}", ("number", "variable", "function", "'('", "'-'"))

    def name(self):
        tok = self.advance()
        text = tok.text
        if text in FUNCTIONS:
            self.expect_op("(")
            arg = self.expr()
            self.expect_op(")")
            return Call(text, arg, tok.pos)
        if text == "t":
            if not self.allow_time:
                raise ParseError("time 't' is not allowed here", tok.pos)
            return Time(tok.pos)
        m = re.fullmatch(r"x(\d+)", text)
        if m:
            if not self.allow_state:
                raise ParseError(f"state variable {text!r} is not allowed here", tok.pos, ("'t'",))
            idx = int(m.group(1))
            if idx < 1 or (self.n is not None and idx > self.n):
                bound = f"1..{self.n}" if self.n is not None else ">= 1"
                raise ParseError(f"bad state index {text!r} (valid: {bound})", tok.pos)
            return Var(idx, tok.pos)
        expected = ["'t'", "x<index>"] + list(FUNCTIONS)
        raise ParseError(f"unknown identifier {text!r}", tok.pos, expected)


def parse(text: str, n: int = None, allow_state: bool = True, allow_time: bool = True) -> Expr:
    """Parse ``text`` into an expression tree.

    ``n`` bounds the admissible state indices.  Raises
    :class:`~edgram.errors.ParseError` carrying the character offset and the
    set of expected tokens.
    """
    return _Parser(text, n, allow_state, allow_time).parse()


# -- printing ----------------------------------------------------------------

_LEVEL_SUM, _LEVEL_TERM, _LEVEL_UNARY, _LEVEL_POWER, _LEVEL_ATOM = 1, 2, 3, 4, 5


def _level(e):
    if isinstance(e, BinOp):
        return _LEVEL_SUM if e.op in "+-" else _LEVEL_TERM
    if isinstance(e, Neg):
        return _LEVEL_UNARY
    if isinstance(e, Pow):
        return _LEVEL_POWER
    return _LEVEL_ATOM


def _fmt(e, need):
    s = to_string(e)
    return f"({s})" if _level(e) < need else s


def to_string(e: Expr) -> str:
    """Render with the fewest parentheses that re-parse to the same tree."""
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Time):
        return "t"
    if isinstance(e, Neg):
        return "-" + _fmt(e.operand, _LEVEL_UNARY)
    if isinstance(e, Pow):
        return f"{_fmt(e.base, _LEVEL_ATOM)}^{e.exponent}"
    if isinstance(e, Call):
        return f"{e.func}({to_string(e.arg)})"
    if isinstance(e, BinOp):
        if e.op in "+-":
            return f"{_fmt(e.left, _LEVEL_SUM)} {e.op} {_fmt(e.right, _LEVEL_TERM)}"
        return f"{_fmt(e.left, _LEVEL_TERM)}{e.op}{_fmt(e.right, _LEVEL_POWER)}"
    raise TypeError(f"not an expression node: {e!r}")


# -- tree evaluation ---------------------------------------------------------

def _ieee_div(a, b):
    try:
        return a / b
    except ZeroDivisionError:
        if a != a or a == 0.0:
            return math.nan
        sign = math.copysign(1.0, a) * math.copysign(1.0, b)
        return math.copysign(math.inf, sign)


def _ieee_pow(a, k):
    try:
        return a ** k
    except OverflowError:
        neg = a < 0 and k % 2 == 1
        return -math.inf if neg else math.inf


def _ieee_exp(a):
    try:
        return math.exp(a)
    except OverflowError:
        return math.inf


def _apply(func, a, pos):
    if a != a:
        return math.nan
    if func == "log":
        if a <= 0.0:
            raise EvaluationError(f"log of non-positive value {a!r}", pos=pos)
        return math.log(a)
    if func == "sqrt":
        if a < 0.0:
            raise EvaluationError(f"sqrt of negative value {a!r}", pos=pos)
        return math.sqrt(a)
    if func == "exp":
        return _ieee_exp(a)
    if math.isinf(a) and func in ("sin", "cos", "tan"):
        return math.nan
    return getattr(math, func)(a)


def evaluate(e: Expr, x: Sequence[float] = (), t: float = 0.0) -> float:
    """Evaluate ``e`` at state ``x`` (0-based sequence) and time ``t``."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        if e.index > len(x):
            raise EvaluationError(f"state index x{e.index} out of range for n={len(x)}", pos=e.pos)
        return float(x[e.index - 1])
    if isinstance(e, Time):
        return float(t)
    if isinstance(e, Neg):
        return -evaluate(e.operand, x, t)
    if isinstance(e, BinOp):
        a = evaluate(e.left, x, t)
        b = evaluate(e.right, x, t)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        return _ieee_div(a, b)
    if isinstance(e, Pow):
        return _ieee_pow(evaluate(e.base, x, t), e.exponent)
    if isinstance(e, Call):
        return _apply(e.func, evaluate(e.arg, x, t), e.pos)
    raise TypeError(f"not an expression node: {e!r}")


def max_index(e: Expr) -> int:
    """Largest state index referenced (0 if none)."""
    if isinstance(e, Var):
        return e.index
    if isinstance(e, Neg):
        return max_index(e.operand)
    if isinstance(e, BinOp):
        return max(max_index(e.left), max_index(e.right))
    if isinstance(e, Pow):
        return max_index(e.base)
    if isinstance(e, Call):
        return max_index(e.arg)
    return 0


def uses_time(e: Expr) -> bool:
    if isinstance(e, Time):
        return True
    if isinstance(e, Neg):
        return uses_time(e.operand)
    if isinstance(e, BinOp):
        return uses_time(e.left) or uses_time(e.right)
    if isinstance(e, Pow):
        return uses_time(e.base)
    if isinstance(e, Call):
        return uses_time(e.arg)
    return False


# -- compilation -------------------------------------------------------------
#
# Trees are turned into Python source built only from numeric literals,
# state/time references and whitelisted functions, then compiled once.  Any
# arithmetic exception in the fast path re-runs the tree evaluator, which
# applies the IEEE rules above or raises a positioned error.

def _source(e, fn):
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, Var):
        return f"x[{e.index - 1}]"
    if isinstance(e, Time):
        return "t"
    if isinstance(e, Neg):
        return f"(-{_source(e.operand, fn)})"
    if isinstance(e, BinOp):
        return f"({_source(e.left, fn)} {e.op} {_source(e.right, fn)})"
    if isinstance(e, Pow):
        return f"({_source(e.base, fn)} ** {e.exponent})"
    if isinstance(e, Call):
        return f"{fn}{e.func}({_source(e.arg, fn)})"
    raise TypeError(f"not an expression node: {e!r}")


def _scalar_namespace():
    ns = {}
    for name in FUNCTIONS:
        ns["_m_" + name] = getattr(math, name)
    return ns


def compile_vector(exprs: Sequence[Expr]) -> Callable[[np.ndarray], np.ndarray]:
    """Compile expressions of the state into ``x -> array`` (no time)."""
    exprs = list(exprs)
    body = ", ".join(_source(e, "_m_") for e in exprs)
    src = f"def _compiled(x, t=0.0):\n    return ({body},)\n"
    ns = _scalar_namespace()
    exec(compile(src, "<edgram-expr>", "exec"), ns)
    fast = ns["_compiled"]

    def fun(x):
        xs = x.tolist() if isinstance(x, np.ndarray) else list(x)
        try:
            return np.array(fast(xs))
        except (ArithmeticError, ValueError):
            return np.array([evaluate(e, xs, 0.0) for e in exprs])

    fun.source = src
    return fun


def compile_signal(exprs: Sequence[Expr]) -> Callable[[np.ndarray], np.ndarray]:
    """Compile expressions of time into ``t_array -> (len(t), k)`` samples.

    Vectorised with numpy; a domain violation anywhere in the batch falls
    back to pointwise evaluation to locate it.
    """
    exprs = list(exprs)
    ns = {"_np_" + name: getattr(np, name) for name in FUNCTIONS}
    cols = []
    for e in exprs:
        src = f"def _sig(t):\n    return {_source(e, '_np_')} + 0.0 * t\n"
        loc = dict(ns)
        exec(compile(src, "<edgram-signal>", "exec"), loc)
        cols.append((e, loc["_sig"]))

    def fun(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((t.size, len(cols)))
        for j, (e, sig) in enumerate(cols):
            with np.errstate(all="ignore"):
                v = sig(t)
            if not np.all(np.isfinite(v)):
                v = np.array([evaluate(e, (), float(tk)) for tk in t])
            out[:, j] = v
        return out

    return fun
