"""One-variable expression mini-language with forward-mode differentiation.

Parses confining-potential expressions like ``(x^2-1)^2`` or ``x^2/2 + cos(x)``
into an evaluator that returns value, first and second derivative in a single
pass (second-order jet arithmetic).  Evaluation is vectorized over numpy
arrays.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-'? base ('^' integer)?
    base   := number | 'x' | '(' expr ')' | func '(' expr ')'
    func   := 'exp' | 'cos' | 'sin'

'^' binds tighter than '*'; unary minus binds looser than '^'
(``-x^2`` means ``-(x^2)``).
"""

from __future__ import annotations

import string

import numpy as np

_FUNCS = ("exp", "cos", "sin")
_OPCHARS = "+-*/^(),"


class ExprError(ValueError):
    """Parse failure carrying the byte offset of the offending token."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class Jet:
    """Value together with first and second derivative w.r.t. x."""

    __slots__ = ("v", "d1", "d2")

    def __init__(self, v, d1, d2):
        self.v = v
        self.d1 = d1
        self.d2 = d2

    def __add__(self, o):
        return Jet(self.v + o.v, self.d1 + o.d1, self.d2 + o.d2)

    def __sub__(self, o):
        return Jet(self.v - o.v, self.d1 - o.d1, self.d2 - o.d2)

    def __neg__(self):
        return Jet(-self.v, -self.d1, -self.d2)

    def __mul__(self, o):
        return Jet(
            self.v * o.v,
            self.d1 * o.v + self.v * o.d1,
            self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        )

    def __truediv__(self, o):
        q = self.v / o.v
        q1 = (self.d1 - q * o.d1) / o.v
        q2 = (self.d2 - 2.0 * q1 * o.d1 - q * o.d2) / o.v
        return Jet(q, q1, q2)

    def intpow(self, n):
        if n == 0:
            return Jet(1.0 + 0.0 * self.v, 0.0 * self.v, 0.0 * self.v)
        if n == 1:
            return Jet(self.v, self.d1, self.d2)
        vn2 = self.v ** (n - 2)
        vn1 = vn2 * self.v
        return Jet(
            vn1 * self.v,
            n * vn1 * self.d1,
            n * (n - 1) * vn2 * self.d1 * self.d1 + n * vn1 * self.d2,
        )

    def exp(self):
        e = np.exp(self.v)
        return Jet(e, e * self.d1, e * (self.d1 * self.d1 + self.d2))

    def cos(self):
        c, s = np.cos(self.v), np.sin(self.v)
        return Jet(c, -s * self.d1, -c * self.d1 * self.d1 - s * self.d2)

    def sin(self):
        c, s = np.cos(self.v), np.sin(self.v)
        return Jet(s, c * self.d1, -s * self.d1 * self.d1 + c * self.d2)


def _tokenize(text):
    """Return (kind, value, offset) tokens; kinds: num, name, op, end."""
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c in " \t\r\n":
            i += 1
            continue
        if c in _OPCHARS:
            tokens.append(("op", c, i))
            i += 1
            continue
        if c in string.digits or (c == "." and i + 1 < n and text[i + 1] in string.digits):
            j = i
            while j < n and text[j] in string.digits:
                j += 1
            if j < n and text[j] == ".":
                j += 1
                while j < n and text[j] in string.digits:
                    j += 1
            tokens.append(("num", float(text[i:j]), i))
            i = j
            continue
        if c in string.ascii_letters:
            j = i
            while j < n and text[j] in string.ascii_letters:
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        raise ExprError(f"unexpected character {c!r}", i)
    tokens.append(("end", None, n))
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op):
        kind, val, off = self.peek()
        if kind != "op" or val != op:
            raise ExprError(f"expected {op!r}", off)
        return self.next()

    def parse(self):
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExprError(f"unexpected trailing input {val!r}", off)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.next()
                node = ("add" if val == "+" else "sub", node, self.term())
            else:
                return node

    def term(self):
        node = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.next()
                node = ("mul" if val == "*" else "div", node, self.factor())
            else:
                return node

    def factor(self):
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.next()
            return ("neg", self.factor())
        node = self.base()
        kind, val, off = self.peek()
        if kind == "op" and val == "^":
            self.next()
            kind, val, off = self.peek()
            if kind != "num" or val != int(val):
                raise ExprError("exponent must be an integer", off)
            self.next()
            node = ("pow", node, int(val))
        return node

    def base(self):
        kind, val, off = self.next()
        if kind == "num":
            return ("num", val)
        if kind == "name":
            if val == "x":
                return ("x",)
            if val in _FUNCS:
                self.expect_op("(")
                arg = self.expr()
                k2, v2, o2 = self.peek()
                if k2 == "op" and v2 == ",":
                    raise ExprError(f"{val} takes exactly one argument", o2)
                self.expect_op(")")
                return ("call", val, arg)
            raise ExprError(f"unknown identifier {val!r}", off)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        if kind == "end":
            raise ExprError("unexpected end of input", off)
        raise ExprError(f"unexpected token {val!r}", off)


def _eval_node(node, x, one, zero):
    op = node[0]
    if op == "num":
        return Jet(node[1], 0.0, 0.0)
    if op == "x":
        return Jet(x, one, zero)
    if op == "add":
        return _eval_node(node[1], x, one, zero) + _eval_node(node[2], x, one, zero)
    if op == "sub":
        return _eval_node(node[1], x, one, zero) - _eval_node(node[2], x, one, zero)
    if op == "mul":
        return _eval_node(node[1], x, one, zero) * _eval_node(node[2], x, one, zero)
    if op == "div":
        return _eval_node(node[1], x, one, zero) / _eval_node(node[2], x, one, zero)
    if op == "neg":
        return -_eval_node(node[1], x, one, zero)
    if op == "pow":
        return _eval_node(node[1], x, one, zero).intpow(node[2])
    if op == "call":
        return getattr(_eval_node(node[2], x, one, zero), node[1])()
    raise AssertionError(f"bad node {node!r}")


class ExprPotential1D:
    """Parsed one-dimensional potential with jet evaluation.

    ``value``, ``d1`` and ``d2`` return the expression and its first two
    derivatives; each accepts a scalar or a numpy array.  Instances are
    immutable and safe for concurrent use.
    """

    def __init__(self, text):
        self.text = text.strip()
        if not self.text:
            raise ExprError("empty expression", 0)
        self._ast = _Parser(self.text).parse()

    def jet(self, x):
        if np.isscalar(x):
            return _eval_node(self._ast, float(x), 1.0, 0.0)
        x = np.asarray(x, dtype=float)
        return _eval_node(self._ast, x, np.ones_like(x), np.zeros_like(x))

    def value(self, x):
        return self.jet(x).v

    def d1(self, x):
        return self.jet(x).d1

    def d2(self, x):
        return self.jet(x).d2

    def __repr__(self):
        return f"ExprPotential1D({self.text!r})"

    def __eq__(self, other):
        return isinstance(other, ExprPotential1D) and self.text == other.text

    def __hash__(self):
        return hash(self.text)


def parse_potential_expr(text):
    """Parse ``text`` into an :class:`ExprPotential1D` or raise :class:`ExprError`."""
    return ExprPotential1D(text)
