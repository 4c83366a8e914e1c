"""Arithmetic expressions in ``x`` and ``y`` for potentials.

Grammar, lowest precedence first::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | "+" unary | power
    power  := atom ("^" unary)?          # right associative
    atom   := NUMBER | "x" | "y" | "pi" | FUNC "(" expr ")" | "(" expr ")"

Expressions are compiled to closures over numpy ufuncs, so a parsed
potential evaluates element-wise on arrays.
"""
from __future__ import annotations

import re

import numpy as np

FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "abs": np.abs}
CONSTANTS = {"pi": np.pi}

_TOKEN = re.compile(r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))")


class PotentialSyntaxError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            start = len(text) - len(text[pos:].lstrip())
            raise PotentialSyntaxError(f"unexpected character {text[start]!r}", start)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value:
            found = "end of input" if kind == "end" else repr(val)
            raise PotentialSyntaxError(f"expected {value!r}, found {found}", pos)

    def parse(self):
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise PotentialSyntaxError(f"unexpected {val!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            rhs = self.term()
            node = _binary(np.add if op == "+" else np.subtract, node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            rhs = self.unary()
            node = _binary(np.multiply if op == "*" else np.divide, node, rhs)
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            inner = self.unary()
            return lambda x, y: -inner(x, y)
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            exponent = self.unary()
            return _binary(np.power, base, exponent)
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            c = float(val)
            return lambda x, y: c
        if kind == "name":
            if val == "x":
                return lambda x, y: x
            if val == "y":
                return lambda x, y: y
            if val in CONSTANTS:
                c = CONSTANTS[val]
                return lambda x, y: c
            if val in FUNCTIONS:
                f = FUNCTIONS[val]
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return lambda x, y: f(arg(x, y))
            raise PotentialSyntaxError(f"unknown identifier {val!r}", pos)
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise PotentialSyntaxError(f"expected a number, variable or '(', found {found}", pos)


def _binary(op, lhs, rhs):
    return lambda x, y: op(lhs(x, y), rhs(x, y))


class Potential:
    """Parsed potential ``V(x, y)``; calling it broadcasts over arrays."""

    def __init__(self, text: str):
        if not text or not text.strip():
            raise PotentialSyntaxError("empty expression", 0)
        self.text = text
        self._fn = _Parser(text).parse()

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(np.asarray(self._fn(x, y), dtype=float), np.broadcast(x, y).shape)

    def __repr__(self):
        return f"Potential({self.text!r})"


def parse_potential(text: str) -> Potential:
    return Potential(text)
