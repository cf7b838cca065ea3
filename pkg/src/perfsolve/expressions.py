"""Tiny arithmetic expression language for field definitions.

Grammar (standard precedence, ^ binds tightest and is right-associative;
binary + - * / are left-associative; unary minus sits between ^ and * /):

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := atom ("^" unary)?
    atom    := NUMBER | IDENT | IDENT "(" expr ")" | "(" expr ")"

Known functions: sin cos exp tanh sqrt abs.  Variables are restricted to the
set supplied at parse time (x1, x2 and optionally u).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "sqrt": np.sqrt,
    "abs": np.abs,
}

DEFAULT_VARIABLES = ("x1", "x2", "u")


class ExpressionError(ValueError):
    def __init__(self, message: str, position: Optional[int] = None):
        self.position = position
        super().__init__(message if position is None else f"{message} at {position}")


class EvaluationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, Bin, Call]

_TOKEN = re.compile(r"\s*(?:(\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?|([A-Za-z_]\w*)|([()+\-*/^]))")
_NUMBER = re.compile(r"(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?")


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    # token positions are 1-based columns, matching error-message convention
    tokens = []
    i = 0
    while i < len(src):
        if src[i].isspace():
            i += 1
            continue
        m = _NUMBER.match(src, i)
        if m:
            tokens.append(("num", m.group(0), i + 1))
            i = m.end()
            continue
        m = re.match(r"[A-Za-z_]\w*", src[i:])
        if m:
            tokens.append(("ident", m.group(0), i + 1))
            i += m.end()
            continue
        if src[i] in "()+-*/^":
            tokens.append(("op", src[i], i + 1))
            i += 1
            continue
        raise ExpressionError(f"unexpected character {src[i]!r}", i + 1)
    return tokens


class _Parser:
    def __init__(self, tokens, variables):
        self.tokens = tokens
        self.pos = 0
        self.variables = set(variables)

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None, -1)

    def next(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.next()
        if val != value:
            raise ExpressionError(f"expected {value!r}, got {val!r}", pos)

    def parse(self) -> Node:
        node = self.expr()
        kind, val, pos = self.peek()
        if kind is not None:
            raise ExpressionError(f"unexpected token {val!r}", pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.next()[1]
            node = Bin(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.next()[1]
            node = Bin(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[1] == "-":
            self.next()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        node = self.atom()
        if self.peek()[1] == "^":
            self.next()
            return Bin("^", node, self.unary())
        return node

    def atom(self) -> Node:
        kind, val, pos = self.next()
        if kind == "num":
            return Num(float(val))
        if kind == "ident":
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            if val in self.variables:
                return Var(val)
            raise ExpressionError(f"unknown identifier {val}", pos)
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ExpressionError(f"unexpected token {val!r}", pos)


def parse_expression(src: str, variables: Sequence[str] = DEFAULT_VARIABLES) -> Node:
    return _Parser(_tokenize(src), variables).parse()


def evaluate(node: Node, env: dict):
    """Evaluate with an environment of scalars or numpy arrays."""
    with np.errstate(divide="raise", invalid="raise", over="raise"):
        try:
            return _eval(node, env)
        except FloatingPointError as e:
            raise EvaluationError(str(e)) from e
        except ZeroDivisionError as e:
            raise EvaluationError("division by zero") from e


def _eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, Call):
        arg = _eval(node.arg, env)
        if node.func == "sqrt" and np.any(np.asarray(arg) < 0):
            raise EvaluationError("square root of a negative value")
        return FUNCTIONS[node.func](arg)
    left = _eval(node.left, env)
    right = _eval(node.right, env)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if node.op == "/":
        return left / right
    return np.power(left, right)


def variables_used(node: Node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Num):
        return set()
    if isinstance(node, Neg):
        return variables_used(node.operand)
    if isinstance(node, Call):
        return variables_used(node.arg)
    return variables_used(node.left) | variables_used(node.right)


def constant_value(node: Node) -> Optional[float]:
    """Fold a variable-free tree to a float, else None."""
    if variables_used(node):
        return None
    return float(evaluate(node, {}))


def pretty(node: Node) -> str:
    """Minimal-parenthesis form that re-parses to an identical tree."""
    return _pretty(node, 0)


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _pretty(node, parent_prec, right_side=False):
    if isinstance(node, Num):
        s = repr(node.value)
        return s
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({_pretty(node.arg, 0)})"
    if isinstance(node, Neg):
        inner = _pretty(node.operand, _PREC["neg"])
        s = f"-{inner}"
        return f"({s})" if parent_prec > _PREC["neg"] else s
    prec = _PREC[node.op]
    # left-associative chains need parens on an equal-precedence right child;
    # ^ is right-associative so the rule flips
    if node.op == "^":
        left = _pretty(node.left, prec + 1)
        right = _pretty(node.right, prec)
    else:
        left = _pretty(node.left, prec)
        right = _pretty(node.right, prec + 1)
    s = f"{left} {node.op} {right}"
    return f"({s})" if parent_prec > prec else s
