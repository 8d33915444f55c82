"""Arithmetic expressions for coefficient definitions.

Grammar (ASCII, whitespace-insensitive)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?
    primary := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

``^`` binds tighter than unary minus, so ``-x^2`` is ``-(x^2)``; it is right
associative. ``+ - * /`` associate to the left.

Evaluation works on Python floats and on numpy arrays alike (arrays broadcast
as usual). Any non-finite intermediate produced by ``log``, ``sqrt``, ``/``,
``^`` or ``exp`` raises :class:`DomainError` instead of propagating NaN.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import (
    ArityError,
    DomainError,
    ExprSyntaxError,
    MissingBindingError,
    UnknownIdentifierError,
)

__all__ = [
    "Num", "Var", "Neg", "BinOp", "Call", "ExprAst",
    "parse", "eval_expr", "to_source", "FUNCTIONS",
]


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
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Node = Num | Var | Neg | BinOp | Call

# name -> (arity, implementation, may produce non-finite from finite input)
FUNCTIONS: dict[str, tuple[int, Callable, bool]] = {
    "sin": (1, np.sin, False),
    "cos": (1, np.cos, False),
    "tanh": (1, np.tanh, False),
    "abs": (1, np.abs, False),
    "exp": (1, np.exp, True),
    "log": (1, np.log, True),
    "sqrt": (1, np.sqrt, True),
    "min": (2, np.minimum, False),
    "max": (2, np.maximum, False),
}

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, allowed: frozenset[str]):
        self.tokens = _tokenize(source)
        self.i = 0
        self.allowed = allowed

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        kind, value, pos = self.peek()
        if value != text or kind == "end":
            found = "end of input" if kind == "end" else repr(value)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", pos)
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        kind, value, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {value!r}", pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def primary(self) -> Node:
        kind, value, pos = self.advance()
        if kind == "num":
            number = float(value)
            if not np.isfinite(number):
                raise ExprSyntaxError(f"literal {value!r} overflows", pos)
            return Num(number)
        if kind == "name":
            if self.peek()[1] == "(":
                return self.call(value, pos)
            if value in FUNCTIONS:
                raise ExprSyntaxError(f"function {value!r} needs an argument list", pos + len(value))
            if value not in self.allowed:
                raise UnknownIdentifierError(value, pos)
            return Var(value)
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(value)
        raise ExprSyntaxError(f"expected a number, name or '(', found {found}", pos)

    def call(self, name: str, pos: int) -> Node:
        if name not in FUNCTIONS:
            raise UnknownIdentifierError(name, pos)
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == ",":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        arity = FUNCTIONS[name][0]
        if len(args) != arity:
            raise ArityError(name, arity, len(args), pos)
        return Call(name, tuple(args))


def free_variables(node: Node) -> frozenset[str]:
    if isinstance(node, Var):
        return frozenset([node.name])
    if isinstance(node, Num):
        return frozenset()
    if isinstance(node, Neg):
        return free_variables(node.operand)
    if isinstance(node, BinOp):
        return free_variables(node.left) | free_variables(node.right)
    out = frozenset()
    for a in node.args:
        out |= free_variables(a)
    return out


def _check(value, what, env):
    if np.all(np.isfinite(value)):
        return value
    raise DomainError(f"non-finite result of {what}", _locate(value, env))


def _locate(value, env):
    """Bindings at the first non-finite entry of ``value``."""
    arr = np.asarray(value)
    if arr.ndim == 0:
        return {k: float(np.asarray(v).ravel()[0]) if np.ndim(v) else float(v) for k, v in env.items()}
    idx = np.unravel_index(int(np.argmax(~np.isfinite(arr))), arr.shape)
    point = {}
    for k, v in env.items():
        v = np.asarray(v)
        point[k] = float(np.broadcast_to(v, arr.shape)[idx]) if v.ndim else float(v)
    point["index"] = tuple(int(i) for i in idx)
    return point


def _compile(node: Node) -> Callable[[Mapping], object]:
    if isinstance(node, Num):
        value = np.float64(node.value)
        return lambda env: value
    if isinstance(node, Var):
        name = node.name

        def var(env):
            try:
                return env[name]
            except KeyError:
                raise MissingBindingError(f"no binding for variable {name!r}") from None
        return var
    if isinstance(node, Neg):
        inner = _compile(node.operand)
        return lambda env: np.negative(inner(env))
    if isinstance(node, BinOp):
        lf, rf = _compile(node.left), _compile(node.right)
        if node.op == "+":
            return lambda env: np.add(lf(env), rf(env))
        if node.op == "-":
            return lambda env: np.subtract(lf(env), rf(env))
        if node.op == "*":
            return lambda env: np.multiply(lf(env), rf(env))
        if node.op == "/":
            def div(env):
                with np.errstate(all="ignore"):
                    out = np.divide(lf(env), rf(env))
                return _check(out, "'/'", env)
            return div

        def power(env):
            with np.errstate(all="ignore"):
                out = np.power(lf(env), rf(env))
            return _check(out, "'^'", env)
        return power
    arity, impl, risky = FUNCTIONS[node.func]
    argf = [_compile(a) for a in node.args]
    if not risky:
        if arity == 1:
            f0 = argf[0]
            return lambda env: impl(f0(env))
        f0, f1 = argf
        return lambda env: impl(f0(env), f1(env))
    f0 = argf[0]
    label = f"{node.func}()"

    def risky_call(env):
        with np.errstate(all="ignore"):
            out = impl(f0(env))
        return _check(out, label, env)
    return risky_call


@dataclass(frozen=True, eq=False)
class ExprAst:
    """A parsed expression: immutable syntax tree plus a compiled evaluator."""

    root: Node
    source: str = ""
    variables: frozenset = frozenset()
    _fn: Callable = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "variables", free_variables(self.root))
        object.__setattr__(self, "_fn", _compile(self.root))

    def __eq__(self, other):
        return isinstance(other, ExprAst) and self.root == other.root

    def __hash__(self):
        return hash(self.root)

    def __call__(self, **bindings):
        return eval_expr(self, bindings)

    def __str__(self):
        return to_source(self)

    @property
    def is_constant(self) -> bool:
        return not self.variables


def parse(source: str, allowed_vars: Iterable[str]) -> ExprAst:
    """Parse ``source`` into an :class:`ExprAst` whose free variables lie in ``allowed_vars``."""
    if not isinstance(source, str):
        raise ExprSyntaxError(f"expression must be text, got {type(source).__name__}", 0)
    allowed = frozenset(allowed_vars)
    return ExprAst(_Parser(source, allowed).parse(), source)


def eval_expr(ast: ExprAst, bindings: Mapping[str, object]):
    """Evaluate ``ast``; returns a float for scalar bindings, an array otherwise."""
    missing = ast.variables - set(bindings)
    if missing:
        raise MissingBindingError(f"no binding for variable(s) {sorted(missing)}")
    out = ast._fn(bindings)
    out = _check(out, f"expression {to_source(ast)!r}", bindings)
    if np.ndim(out) == 0:
        return float(out)
    return out


# precedence levels used by the printer
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    return _PREC["atom"]


def _fmt(node: Node) -> str:
    if isinstance(node, Num):
        if node.value < 0:
            return f"({node.value!r})"
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({', '.join(_fmt(a) for a in node.args)})"
    if isinstance(node, Neg):
        inner = _fmt(node.operand)
        return f"-({inner})" if _prec(node.operand) < _PREC["neg"] else f"-{inner}"
    p = _PREC[node.op]
    left, right = _fmt(node.left), _fmt(node.right)
    if node.op == "^":
        if _prec(node.left) <= p:
            left = f"({left})"
        if _prec(node.right) < _PREC["neg"]:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(node.left) < p:
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


def to_source(ast: ExprAst | Node) -> str:
    """Render with the minimal parentheses needed to reparse to the same tree."""
    return _fmt(ast.root if isinstance(ast, ExprAst) else ast)
