import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbsdelab.errors import (
    ArityError, DomainError, ExprSyntaxError, MissingBindingError, UnknownIdentifierError,
)
from fbsdelab.expr import BinOp, Call, Num, Var, eval_expr, parse, to_source

VARS = ("t", "x", "y1", "y2", "z")
finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)


def test_single_variable():
    assert parse("x", {"x"}).root == Var("x")


def test_structure_of_sum_of_product():
    ast = parse("0.5*sin(x)+y1", {"x", "y1", "y2"})
    assert ast.root == BinOp("+", BinOp("*", Num(0.5), Call("sin", (Var("x"),))), Var("y1"))


def test_trailing_operator_reports_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse("x +", {"x"})
    assert info.value.offset == 3


def test_unknown_identifier_and_scope():
    with pytest.raises(UnknownIdentifierError):
        parse("foo(x)", {"x"})
    with pytest.raises(UnknownIdentifierError):
        parse("y1", {"x"})


def test_arity_mismatch():
    with pytest.raises(ArityError):
        parse("max(x)", {"x"})


@pytest.mark.parametrize("src, bindings, expected", [
    ("x*x", {"x": 3.0}, 9.0),
    ("max(x,0)", {"x": -2.0}, 0.0),
    ("exp(0)", {}, 1.0),
    ("-x^2", {"x": 3.0}, -9.0),
    ("2^3^2", {}, 512.0),
    ("8/4/2", {}, 1.0),
    ("1-2-3", {}, -4.0),
])
def test_evaluation(src, bindings, expected):
    assert eval_expr(parse(src, VARS), bindings) == expected


def test_missing_binding():
    with pytest.raises(MissingBindingError):
        eval_expr(parse("x+y1", VARS), {"x": 1.0})


@pytest.mark.parametrize("src, x", [("log(x)", 0.0), ("1/x", 0.0), ("sqrt(x)", -1.0)])
def test_domain_errors_are_reported(src, x):
    with pytest.raises(DomainError):
        eval_expr(parse(src, VARS), {"x": x})


def test_vectorised_evaluation_matches_scalar():
    ast = parse("abs(x) + sin(t)*y1", VARS)
    xs = np.linspace(-2, 2, 7)
    out = eval_expr(ast, {"x": xs, "t": 0.3, "y1": 2.0})
    for xi, oi in zip(xs, out):
        assert oi == eval_expr(ast, {"x": float(xi), "t": 0.3, "y1": 2.0})


def _exprs():
    leaves = st.one_of(
        st.sampled_from(VARS).map(Var),
        st.floats(min_value=0, max_value=100, allow_nan=False).map(Num),
    )

    def extend(children):
        return st.one_of(
            st.tuples(st.sampled_from("+-*/^"), children, children).map(lambda a: BinOp(*a)),
            children.map(lambda c: BinOp("-", Num(0.0), c)),
            st.tuples(st.sampled_from(["sin", "cos", "exp", "tanh", "abs"]), children)
            .map(lambda a: Call(a[0], (a[1],))),
            st.tuples(st.sampled_from(["min", "max"]), children, children)
            .map(lambda a: Call(a[0], (a[1], a[2]))),
        )

    return st.recursive(leaves, extend, max_leaves=12)


@settings(max_examples=200, deadline=None)
@given(_exprs())
def test_round_trip_reparses_to_same_tree(node):
    text = to_source(node)
    assert parse(text, VARS).root == node
    assert parse(to_source(parse(text, VARS)), VARS) == parse(text, VARS)


@settings(max_examples=200, deadline=None)
@given(finite, finite, finite)
def test_precedence_of_product_over_sum(a, b, c):
    ast = parse("a0+b0*c0".replace("a0", "x").replace("b0", "y1").replace("c0", "z"), VARS)
    assert eval_expr(ast, {"x": a, "y1": b, "z": c}) == a + (b * c)


@settings(max_examples=100, deadline=None)
@given(finite, finite)
def test_evaluation_is_pure(x, y):
    ast = parse("sin(x)*y1 + max(x, y1)^2 / (1 + abs(y1))", VARS)
    first = eval_expr(ast, {"x": x, "y1": y})
    second = eval_expr(ast, {"x": x, "y1": y})
    assert math.isfinite(first)
    assert np.float64(first).tobytes() == np.float64(second).tobytes()
