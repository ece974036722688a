import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpmfg.errors import ModelSemanticError, ModelSyntaxError
from jumpmfg.expr import (BinOp, Call, Neg, Num, Var, compile_many, depth, derivative, evaluate,
                          parse_expression, to_text)

K = 3


def test_precedence_and_associativity():
    assert parse_expression("1 - 2 - 3", K) == BinOp("-", BinOp("-", Num(1.0), Num(2.0)), Num(3.0))
    assert parse_expression("8 / 4 / 2", K) == BinOp("/", BinOp("/", Num(8.0), Num(4.0)), Num(2.0))
    assert parse_expression("1 + 2 * 3", K) == BinOp("+", Num(1.0), BinOp("*", Num(2.0), Num(3.0)))
    # unary minus binds tighter than the product
    assert parse_expression("-x1 * x2", K) == BinOp("*", Neg(Var(1)), Var(2))
    assert evaluate(parse_expression("2 - -3", K), 0.0, [0, 0, 0]) == 5.0


def test_functions_and_variables():
    e = parse_expression("max(x1, x2, 0.5) + exp(-t) * min(x3, 1)", K)
    assert evaluate(e, 0.0, [0.2, 0.3, 0.5]) == pytest.approx(0.5 + 0.5)
    assert evaluate(e, 1.0, [0.7, 0.3, 0.0]) == pytest.approx(0.7)


def test_hand_evaluated_rate():
    e = parse_expression("x2 * (1 + 0.5*exp(-t))", 2)
    assert evaluate(e, 0.0, [0.25, 0.75]) == pytest.approx(1.125, abs=1e-15)


def test_unknown_variable_reports_position():
    with pytest.raises(ModelSemanticError) as info:
        parse_expression("x1 + x3", 2, line=4, column=10)
    assert "x3" in str(info.value)
    assert (info.value.line, info.value.column) == (4, 15)


@pytest.mark.parametrize("text, col", [("1 +", 4), ("exp()", 5), ("(x1", 4), ("x1 x2", 4),
                                       ("min(1)", 1), ("2 $ 3", 3), ("foo(1)", 1)])
def test_syntax_errors_carry_columns(text, col):
    with pytest.raises(ModelSyntaxError) as info:
        parse_expression(text, 2)
    assert info.value.column == col


def test_depth_limit():
    ok = "(" * 60 + "x1" + ")" * 60
    assert depth(parse_expression(ok, 2)) == 1
    deep = "-" * 63 + "x1"
    assert depth(parse_expression(deep, 2)) == 64
    with pytest.raises(ModelSyntaxError):
        parse_expression("-" + deep, 2)


leaf = st.one_of(
    st.floats(min_value=0, max_value=1e6, allow_nan=False).map(Num),
    st.integers(min_value=0, max_value=K).map(Var),
)


def _extend(children):
    return st.one_of(
        children.map(Neg),
        st.tuples(st.sampled_from("+-*/"), children, children).map(lambda a: BinOp(*a)),
        children.map(lambda c: Call("exp", (c,))),
        st.tuples(st.sampled_from(["min", "max"]), st.lists(children, min_size=2, max_size=3)).map(
            lambda a: Call(a[0], tuple(a[1]))),
    )


trees = st.recursive(leaf, _extend, max_leaves=12)


@given(trees)
@settings(max_examples=300, deadline=None)
def test_print_parse_roundtrip(tree):
    text = to_text(tree)
    assert parse_expression(text, K) == tree
    assert to_text(parse_expression(text, K)) == text


@given(trees, st.lists(st.floats(0, 1), min_size=K, max_size=K), st.floats(0, 2))
@settings(max_examples=200, deadline=None)
def test_compiled_matches_tree_walk(tree, x, t):
    with np.errstate(all="ignore"):
        try:
            ref = evaluate(tree, t, x)
        except (OverflowError, ZeroDivisionError):
            return
        (got,) = compile_many([tree], K)(t, *x)
        (arr,) = compile_many([tree], K, array=True)(np.float64(t), *map(np.float64, x))
    if math.isfinite(ref):
        assert got == pytest.approx(ref, rel=1e-12, abs=1e-12)
        assert float(arr) == pytest.approx(ref, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("text", ["x1 * x2 + exp(-2 * x1)", "x1 / (1 + x2)", "max(x1, 2 * x2) - x1 * x1",
                                  "min(1, 3 * x2) * exp(x1)", "-(x1 - x2) * (x1 + 0.5)"])
def test_derivative_matches_central_difference(text):
    e = parse_expression(text, 2)
    rng = np.random.default_rng(7)
    for x in rng.uniform(0.05, 0.95, size=(20, 2)):
        for i in (1, 2):
            h = 1e-6
            up, dn = x.copy(), x.copy()
            up[i - 1] += h
            dn[i - 1] -= h
            fd = (evaluate(e, 0.0, up) - evaluate(e, 0.0, dn)) / (2 * h)
            assert evaluate(derivative(e, i), 0.0, x) == pytest.approx(fd, rel=1e-5, abs=1e-6)
