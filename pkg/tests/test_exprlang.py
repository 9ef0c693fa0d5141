"""Parser/evaluator tests: grammar cases, error offsets, round-trips, purity."""

import math

import numpy as np
import pytest

from metamoran import exprlang
from metamoran.exprlang import (
    Bin,
    ExprDomainError,
    ExprEvalError,
    ExprSyntaxError,
    Num,
    Var,
    evaluate,
    evaluate_vec,
    parse,
    unparse,
)


def test_minimal_subtraction_ast():
    expr = parse("x - y")
    assert expr.ast == Bin("-", Var("x", None), Var("y", None))
    assert evaluate(expr, x=[2.0], y=[0.5]) == 1.5


def test_sine_kernel_example():
    expr = parse("2*sin(2*pi*(x-y))")
    assert evaluate(expr, x=[0.25], y=[0.0]) == pytest.approx(2.0)


def test_incomplete_input_offset():
    with pytest.raises(ExprSyntaxError) as err:
        parse("x +")
    assert err.value.offset == 4
    assert "atom" in err.value.expected


def test_product_example():
    assert evaluate(parse("x*(1+y)"), x=[0.2], y=[0.5]) == pytest.approx(0.3)


def test_min_exp():
    assert evaluate(parse("min(1, exp(r))"), r=0.0) == 1.0


def test_log_domain_error():
    with pytest.raises(ExprDomainError):
        evaluate(parse("log(x)"), x=[0.0])


def test_sqrt_domain_error_carries_offset():
    with pytest.raises(ExprDomainError) as err:
        evaluate(parse("1 + sqrt(0 - x)"), x=[2.0])
    assert err.value.offset == 5


def test_division_by_zero():
    with pytest.raises(ExprDomainError):
        evaluate(parse("1/(x-1)"), x=[1.0])


def test_operator_precedence():
    assert evaluate(parse("1+2*3^2")) == 19.0


def test_unary_minus_binds_tighter_than_mul():
    assert evaluate(parse("-2*3")) == -6.0


def test_power_right_associative():
    # 2^3^2 = 2^9, not (2^3)^2
    assert evaluate(parse("2^3^2")) == 512.0


def test_indexing_and_arity():
    expr = parse("x[0]*y[1]")
    assert evaluate(expr, x=[3.0, 7.0], y=[1.0, 5.0]) == 15.0
    with pytest.raises(ExprEvalError):
        evaluate(parse("x"), x=[1.0, 2.0])  # bare x is ambiguous in d=2
    with pytest.raises(ExprEvalError):
        evaluate(parse("x[3]"), x=[1.0])


def test_unknown_identifier():
    with pytest.raises(ExprSyntaxError):
        parse("q + 1")


def test_wrong_function_arity():
    with pytest.raises(ExprSyntaxError):
        parse("min(1)")
    with pytest.raises(ExprSyntaxError):
        parse("sin(1, 2)")


def test_scalar_variable_cannot_be_indexed():
    with pytest.raises(ExprSyntaxError):
        parse("r[0]")


def test_empty_source():
    with pytest.raises(ExprSyntaxError):
        parse("   ")


def test_variables_recorded():
    expr = parse("r + x[0]*y[0]")
    assert expr.variables == {"r", "x", "y"}
    assert expr.spatial
    assert not parse("x*y").spatial


# --- round-trip corpus -------------------------------------------------------


def _random_ast(rng, depth):
    roll = rng.integers(0, 8 if depth > 0 else 3)
    if roll == 0:
        return Num(float(round(rng.uniform(0, 10), 3)))
    if roll == 1:
        name = ("r", "rp", "x", "y")[rng.integers(0, 4)]
        if name in ("x", "y") and rng.random() < 0.5:
            return Var(name, int(rng.integers(0, 3)))
        return Var(name, None)
    if roll == 2:
        return exprlang.Const("pi")
    if roll == 3:
        return exprlang.Neg(_random_ast(rng, depth - 1))
    if roll in (4, 5):
        op = "+-*/^"[rng.integers(0, 5)]
        return Bin(op, _random_ast(rng, depth - 1), _random_ast(rng, depth - 1))
    name = ("sin", "cos", "exp", "log", "abs", "sqrt", "min", "max", "pow")[rng.integers(0, 9)]
    n_args = exprlang.FUNCS[name]
    return exprlang.Call(name, tuple(_random_ast(rng, depth - 1) for _ in range(n_args)))


def test_roundtrip_corpus_200():
    rng = np.random.default_rng(7)
    for _ in range(200):
        ast = _random_ast(rng, depth=4)
        printed = unparse(exprlang.RateExpr(source="", ast=ast, variables=frozenset()))
        reparsed = parse(printed)
        assert reparsed.ast == ast, printed
        # print of the reparse is a fixed point
        assert unparse(reparsed) == printed


def test_repeated_evaluation_bit_identical():
    expr = parse("exp(x)*sin(y) + r^2/(1+rp) - max(x, y)")
    kwargs = dict(r=0.3, rp=0.7, x=[1.234567], y=[0.5555])
    first = evaluate(expr, **kwargs)
    for _ in range(5):
        assert evaluate(expr, **kwargs) == first


def test_vectorized_matches_scalar():
    # numpy's libm may differ from math's by an ulp; the scalar path owns
    # the bit-exactness contract, the vector path must agree numerically.
    expr = parse("exp(y-x)*(1+r) + min(x, y)")
    rng = np.random.default_rng(3)
    r = rng.random(50)
    x = rng.normal(size=(50, 1))
    y = rng.normal(size=(50, 1))
    vec = evaluate_vec(expr, r=r, x=x, y=y)
    for k in range(50):
        assert vec[k] == pytest.approx(
            evaluate(expr, r=float(r[k]), x=x[k], y=y[k]), rel=1e-12
        )


def test_vectorized_deterministic():
    expr = parse("exp(y-x)*(1+r)")
    rng = np.random.default_rng(4)
    r = rng.random(32)
    x = rng.normal(size=(32, 1))
    y = rng.normal(size=(32, 1))
    first = evaluate_vec(expr, r=r, x=x, y=y)
    assert np.array_equal(first, evaluate_vec(expr, r=r, x=x, y=y))


def test_overflow_is_ieee_infinity():
    assert evaluate(parse("exp(x)"), x=[1e4]) == math.inf
