import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from layerforge.fieldexpr import (BinOp, ExpressionError, ExpressionSyntaxError, FieldDomainError, Num, ScalarField,
                                  eval_jet, parse, to_source)


def test_precedence_and_associativity():
    f = ScalarField("1 + 2*y1^2^1 - -y2/4")
    assert f(np.array(3.0), np.array(2.0)) == pytest.approx(1 + 18 + 0.5)
    assert ScalarField("2^3^2")(0.0, 0.0) == pytest.approx(512.0)
    assert ScalarField("-2^2")(0.0, 0.0) == pytest.approx(-4.0)


def test_syntax_error_offset_is_one_based():
    with pytest.raises(ExpressionSyntaxError) as info:
        parse("1 + exp(sin(y2)")
    assert info.value.offset == 16


@pytest.mark.parametrize("src", ["1 +", "(y1", "y1 y2", "2 ** 3"])
def test_rejects_malformed(src):
    with pytest.raises(ExpressionSyntaxError):
        parse(src)


@pytest.mark.parametrize("src", ["y3", "foo(y1)"])
def test_rejects_unknown_names(src):
    with pytest.raises(ExpressionError):
        parse(src)


def test_roundtrip_through_source():
    src = "sin(y1)*exp(-y2^2)/(1+0.5*tanh(y1*y2)) - sqrt(2+y1^2) + log(3+cos(y2))"
    node = parse(src)
    again = parse(to_source(node))
    pts = np.random.default_rng(1).uniform(-1, 1, (2, 20))
    assert np.allclose(eval_jet(node, pts).value, eval_jet(again, pts).value, rtol=1e-15)


def test_domain_errors():
    with pytest.raises(FieldDomainError):
        ScalarField("log(y1)")(np.array([-1.0]), np.array([0.0]))
    with pytest.raises(FieldDomainError):
        ScalarField("sqrt(y1-2)")(np.array([1.0]), np.array([0.0]))
    with pytest.raises(FieldDomainError):
        ScalarField("y1^0.5")(np.array([-1.0]), np.array([0.0]))


def test_constant_detection():
    assert ScalarField("2*3-1").is_constant()
    assert not ScalarField("1+0*y1+y2").is_constant()


def _fd_jet(f, p, h=1e-4):
    g = np.zeros(2)
    H = np.zeros((2, 2))
    E = np.eye(2) * h
    val = lambda q: float(f(np.array([q[0]]), np.array([q[1]]))[0])
    for i in range(2):
        g[i] = (val(p + E[i]) - val(p - E[i])) / (2 * h)
        for j in range(2):
            H[i, j] = (val(p + E[i] + E[j]) - val(p + E[i] - E[j]) - val(p - E[i] + E[j])
                       + val(p - E[i] - E[j])) / (4 * h * h)
    return g, H


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.8, 0.8), st.floats(-0.8, 0.8))
def test_jet_matches_finite_differences(y1, y2):
    f = ScalarField("exp(0.3*y1)*sin(y2+1) + (2+y1*y2)^1.5 - y1^3/(2+y2^2) + log(2+cos(y1))")
    j = f.jet(np.array([[y1], [y2]]))
    g, H = _fd_jet(f, np.array([y1, y2]))
    assert np.allclose(j.grad[:, 0], g, atol=1e-7)
    assert np.allclose(j.hess[:, :, 0], H, atol=1e-5)


def test_directional_derivatives():
    f = ScalarField("y1^2*y2 + 3*y2")
    j = f.jet(np.array([[1.0], [2.0]]))
    v = np.array([[0.5], [-1.0]])
    # grad = (2 y1 y2, y1^2 + 3) = (4, 4); hess = [[2 y2, 2 y1], [2 y1, 0]]
    assert j.directional(v)[0] == pytest.approx(4 * 0.5 - 4)
    assert j.directional2(v)[0] == pytest.approx(4 * 0.25 + 2 * 2 * 0.5 * -1.0)


def test_tree_nodes_are_immutable():
    node = parse("1+y1")
    assert isinstance(node, BinOp) and isinstance(node.left, Num)
    with pytest.raises(Exception):
        node.op = "-"
