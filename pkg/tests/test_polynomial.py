from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chancetube.polynomial import (
    Monomial,
    PolyArray,
    Polynomial,
    VariableOrder,
    basis_size,
    exponent_basis,
    exponent_index,
    monomial_basis,
    parse_polynomial as P,
)

x, y = Polynomial.var("x"), Polynomial.var("y")


def test_add_cases():
    assert (x + 1) + (x - 1) == 2 * x
    assert (P("x1^2") + P("x2^2")).almost_equal(P("x1^2 + x2^2"))
    assert 0.5 * x + 0.5 * x == x


def test_mul_cases():
    assert ((x + 1) * (x - 1)).almost_equal(x ** 2 - 1)
    s = P("x1 + x2")
    assert (s * s).almost_equal(P("x1^2 + 2*x1*x2 + x2^2"))
    z = (2 * x) * 0
    assert z.is_zero and len(z.terms) == 0


def test_substitute_cases():
    assert (y ** 2).substitute({"y": x + 1}).almost_equal(x ** 2 + 2 * x + 1)
    p = P("0.64 - x^2")
    got = p.substitute({"x": P("x0 + 0.2*w")})
    assert got.almost_equal(P("0.64 - x0^2 - 0.4*x0*w - 0.04*w^2"))
    q = P("3*x^3 - x*y + 2")
    assert q.substitute({"x": x}) == q


def test_eval_cases():
    assert (x ** 2 + 1).eval({"x": 2}) == 5
    assert P("x1*x2").eval({"x1": 3, "x2": -1}) == -3
    f = P("x + 4*x^2 + 0.6*x^3 + u + 0.2*w - 0.1")
    assert f.eval({"x": 0, "u": 0, "w": 0}) == pytest.approx(-0.1, abs=1e-15)


def test_eval_unbound_raises():
    with pytest.raises(KeyError):
        (x * y).eval({"x": 1.0})


def test_monomial_basis():
    names = [str(m) for m in monomial_basis(["x1", "x2"], 2)]
    assert names == ["1", "x1", "x2", "x1^2", "x1*x2", "x2^2"]
    assert [str(m) for m in monomial_basis(["x"], 0)] == ["1"]
    assert len(monomial_basis(["a", "b", "c", "d"], 2)) == comb(6, 2) == 15


@pytest.mark.parametrize("n", range(1, 7))
@pytest.mark.parametrize("d", range(0, 7))
def test_index_roundtrip(n, d):
    basis = exponent_basis(n, d)
    idx = exponent_index(n, d)
    assert len(basis) == basis_size(n, d) == comb(n + d, d)
    assert all(idx[a] == i for i, a in enumerate(basis))
    degrees = [sum(a) for a in basis]
    assert degrees == sorted(degrees)
    for lo, hi in zip(basis, basis[1:]):
        if sum(lo) == sum(hi):
            assert lo > hi  # x1 before x2 within a degree


def test_variable_order_rank_is_total():
    order = VariableOrder(["x1", "x2"])
    monos = monomial_basis(order, 3)
    assert sorted(monos, key=order.rank) == monos


def test_polyarray_roundtrip_and_cap():
    p = P("1 + x + 2*x*w + w^3")
    a = PolyArray.from_polynomial(p, ("x", "w"))
    assert a.to_polynomial().almost_equal(p)
    sq = a.mul(a)
    assert sq.to_polynomial().almost_equal(p * p)
    capped = a.mul(a, cap=1, cap_mask=np.array([True, False])).to_polynomial()
    assert capped.degree_in(["x"]) <= 1
    assert capped.almost_equal((p * p).truncate(1, ["x"]))


# -- properties ---------------------------------------------------------------

VARS = ("a", "b", "c")
coef = st.floats(-3, 3, allow_nan=False).map(lambda v: round(v, 3))
mono = st.tuples(*[st.integers(0, 2)] * 3).map(lambda e: Monomial(dict(zip(VARS, e))))
polys = st.dictionaries(mono, coef, max_size=5).map(Polynomial)
points = st.tuples(*[st.floats(-1.5, 1.5)] * 3).map(lambda t: dict(zip(VARS, t)))


@settings(max_examples=60, deadline=None)
@given(polys, polys, polys)
def test_ring_axioms(p, q, r):
    assert (p + q).almost_equal(q + p, 1e-12)
    assert (p * q).almost_equal(q * p, 1e-12)
    assert (p * (q + r)).almost_equal(p * q + p * r, 1e-9)


@settings(max_examples=60, deadline=None)
@given(polys, polys, polys, points)
def test_substitution_commutes_with_eval(p, s1, s2, pt):
    sigma = {"a": s1, "b": s2}
    lhs = p.substitute(sigma).eval(pt)
    inner = dict(pt, a=s1.eval(pt), b=s2.eval(pt))
    assert lhs == pytest.approx(p.eval(inner), rel=1e-9, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(polys, polys, polys)
def test_substitution_composes(p, s, t):
    sigma = {"a": s}
    tau = {"b": t}
    composed = {"a": s.substitute(tau), "b": t}
    assert p.substitute(sigma).substitute(tau).almost_equal(p.substitute(composed), 1e-8)
