import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chancetube.distributions import beta, dirac, moments as dmoments, normal, tri, uniform
from chancetube.moments import (
    BilinearError,
    InsufficientOrderError,
    LinForm,
    MomentSequence,
    RelaxationOrderError,
    affine_transform,
    localizing_matrix,
    moment_matrix,
    product_sequence,
    psd_check,
)
from chancetube.polynomial import Polynomial, exponent_basis, parse_polynomial as P


def yv(a):
    return LinForm.var(("y", a))


def test_moment_matrix_layout_n2_d2():
    y = MomentSequence.symbolic(("x1", "x2"), 4)
    M = moment_matrix(y, 2)
    basis = exponent_basis(2, 2)
    assert M.size == 6
    assert [M.entry(0, j) for j in range(6)] == [yv(a) for a in [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]]
    assert M.entry(3, 3) == yv((4, 0))
    assert M.entry(5, 5) == yv((0, 4))
    for i, a in enumerate(basis):
        for j, b in enumerate(basis):
            assert M.entry(i, j) == yv((a[0] + b[0], a[1] + b[1]))


def test_moment_matrix_uniform_and_dirac():
    u = MomentSequence.from_distributions(("x",), [uniform(0, 1)], 2)
    assert np.allclose(moment_matrix(u, 1).evaluate(), [[1, 0.5], [0.5, 1 / 3]])
    c = 0.7
    dm = moment_matrix(MomentSequence.dirac(("x",), [c], 6), 3).evaluate()
    v = c ** np.arange(4)
    assert np.allclose(dm, np.outer(v, v))
    assert np.linalg.matrix_rank(dm, tol=1e-10) == 1


def test_localizing_matrix_formula():
    b, c = 2.5, 0.75
    p = b * Polynomial.var("x1") - c * Polynomial.var("x2") ** 2
    y = MomentSequence.symbolic(("x1", "x2"), 4)
    L = localizing_matrix(y, p, 2)
    basis = exponent_basis(2, 1)
    assert L.size == 3
    assert L.entry(0, 0) == b * yv((1, 0)) - c * yv((0, 2))
    for i, a in enumerate(basis):
        for j, e in enumerate(basis):
            s = (a[0] + e[0], a[1] + e[1])
            assert L.entry(i, j) == b * yv((s[0] + 1, s[1])) - c * yv((s[0], s[1] + 2))
    # numeric spot check: uniform on the unit square
    sq = MomentSequence.from_distributions(("x1", "x2"), [uniform(0, 1), uniform(0, 1)], 4)
    Ln = localizing_matrix(sq, p, 2).evaluate()
    ref = lambda i, j: b / (i + 2) / (j + 1) - c / (i + 1) / (j + 3)
    expect = np.array([[ref(a[0] + e[0], a[1] + e[1]) for e in basis] for a in basis])
    assert np.abs(Ln - expect).max() < 1e-12


def test_localizing_special_cases():
    y = MomentSequence.from_distributions(("x",), [uniform(-1, 1)], 2)
    L = localizing_matrix(y, P("1 - x^2"), 1).evaluate()
    assert L.shape == (1, 1) and L[0, 0] == pytest.approx(2 / 3)
    s = MomentSequence.symbolic(("x", "w"), 6)
    one = localizing_matrix(s, Polynomial.constant(1.0), 3)
    M = moment_matrix(s, 3)
    assert all(one.entry(i, j) == M.entry(i, j) for i in range(M.size) for j in range(M.size))
    with pytest.raises(RelaxationOrderError) as info:
        localizing_matrix(s, P("x^5"), 2)
    assert info.value.required_order == 3
    with pytest.raises(InsufficientOrderError):
        moment_matrix(s, 4)


def test_localizing_linearity():
    y = MomentSequence.from_distributions(("x", "w"), [normal(0.1, 0.3), tri(0.2)], 6)
    p, q = P("1 - x^2 + x*w"), P("x - 2*w^2")
    a, b = 1.7, -0.4
    lhs = localizing_matrix(y, a * p + b * q, 3).evaluate()
    rhs = a * localizing_matrix(y, p, 3).evaluate() + b * localizing_matrix(y, q, 3).evaluate()
    assert np.allclose(lhs, rhs, atol=1e-13)


@pytest.mark.parametrize("z,sign", [((0.2, 0.3), 1), ((1.2, 0.0), -1)])
def test_dirac_localizer_sign(z, sign):
    y = MomentSequence.dirac(("x1", "x2"), z, 6)
    L = localizing_matrix(y, P("1 - x1^2 - x2^2"), 3).evaluate()
    ok, lam = psd_check(L)
    assert ok if sign > 0 else lam < -1e-6


def test_product_sequence():
    u = MomentSequence.from_distributions(("a",), [uniform(0, 1)], 4)
    v = MomentSequence.from_distributions(("b",), [uniform(0, 1)], 4)
    assert product_sequence([u, v])[(1, 1)] == pytest.approx(0.25)
    d0 = MomentSequence.dirac(("c",), [0.0], 3)
    pr = product_sequence([u, d0])
    assert pr[(2, 0)] == pytest.approx(1 / 3) and pr[(2, 1)] == 0 and pr[(1, 2)] == 0
    g = MomentSequence.symbolic(("g",), 4, "yG")
    mixed = product_sequence([g, u])
    assert mixed.order == 4
    assert mixed[(1, 2)] == LinForm.var(("yG", (1,))) * (1 / 3)
    with pytest.raises(BilinearError):
        product_sequence([g, MomentSequence.symbolic(("h",), 4, "yH")])


def test_psd_check_cases():
    assert psd_check(np.eye(3)) == (True, 1.0)
    ok, lam = psd_check(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert not ok and lam == pytest.approx(-1.0)
    u = MomentSequence.from_distributions(("x",), [uniform(0, 1)], 6)
    assert psd_check(moment_matrix(u, 3).evaluate())[0]


def test_perturbed_interior_moment_breaks_psd():
    m = dmoments(uniform(0, 1), 6).copy()
    m[3] += 1e-3
    y = MomentSequence.from_array(("x",), 6, m)
    ok, lam = psd_check(moment_matrix(y, 3).evaluate())
    assert not ok and lam < -1e-5


@pytest.mark.parametrize("spec", [normal(0, 0.2), uniform(0, 1), tri(0), beta(4, 4), dirac(-0.4)], ids=str)
def test_distribution_sequences_psd_bivariate(spec):
    y = MomentSequence.from_distributions(("a", "b"), [spec, uniform(-1, 1)], 10)
    for d in range(1, 6):
        assert psd_check(moment_matrix(y, d).evaluate())[0]


def test_affine_transform_exact():
    y = MomentSequence.from_distributions(("x",), [normal(1.5, 0.3)], 6)
    z = affine_transform(y, [1.5], [0.3])
    assert np.allclose([z[(j,)] for j in range(7)], dmoments(normal(0, 1), 6), atol=1e-9)


def test_marginal_and_truncate():
    y = MomentSequence.from_distributions(("a", "b"), [uniform(0, 1), tri(0)], 4)
    m = y.marginal(("b",))
    assert m.vars == ("b",) and m[(2,)] == pytest.approx(1 / 6)
    t = y.truncate(2)
    assert t.order == 2 and len(t.entries) == 6


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=2),
       st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3))
def test_mixture_of_diracs_gives_psd(points, weights):
    # convex combinations of Dirac sequences are valid measures
    w = np.array(weights[: len(points)])
    w = w / w.sum()
    seqs = [MomentSequence.dirac(("x",), [p], 6).as_array() for p in points]
    y = MomentSequence.from_array(("x",), 6, sum(wi * s for wi, s in zip(w, seqs)))
    assert psd_check(moment_matrix(y, 3).evaluate(), 1e-9)[0]
