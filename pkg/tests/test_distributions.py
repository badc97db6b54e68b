import numpy as np
import pytest
from scipy import integrate, stats

from chancetube.distributions import (
    DistributionSpec,
    UncertaintyModel,
    beta,
    dirac,
    moments,
    normal,
    parse_distribution,
    product_moment,
    sample,
    tri,
    uniform,
)
from chancetube.moments import hankel_from_univariate, psd_check

SHIPPED = [normal(0, 0.2), normal(1.5, 0.3), uniform(0, 1), uniform(-1, 2), tri(0), tri(0.4), tri(1),
           beta(4, 4), beta(2, 5), dirac(0.3)]


def test_closed_forms():
    assert np.allclose(moments(uniform(0, 1), 3), [1, 1 / 2, 1 / 3, 1 / 4], atol=1e-15)
    assert np.allclose(moments(tri(0), 2), [1, 1 / 3, 1 / 6], atol=1e-15)
    assert np.allclose(moments(beta(4, 4), 2), [1, 1 / 2, 5 / 18], atol=1e-15)
    assert np.allclose(moments(normal(0, 0.2), 4), [1, 0, 0.04, 0, 0.0048], atol=1e-15)
    assert np.allclose(moments(dirac(1.7), 5), 1.7 ** np.arange(6))


def _density(spec):
    k, p = spec.kind, spec.params
    if k == "normal":
        return stats.norm(p[0], p[1]).pdf, p[0] - 12 * p[1], p[0] + 12 * p[1]
    if k == "uniform":
        return (lambda x: 1 / (p[1] - p[0])), p[0], p[1]
    if k == "tri":
        c = p[0]
        return stats.triang(c, loc=0, scale=1).pdf, 0.0, 1.0
    return stats.beta(p[0], p[1]).pdf, 0.0, 1.0


@pytest.mark.parametrize("spec", [s for s in SHIPPED if s.kind != "dirac"], ids=str)
def test_moments_match_quadrature(spec):
    pdf, a, b = _density(spec)
    got = moments(spec, 8)
    points = [spec.params[0]] if spec.kind == "tri" else None
    for j in range(9):
        ref = integrate.quad(lambda x: x ** j * pdf(x), a, b, points=points, limit=200)[0]
        assert got[j] == pytest.approx(ref, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("a,b", [(4, 4), (2, 5), (0.5, 0.5)])
def test_beta_recurrence_high_orders(a, b):
    got = moments(beta(a, b), 20)
    for j in (5, 10, 20):
        ref = integrate.quad(lambda x: x ** j * stats.beta(a, b).pdf(x), 0, 1, limit=200)[0]
        assert got[j] == pytest.approx(ref, abs=1e-10)


@pytest.mark.parametrize("spec", SHIPPED, ids=str)
def test_hankel_psd(spec):
    for d in range(0, 7):
        ok, lam = psd_check(hankel_from_univariate(moments(spec, 2 * d), d))
        assert ok, (d, lam)


def test_sampling_means():
    rng = np.random.default_rng(11)
    assert np.all(sample(dirac(0.3), rng, 10) == 0.3)
    assert abs(sample(uniform(0, 1), rng, 10 ** 6).mean() - 0.5) < 0.002
    assert abs(sample(tri(0), rng, 10 ** 6).mean() - 1 / 3) < 0.002


@pytest.mark.parametrize("spec", SHIPPED[:-1], ids=str)
def test_empirical_moments_within_5se(spec):
    rng = np.random.default_rng(5)
    xs = sample(spec, rng, 10 ** 6)
    ref = moments(spec, 4)
    for j in range(1, 5):
        v = xs ** j
        assert abs(v.mean() - ref[j]) <= 5 * v.std() / np.sqrt(len(v))


def test_product_moment():
    assert product_moment([uniform(0, 1), uniform(0, 1)], [1, 1]) == pytest.approx(0.25)
    assert product_moment([normal(3, 1), tri(0.2)], [0, 0]) == 1.0
    assert product_moment([dirac(2), dirac(3)], [2, 1]) == pytest.approx(12)


def test_parse_and_validation():
    assert parse_distribution("normal(0, 0.2)") == normal(0, 0.2)
    assert parse_distribution(" tri(0) ") == tri(0)
    assert parse_distribution("uniform(-1,1)").mean == 0
    assert normal(0, 0.2).std == pytest.approx(0.2)
    for bad in ("normal(0)", "gamma(1,2)", "uniform(1,0)", "normal(0,-1)", "tri(2)", "beta(0,1)", "normal(0,"):
        with pytest.raises(ValueError):
            parse_distribution(bad)
    with pytest.raises(ValueError):
        DistributionSpec("beta", (1.0,))


def test_noise_overrides():
    m = UncertaintyModel({"x": normal(0, 1)}, {"w": tri(0)}, {2: {"w": dirac(0)}})
    assert m.noise_at(0)["w"] == tri(0)
    assert m.noise_at(2)["w"] == dirac(0)
    with pytest.raises(KeyError):
        m.initial_specs(["x", "y"])
