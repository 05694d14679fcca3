import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.polynomial import chebyshev as npcheb
from numpy.polynomial.hermite_e import hermegauss

from wrvi import autodiff as ad
from wrvi.basis import (
    ChebyshevField,
    chebyshev_vandermonde,
    clenshaw,
    lstsq_coefficients,
    project_to_fem,
    pushforward_gaussian,
    sigma_points,
    unscented_marginals,
    unscented_moments,
)

coef = st.floats(-5, 5, allow_nan=False)


def test_vandermonde_examples():
    v = chebyshev_vandermonde(2, [-1.0, 0.0, 1.0])
    np.testing.assert_array_equal(v, [[1, -1, 1], [1, 0, -1], [1, 1, 1]])
    np.testing.assert_allclose(chebyshev_vandermonde(2, [0.5]), [[1, 0.5, -0.5]], atol=1e-15)
    mesh = np.linspace(-1, 1, 61)
    v9 = chebyshev_vandermonde(9, mesh)
    assert np.all(np.isfinite(v9)) and np.max(np.abs(v9)) <= 1.0 + 1e-14
    np.testing.assert_array_equal(v9[:, 0], 1.0)


def test_vandermonde_matches_numpy_on_physical_domain():
    x = np.linspace(2.0, 5.0, 13)
    ref = npcheb.chebvander((2 * x - 7.0) / 3.0, 6)
    np.testing.assert_allclose(chebyshev_vandermonde(6, x, (2.0, 5.0)), ref, atol=1e-13)


def test_points_outside_domain_rejected():
    with pytest.raises(ValueError):
        chebyshev_vandermonde(3, [1.1])
    chebyshev_vandermonde(3, [1.0 + 5e-13])


def test_project_examples():
    nodes = np.linspace(-1, 1, 7)
    np.testing.assert_allclose(ad.value(project_to_fem(ChebyshevField(np.array([2.5, 0, 0])), nodes)), 2.5)
    np.testing.assert_allclose(ad.value(project_to_fem(ChebyshevField(np.array([0.0, 1.0])), nodes)), nodes, atol=1e-15)
    val = ad.value(project_to_fem(ChebyshevField(np.array([1.0, 2.0, 3.0])), np.array([0.3])))
    assert val[0] == pytest.approx(npcheb.chebval(0.3, [1, 2, 3]), abs=1e-14)
    assert val[0] == pytest.approx(-0.86, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(c=arrays(np.float64, st.integers(1, 33), elements=coef))
def test_clenshaw_agrees_with_vandermonde(c):
    x = np.linspace(-1, 1, 17)
    direct = chebyshev_vandermonde(c.size - 1, x) @ c
    np.testing.assert_allclose(clenshaw(c, x), direct, atol=1e-12 * max(1.0, np.abs(c).sum()))
    np.testing.assert_allclose(clenshaw(c, x), npcheb.chebval(x, c), atol=1e-12 * max(1.0, np.abs(c).sum()))


@settings(max_examples=100, deadline=None)
@given(c=arrays(np.float64, 5, elements=st.floats(-30, 30, allow_nan=False)))
def test_softplus_projection_positive(c):
    vals = ad.value(project_to_fem(ChebyshevField(c, transform="softplus"), np.linspace(-1, 1, 21)))
    assert np.all(vals > 0)


def test_field_rejects_bad_transform_and_domain():
    with pytest.raises(ValueError):
        ChebyshevField(np.ones(2), transform="softmax")
    with pytest.raises(ValueError):
        ChebyshevField(np.ones(2), domain=(1.0, 1.0))


def test_lstsq_recovers_coefficients():
    nodes = np.linspace(0.0, 2.0, 31)
    c = np.array([0.3, -1.0, 0.25, 0.7])
    vals = chebyshev_vandermonde(3, nodes, (0.0, 2.0)) @ c
    np.testing.assert_allclose(lstsq_coefficients(vals, nodes, 3, (0.0, 2.0))[0], c, atol=1e-12)


def test_pushforward_examples():
    v = chebyshev_vandermonde(2, np.linspace(-1, 1, 5))
    mean = np.array([0.2, -0.4, 1.0])
    m, c = pushforward_gaussian(mean, np.zeros(3), v)
    np.testing.assert_allclose(m, v @ mean)
    np.testing.assert_array_equal(c, 0.0)
    m, c = pushforward_gaussian(mean, np.array([1.0, 2.0, 3.0]), np.eye(3))
    np.testing.assert_array_equal(m, mean)
    np.testing.assert_array_equal(c, np.diag([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        pushforward_gaussian(mean, np.ones(3), np.ones((4, 2)))


def test_pushforward_matches_monte_carlo():
    rng = np.random.default_rng(0)
    v = chebyshev_vandermonde(2, np.linspace(-1, 1, 4))
    mean = np.array([0.5, -1.0, 0.3])
    var = np.array([0.4, 0.1, 0.9])
    n = 1_000_000
    samples = (mean + np.sqrt(var) * rng.standard_normal((n, 3))) @ v.T
    emp = np.cov(samples, rowvar=False)
    _, cov = pushforward_gaussian(mean, var, v)
    se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov ** 2) / n)
    assert np.all(np.abs(emp - cov) <= 3 * se + 1e-12)


@settings(max_examples=50, deadline=None)
@given(delta=arrays(np.float64, 3, elements=coef))
def test_pushforward_affine_shift(delta):
    v = chebyshev_vandermonde(2, np.linspace(-1, 1, 6))
    mean, var = np.array([0.1, 0.2, 0.3]), np.array([1.0, 0.5, 0.25])
    m0, c0 = pushforward_gaussian(mean, var, v)
    m1, c1 = pushforward_gaussian(mean + delta, var, v)
    np.testing.assert_allclose(m1 - m0, v @ delta, atol=1e-12)
    np.testing.assert_array_equal(c1, c0)


def test_unscented_identity_and_affine_exact():
    mean, var = np.array([0.3, -1.0, 2.0]), np.array([0.5, 1.5, 0.1])
    m, v = unscented_moments(mean, var, "identity")
    np.testing.assert_allclose(m, mean, atol=1e-14)
    np.testing.assert_allclose(v, var, atol=1e-14)
    m, v = unscented_moments(np.array([0.7]), np.array([2.0]), lambda x: -3.0 * x + 1.0)
    np.testing.assert_allclose(m, [-3.0 * 0.7 + 1.0], atol=1e-14)
    np.testing.assert_allclose(v, [18.0], atol=1e-13)


@settings(max_examples=100, deadline=None)
@given(mean=arrays(np.float64, 4, elements=coef), var=arrays(np.float64, 4, elements=st.floats(0, 4)),
       a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_unscented_exact_for_affine(mean, var, a, b):
    m, v = unscented_moments(mean, var, lambda x: a * x + b)
    np.testing.assert_allclose(m, a * mean + b, atol=1e-12)
    np.testing.assert_allclose(v, a * a * var, atol=1e-11)
    m1, v1 = unscented_marginals(mean, var, lambda x: a * x + b)
    np.testing.assert_allclose(m1, a * mean + b, atol=1e-12)
    np.testing.assert_allclose(v1, a * a * var, atol=1e-11)


def test_unscented_softplus_against_gauss_hermite():
    t, w = hermegauss(64)
    w = w / w.sum()
    exact_mean = np.sum(w * np.logaddexp(0.0, t))
    m, _ = unscented_moments(np.array([0.0]), np.array([1.0]), "softplus")
    assert abs(m[0] - exact_mean) / exact_mean < 5e-2
    m1, _ = unscented_marginals(np.array([0.0]), np.array([1.0]), "softplus")
    np.testing.assert_allclose(m1, m, rtol=1e-14)


def test_sigma_point_weights_sum_to_one():
    pts, w = sigma_points(np.zeros(3), np.ones(3))
    assert pts.shape == (7, 3)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)


def test_negative_variance_rejected():
    with pytest.raises(ValueError):
        unscented_moments(np.zeros(2), np.array([1.0, -1.0]), "identity")
    with pytest.raises(ValueError):
        unscented_marginals(np.zeros(2), np.array([1.0, -1.0]), "identity")
