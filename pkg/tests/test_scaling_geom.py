import numpy as np
import pytest

from scaling_geom import (
    Scaling, TestFunction, aniso_norm, bump_function, metric_distance, pairwise_distances,
    rescale_mollifier, rescale_test, tent_function,
)


@pytest.mark.parametrize("exponents, x, expected", [
    ((1.0, 1.0), (3.0, 4.0), 7.0),
    ((2.0, 1.0), (4.0, 3.0), 5.0),
    ((1.0,), (0.0,), 0.0),
])
def test_aniso_norm_examples(exponents, x, expected):
    assert aniso_norm(x, Scaling(exponents)) == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize("exponents", [(1.0,), (2.0, 1.0), (0.5, 1.0, 1.5)])
def test_aniso_norm_homogeneous_under_dilation(exponents):
    s = Scaling(exponents)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(200, s.d))
    for lam in (0.01, 0.5, 3.0, 250.0):
        np.testing.assert_allclose(aniso_norm(s.dilate(x, lam), s), lam * aniso_norm(x, s), rtol=1e-12)


@pytest.mark.parametrize("exponents", [(1.0,), (2.0, 1.0), (0.5, 1.0), (0.25, 2.0)])
def test_quasi_triangle_on_random_triples(exponents):
    s = Scaling(exponents)
    c = s.quasi_triangle_constant
    assert c == pytest.approx(max(1.0, 2.0 ** (max(1 / e for e in exponents) - 1)))
    rng = np.random.default_rng(11)
    x, y, z = (rng.normal(scale=3.0, size=(2000, s.d)) for _ in range(3))
    lhs = metric_distance(x, z, s)
    rhs = c * (metric_distance(x, y, s) + metric_distance(y, z, s))
    assert np.all(lhs <= rhs * (1 + 1e-12))


def test_invalid_scaling():
    with pytest.raises(ValueError):
        Scaling((1.0, 0.0))
    with pytest.raises(ValueError):
        Scaling((-1.0,))


def test_rescale_identity(s1, bump1):
    same = rescale_test(bump1, 0.0, 1.0)
    y = np.linspace(-1.2, 1.2, 101).reshape(-1, 1)
    np.testing.assert_allclose(same(y), bump1(y))


@pytest.mark.parametrize("lam", [1.0, 0.5, 0.1, 2.0 ** -6])
def test_rescale_preserves_integral(bump1, lam):
    moved = rescale_test(bump1, 0.3, lam)
    assert moved.integrate() == pytest.approx(bump1.integrate(), rel=1e-6)


def test_rescale_support_and_height(s1, bump1):
    half = rescale_test(bump1, 0.0, 0.5)
    lower, upper = half.box()
    assert lower[0] == pytest.approx(-0.5)
    assert upper[0] == pytest.approx(0.5)
    assert half(np.zeros((1, 1)))[0] == pytest.approx(2.0 * bump1(np.zeros((1, 1)))[0])
    assert half(np.array([[0.5001]]))[0] == 0.0


def test_rescale_rejects_non_positive_lambda(bump1):
    with pytest.raises(ValueError):
        rescale_test(bump1, 0.0, 0.0)


def test_tent_mollifier_scaling(s1):
    tent = tent_function(s1)
    rho = rescale_mollifier(tent, 0.25)
    lower, upper = rho.box()
    assert (lower[0], upper[0]) == pytest.approx((-0.25, 0.25))
    assert rho(np.zeros((1, 1)))[0] == pytest.approx(4.0)


@pytest.mark.parametrize("eps", [1.0, 0.5, 0.125])
def test_mollifier_mass_one(bump1, eps):
    assert rescale_mollifier(bump1, eps).integrate() == pytest.approx(1.0, abs=1e-6)


def test_unnormalized_mollifier_rejected(s1):
    heavy = TestFunction(lambda u: 2.0 * np.prod(np.clip(1.0 - np.abs(u), 0.0, None), axis=-1),
                         1.0, s1, name='double-tent')
    with pytest.raises(ValueError, match="no normalizado"):
        rescale_mollifier(heavy, 0.5)


def test_bump_two_dimensional_mass():
    s = Scaling.euclidean(2)
    assert bump_function(s).integrate() == pytest.approx(1.0, abs=1e-6)


def test_pairwise_distances_symmetric():
    s = Scaling((2.0, 1.0))
    pts = np.array([[0.0, 0.0], [4.0, 3.0], [1.0, -1.0]])
    D = pairwise_distances(pts, s)
    np.testing.assert_allclose(D, D.T)
    assert D[0, 1] == pytest.approx(5.0)
    assert np.all(np.diag(D) == 0.0)
