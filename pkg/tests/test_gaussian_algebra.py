import itertools

import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss, hermeval

from bound_lab import mc_cross_check
from conftest import random_psd
from covariance import GaussianVector
from gaussian_algebra import (
    ChaosQuery, MultiIndex, ThetaExpr, chaos_coefficient, cluster_coefficient,
    cluster_expansion, exp_wick_expectation, fit_coefficient_constant, hermite, hermite_coefficients,
    isserlis_moment, rhs_moment, subtracted_product, wick_moment, wick_shift,
)


@pytest.fixture(scope='module')
def pair_cov():
    return np.array([[1.0, 0.3], [0.3, 0.8]])


def wick_by_expansion(C, n):
    """E prod He_{n_j}(X_j; C_jj) expandiendo a monomios y usando Isserlis."""
    coefs = [hermite_coefficients(k, C[j, j]) for j, k in enumerate(n)]
    total = 0.0
    for powers in itertools.product(*[range(k + 1) for k in n]):
        weight = np.prod([coefs[j][p] for j, p in enumerate(powers)])
        if weight != 0:
            total += weight * isserlis_moment(C, powers)
    return total


# ==================== MOMENTOS ====================

def test_wick_small_cases():
    rng = np.random.default_rng(1)
    C = random_psd(rng, 4)
    assert wick_moment(C[:2, :2], (1, 1)) == pytest.approx(C[0, 1])
    assert wick_moment(C[:2, :2], (2, 2)) == pytest.approx(2 * C[0, 1] ** 2)
    assert wick_moment(C[:3, :3], (2, 2, 2)) == pytest.approx(8 * C[0, 1] * C[0, 2] * C[1, 2])
    expected = C[0, 1] * C[2, 3] + C[0, 2] * C[1, 3] + C[0, 3] * C[1, 2]
    assert wick_moment(C, (1, 1, 1, 1)) == pytest.approx(expected)


def test_wick_odd_and_empty():
    C = np.eye(3)
    assert wick_moment(C, (1, 1, 1)) == 0.0
    assert wick_moment(C, (0, 0, 0)) == 1.0


def test_wick_self_pairs_excluded():
    C = np.array([[1.0, 0.4], [0.4, 1.0]])
    assert wick_moment(C, (2, 0)) == 0.0
    assert wick_moment(C, (1, 1), blocks=[0, 0]) == 0.0


@pytest.mark.parametrize("n", [(2, 2, 0), (3, 1, 2), (2, 2, 2), (4, 2, 2), (1, 2, 3), (3, 3, 2)])
def test_wick_matches_isserlis_expansion(n):
    rng = np.random.default_rng(sum(n))
    C = random_psd(rng, 3)
    assert wick_moment(C, n) == pytest.approx(wick_by_expansion(C, n), rel=1e-9, abs=1e-12)


def test_wick_matches_isserlis_on_random_fixtures():
    rng = np.random.default_rng(20250)
    for _ in range(500):
        K = int(rng.integers(2, 5))
        C = random_psd(rng, K)
        n = tuple(int(v) for v in rng.multinomial(int(rng.integers(0, 9)), np.ones(K) / K))
        assert wick_moment(C, n) == pytest.approx(wick_by_expansion(C, n), rel=1e-10, abs=1e-10), (C, n)


def test_isserlis_examples():
    assert isserlis_moment([[2.0]], (4,)) == pytest.approx(3 * 2.0 ** 2)
    C = np.array([[1.5, 0.2], [0.2, 0.7]])
    assert isserlis_moment(C, (2, 2)) == pytest.approx(1.5 * 0.7 + 2 * 0.2 ** 2)
    assert isserlis_moment(C, (1, 2)) == 0.0


def test_leg_cap_enforced():
    with pytest.raises(ValueError, match="tope"):
        wick_moment(np.eye(2), (9, 9))
    with pytest.raises(ValueError):
        MultiIndex((1, -1))


# ==================== HERMITE ====================

@pytest.mark.parametrize("sigma2", [1.0, 0.37, 2.5])
def test_hermite_orthogonality(sigma2):
    t, w = hermegauss(40)
    w = w / np.sqrt(2 * np.pi)
    x = np.sqrt(sigma2) * t
    for j in range(6):
        for k in range(6):
            value = np.sum(w * hermite(j, x, sigma2) * hermite(k, x, sigma2))
            expected = float(np.prod(range(1, j + 1))) * sigma2 ** j if j == k else 0.0
            assert value == pytest.approx(expected, rel=1e-8, abs=1e-10)


def test_hermite_rejects_negative_order():
    with pytest.raises(ValueError):
        hermite(-1, 0.5)


def test_wick_shift_is_appell_identity():
    sigma2, mu = 0.6, 0.45
    x = np.linspace(-2.0, 2.0, 9)
    for n in range(6):
        unit = np.zeros(n + 1, dtype=complex)
        unit[n] = 1.0
        shifted = wick_shift(unit, mu)
        value = sum(c.real * hermite(b, x, sigma2) for b, c in enumerate(shifted))
        np.testing.assert_allclose(value, hermite(n, x + mu, sigma2), rtol=1e-12, atol=1e-12)


# ==================== THETA EXPR ====================

def test_theta_expr_derivative_matches_finite_differences():
    expr = ThetaExpr({0.7: [1.0, 2.0, 0.5], 0.0: [0.0, 1j], 1.3: [0.0, 0.0, 0.0, -0.25]})
    h = 1e-4
    for theta in (-1.1, 0.0, 0.9, 2.4):
        fd1 = (expr(theta + h) - expr(theta - h)) / (2 * h)
        fd2 = (expr(theta + h) - 2 * expr(theta) + expr(theta - h)) / h ** 2
        assert abs(expr.derivative(1)(theta) - fd1) < 1e-5
        assert abs(expr.derivative(2)(theta) - fd2) < 1e-4


def test_theta_expr_algebra():
    a = ThetaExpr({0.5: [1.0, 1.0]})
    b = ThetaExpr.monomial(2, 3.0, rate=0.2)
    for theta in (0.0, 0.8, -1.7):
        assert (a * b)(theta) == pytest.approx(a(theta) * b(theta))
        assert (a - b)(theta) == pytest.approx(a(theta) - b(theta))
    with pytest.raises(ValueError):
        ThetaExpr({-1.0: [1.0]})


# ==================== COEFICIENTES DE CAOS ====================

def test_chaos_coefficient_second_order():
    theta, sigma2 = 1.3, 0.8
    value = chaos_coefficient(theta, sigma2, 2, 0, 0)
    assert value == pytest.approx(-theta ** 2 / 2 * np.exp(-theta ** 2 * sigma2 / 2))
    assert chaos_coefficient(theta, sigma2, 1, 0, 2) == 0


@pytest.mark.parametrize("r", [0, 1, 2])
def test_singleton_cluster_coefficient_is_chaos_coefficient(pair_cov, r):
    gaussian = GaussianVector.from_matrix(pair_cov)
    for n in range(5):
        a = cluster_coefficient(gaussian, [1], (n,), 1.3, 2, r)
        b = chaos_coefficient(1.3, pair_cov[1, 1], n, r, 2)
        assert a == pytest.approx(b, abs=1e-12)


def test_fitted_coefficient_constant_bounds_every_coefficient(pair_cov):
    gaussian = GaussianVector.from_matrix(pair_cov)
    thetas = [0.0, 0.8, 2.0]
    C = fit_coefficient_constant(gaussian, [0, 1], 1, 0, thetas, 4)
    assert C > 0
    for theta in thetas:
        for j in (0, 1):
            for n in range(1, 5):
                value = abs(cluster_coefficient(gaussian, [j], (n,), theta, 1, 0))
                bound = (C * np.sqrt(1 + theta ** 2)) ** n / np.prod(range(1, n + 1))
                assert value <= bound * (1 + 1e-12)


def test_cluster_coefficient_shape_mismatch(pair_cov):
    with pytest.raises(ValueError):
        cluster_coefficient(GaussianVector.from_matrix(pair_cov), [0, 1], (1,), 1.0, 1, 0)


# ==================== ESPERANZAS MIXTAS ====================

def test_exp_wick_linear_factor(pair_cov):
    theta = 0.9
    value = exp_wick_expectation(pair_cov, [0], (0, 1), theta)
    expected = 1j * theta * pair_cov[0, 1] * np.exp(-theta ** 2 * pair_cov[0, 0] / 2)
    assert value == pytest.approx(expected)


def test_exp_wick_power_prefactor(pair_cov):
    theta = 0.9
    value = exp_wick_expectation(pair_cov, [0], (0, 0), theta, powers=(1, 0))
    assert value == pytest.approx(-theta * pair_cov[0, 0] * np.exp(-theta ** 2 * pair_cov[0, 0] / 2))


def test_exp_wick_characteristic_function(pair_cov):
    theta = 1.4
    value = exp_wick_expectation(pair_cov, [0, 1], (), theta)
    assert value == pytest.approx(np.exp(-theta ** 2 * pair_cov.sum() / 2))
    with pytest.raises(ValueError):
        exp_wick_expectation(pair_cov, [2], (), theta)


@pytest.mark.parametrize("theta", [0.0, 0.5, 1.7, 4.0])
def test_subtracted_product_first_chaos(pair_cov, theta):
    gaussian = GaussianVector.from_matrix(pair_cov)
    s1, s2, c = pair_cov[0, 0], pair_cov[1, 1], pair_cov[0, 1]
    expected = np.exp(-theta ** 2 * (s1 + s2) / 2) * (np.exp(-theta ** 2 * c) - 1)
    assert subtracted_product(ChaosQuery(gaussian, 1, 0, theta)) == pytest.approx(expected, abs=1e-13)
    plain = np.exp(-theta ** 2 * (s1 + s2 + 2 * c) / 2)
    assert subtracted_product(ChaosQuery(gaussian, 0, 0, theta)) == pytest.approx(plain, abs=1e-13)


def test_subtracted_product_single_point():
    gaussian = GaussianVector.from_matrix([[0.7]])
    for m in (1, 2, 3):
        assert abs(subtracted_product(ChaosQuery(gaussian, m, 1, 1.2))) < 1e-12
    theta, s = 1.2, 0.7
    second = (theta ** 2 * s ** 2 - s) * np.exp(-theta ** 2 * s / 2)
    assert subtracted_product(ChaosQuery(gaussian, 0, 2, theta)) == pytest.approx(second)


def test_subtracted_product_even_in_theta():
    rng = np.random.default_rng(4)
    gaussian = GaussianVector.from_matrix(random_psd(rng, 3))
    for theta in (0.3, 1.1, 2.6):
        for r in (0, 1):
            a = abs(subtracted_product(ChaosQuery(gaussian, 2, r, theta)))
            b = abs(subtracted_product(ChaosQuery(gaussian, 2, r, -theta)))
            assert a == pytest.approx(b, rel=1e-10, abs=1e-15)


def test_cluster_expansion_with_singleton_blocks():
    gaussian = GaussianVector.from_matrix([[1.0, 0.1], [0.1, 1.0]])
    exact = subtracted_product(ChaosQuery(gaussian, 1, 0, 1.0))
    approx = cluster_expansion(gaussian, [0, 1], 1, 0, 1.0, 12)
    assert abs(approx - exact) < 1e-9


def test_chaos_query_caps():
    with pytest.raises(ValueError, match="puntos"):
        ChaosQuery(GaussianVector.from_matrix(np.eye(9)), 1, 0, 1.0)
    with pytest.raises(ValueError, match="patas"):
        ChaosQuery(GaussianVector.from_matrix(np.eye(4)), 5, 0, 1.0)
    with pytest.raises(ValueError):
        ChaosQuery(GaussianVector.from_matrix(np.eye(2)), -1, 0, 1.0)


def test_rhs_moment_examples(pair_cov):
    c = pair_cov[0, 1]
    assert rhs_moment(pair_cov, 1) == pytest.approx(c + 2 * c ** 2)
    assert rhs_moment(pair_cov, 0) == pytest.approx(1 + c)
    assert rhs_moment([[0.9]], 2) == 0.0
    with pytest.raises(ValueError):
        rhs_moment(pair_cov, -1)


def test_rhs_moment_six_points_degree_three():
    # X_j = a_j Z: el momento de Wick es prod a_j^{n_j} por E prod He_{n_j}(Z)
    a = np.array([1.0, 0.8, 1.1, 0.9, 1.2, 0.7])
    x, w = hermegauss(20)
    w = w / np.sqrt(2 * np.pi)
    expected = 0.0
    for extra in itertools.product((0, 1), repeat=6):
        n = [3 + e for e in extra]
        values = np.prod([a[j] ** k * hermeval(x, [0] * k + [1]) for j, k in enumerate(n)], axis=0)
        expected += float(w @ values)
    assert rhs_moment(np.outer(a, a), 3) == pytest.approx(expected, rel=1e-9)


def test_rhs_moment_rejects_leg_overflow_up_front():
    with pytest.raises(ValueError, match="K=6 y m=4 necesita 30 patas"):
        rhs_moment(np.eye(6), 4)
    with pytest.raises(ValueError, match="tope configurado es 16"):
        rhs_moment(np.eye(6), 3, leg_cap=16)
    assert wick_moment(np.eye(2), (9, 9), leg_cap=18) == 0.0


# ==================== MONTE CARLO ====================

@pytest.mark.parametrize("theta, m, r", [(1.0, 1, 0), (0.7, 2, 1)])
def test_exact_value_matches_monte_carlo(pair_cov, theta, m, r):
    gaussian = GaussianVector.from_matrix(pair_cov)
    exact = subtracted_product(ChaosQuery(gaussian, m, r, theta))
    estimate = mc_cross_check(gaussian, theta, m, r, samples=200_000, seed=2024)
    assert estimate.agrees(exact, k=5.0)


def test_monte_carlo_trivial_case(pair_cov):
    estimate = mc_cross_check(GaussianVector.from_matrix(pair_cov), 0.0, 0, 0, samples=1000, seed=1)
    assert estimate.value == pytest.approx(1.0)
    assert estimate.stderr == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError, match="semilla"):
        mc_cross_check(GaussianVector.from_matrix(pair_cov), 1.0, 1, 0, samples=10, seed=None)
