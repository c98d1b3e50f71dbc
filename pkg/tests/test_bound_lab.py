import numpy as np
import pandas as pd
import pytest

from bound_lab import (
    BoundReport, BoundSweepConfig, MCEstimate, _ratio, calibrate_L, lhs_exact, make_geometry,
    ratio_sweep, sample_gaussian, summarize, theta_grid,
)
from covariance import GaussianVector, fractional_covariance, gram_matrix, mollified_covariance
from gaussian_algebra import rhs_moment

EPS_LIST = [0.25, 2.0 ** -5]


@pytest.fixture(scope='module')
def models(s1, bump1):
    base = fractional_covariance(0.5, s1)
    return {eps: mollified_covariance(base, bump1, eps) for eps in EPS_LIST}


def tiny_config(**overrides):
    params = dict(families=['two_clusters', 'singleton_pair'], K_list=[2], m_list=[1], r_list=[0],
                  eps_list=list(EPS_LIST), theta_max=5.0, theta_step=0.5, separations=[10.0],
                  certificate_graphs=2, seed=20240)
    params.update(overrides)
    return BoundSweepConfig(**params)


# ==================== CONFIGURACIÓN ====================

def test_theta_grid_includes_endpoint():
    grid = theta_grid(5.0, 0.5)
    assert len(grid) == 11
    assert grid[0] == 0.0 and grid[-1] == pytest.approx(5.0)


def test_config_rejects_leg_overflow():
    with pytest.raises(ValueError, match="lado derecho necesita 25 patas"):
        BoundSweepConfig(K_list=[5], m_list=[4], r_list=[0])
    with pytest.raises(ValueError, match="lado izquierdo necesita 20 patas"):
        BoundSweepConfig(K_list=[4], m_list=[1], r_list=[5])


def test_config_accepts_cells_within_their_leg_need(models):
    BoundSweepConfig(K_list=[5], m_list=[2], r_list=[0, 1])
    BoundSweepConfig(K_list=[4], m_list=[3], r_list=[0])
    gaussian = gram_matrix(models[0.25], make_geometry('random_ball', 4, 0.25, 1, 0.0, np.random.default_rng(3)))
    assert np.isfinite(lhs_exact(gaussian, 1.5, 3, 0))
    assert np.isfinite(rhs_moment(gaussian, 3))


@pytest.mark.parametrize("overrides", [
    {'families': ['hexagon']},
    {'m_list': []},
    {'r_list': [-1]},
    {'theta_step': 0.0},
])
def test_config_validation(overrides):
    with pytest.raises(ValueError):
        BoundSweepConfig(**overrides)


def test_geometries():
    eps = 0.01
    pts = make_geometry('two_clusters', 3, eps, separation=10.0)
    np.testing.assert_allclose(pts[:, 0], [0.0, 0.1 * eps, 10.0 * eps])
    pts = make_geometry('singleton_pair', 3, eps, separation=100.0)
    np.testing.assert_allclose(pts[:, 0], [0.0, 0.1 * eps, 100.0 * eps])
    assert not np.any(make_geometry('coincident', 4, eps))
    ball = make_geometry('random_ball', 4, eps, rng=np.random.default_rng(0))
    assert np.all(np.abs(ball) <= 1000.0 * eps)
    with pytest.raises(ValueError):
        make_geometry('hexagon', 2, eps)


# ==================== PIEZAS DEL INFORME ====================

def test_ratio_flags_only_positive_lhs_over_zero_rhs():
    assert _ratio(0.0, 0.0) == (0.0, False)
    assert _ratio(0.5, 0.25) == (2.0, False)
    ratio, flagged = _ratio(0.5, 0.0)
    assert np.isinf(ratio) and flagged


def test_lhs_is_even_in_theta():
    gaussian = GaussianVector.from_matrix([[1.0, 0.2], [0.2, 1.0]])
    assert lhs_exact(gaussian, 1.5, 1, 1) == pytest.approx(lhs_exact(gaussian, -1.5, 1, 1))


def test_summarize_detects_growth_in_far_window():
    thetas = np.array([0.0, 1.0, 5.0, 20.0, 25.0])
    table = pd.DataFrame({'family': 'coincident', 'K': 2, 'm': 1, 'r': 0, 'eps': 0.25,
                          'theta': thetas, 'lhs': 1.0, 'rhs': 1.0,
                          'ratio': [0.1, 0.3, 0.2, 0.5, 0.4]})
    row = summarize(table).iloc[0]
    assert row['fitted_C'] == pytest.approx(0.5)
    assert row['sup_near'] == pytest.approx(0.3)
    assert not row['theta_uniform']
    assert not row['far_ok']


def test_report_offending_cell():
    table = pd.DataFrame({'ratio': [0.1]})
    summary = pd.DataFrame([{'family': 'x', 'K': 2, 'm': 1, 'r': 0, 'fitted_C': 0.1,
                             'sup_near': 0.1, 'sup_far': 0.0, 'theta_uniform': True, 'far_ok': True}])
    flag = {'fixture': 'x', 'theta': 1.0}
    report = BoundReport(table, summary, [flag], {}, 16.0, 16.0, 0)
    assert not report.passed
    assert report.offending_cell() == flag


def test_calibrate_L_is_power_of_two(models):
    L = calibrate_L(models[0.25], 1, 0, theta_grid(5.0, 0.5))
    assert L >= 1 and np.log2(L) == int(np.log2(L))


# ==================== BARRIDO ====================

def test_tiny_sweep_passes(models):
    report = ratio_sweep(tiny_config(), show_progress=False, models=models)
    assert len(report.table) == 44
    assert report.passed
    assert report.table['ratio'].max() > 0
    assert report.certificates['all_valid']
    assert set(report.summary['family']) == {'two_clusters', 'singleton_pair'}


def test_fitted_constant_does_not_move_with_theta_range(models):
    short = ratio_sweep(tiny_config(theta_max=5.0), show_progress=False, models=models)
    long = ratio_sweep(tiny_config(theta_max=10.0), show_progress=False, models=models)
    np.testing.assert_allclose(long.summary['fitted_C'], short.summary['fitted_C'], rtol=1e-12)
    assert long.theta_uniform


def test_sweep_is_deterministic_for_a_seed(models):
    config = dict(families=['random_ball'], random_geometries=2)
    a = ratio_sweep(tiny_config(**config), show_progress=False, models=models)
    b = ratio_sweep(tiny_config(**config), show_progress=False, models=models)
    pd.testing.assert_frame_equal(a.table, b.table)
    assert a.to_summary_dict()['sup_ratio'] == b.to_summary_dict()['sup_ratio']


def test_sweep_requires_sandwich_constant(models, s1):
    raw = {eps: model.with_lambda(None) for eps, model in models.items()}
    with pytest.raises(ValueError, match="sándwich"):
        ratio_sweep(tiny_config(), show_progress=False, models=raw)


# ==================== MONTE CARLO ====================

def test_sample_gaussian_covariance():
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    X = sample_gaussian(GaussianVector.from_matrix(cov), 200_000, np.random.default_rng(9))
    np.testing.assert_allclose(np.cov(X.T), cov, atol=0.03)


def test_mc_estimate_agreement_window():
    estimate = MCEstimate(1.0 + 0.0j, 0.1, 100)
    assert estimate.agrees(1.35)
    assert not estimate.agrees(1.5)
