import numpy as np
import pandas as pd
import pytest
from scipy import stats

from covariance import CovarianceModel, WhiteNoiseKernel, stationary_model
from field_sim import (
    FieldSampler, GridSpec, LatticeField, covariance_pairing_integral, field_from_binary,
    field_to_binary, field_to_csv, mollifier_weights, mollify_field, pair_with_test,
    riemann_weights, sample_field, scale_field, wick_power_field,
)

H = 1.0 / 64
CORRELATION_LENGTH = 0.2


def exponential_kernel(z):
    return np.exp(-np.abs(z[..., 0]) / CORRELATION_LENGTH)


@pytest.fixture(scope='module')
def grid():
    return GridSpec.uniform(128, H)


@pytest.fixture(scope='module')
def exponential_model(s1):
    return stationary_model(exponential_kernel, 0.5, 1.0, s1, name='exponential')


@pytest.fixture(scope='module')
def white_model(s1):
    return stationary_model(WhiteNoiseKernel(), 0.5, 1.0, s1, name='white')


def stacked(sampler, seeds):
    return np.stack([sampler.sample(seed).values for seed in seeds])


# ==================== REJILLA Y CAMPO ====================

def test_grid_geometry(grid):
    assert grid.n_sites == 128
    assert grid.points().shape == (128, 1)
    lower, upper = grid.bounds()
    assert lower[0] == pytest.approx(-H / 2)
    assert upper[0] == pytest.approx(127.5 * H)
    with pytest.raises(ValueError):
        GridSpec((0.0,), (0.0,), (4,))
    with pytest.raises(ValueError):
        GridSpec((0.0, 0.0), (1.0,), (4,))


def test_lattice_field_validation(grid):
    with pytest.raises(ValueError, match="forma"):
        LatticeField(grid, np.zeros(10))
    values = np.zeros(128)
    values[3] = np.nan
    with pytest.raises(ValueError, match="no finitos"):
        LatticeField(grid, values)
    with pytest.raises(ValueError):
        _ = LatticeField(grid, np.zeros(128)).variance


# ==================== MUESTREO ====================

@pytest.mark.parametrize("method", [None, 'dense'])
def test_exponential_field_statistics(exponential_model, grid, method):
    sampler = FieldSampler(exponential_model, grid, method=method)
    assert sampler.method == (method or 'circulant')
    X = stacked(sampler, range(400))
    assert X.var() == pytest.approx(1.0, abs=0.1)
    lag1 = np.mean(X[:, :-1] * X[:, 1:])
    assert lag1 == pytest.approx(np.exp(-H / CORRELATION_LENGTH), abs=0.1)


def test_white_noise_is_gaussian_and_uncorrelated(white_model, grid):
    X = stacked(FieldSampler(white_model, grid), range(100))
    flat = X.reshape(-1)
    assert abs(stats.skew(flat)) < 0.1
    assert abs(stats.kurtosis(flat)) < 0.2
    assert abs(np.mean(X[:, :-1] * X[:, 1:])) < 0.05
    # He1 y He2 ortogonales
    assert abs(np.mean(flat * (flat ** 2 - 1.0))) < 0.15


def test_sampling_is_reproducible(exponential_model, grid):
    a = sample_field(exponential_model, grid, 17)
    b = sample_field(exponential_model, grid, 17)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.seed == 17
    assert not np.array_equal(a.values, sample_field(exponential_model, grid, 18).values)


def test_non_positive_kernel_rejected(s1, grid):
    box = stationary_model(lambda z: (np.abs(z[..., 0]) < 0.3).astype(float), 0.5, 1.0, s1)
    with pytest.raises(np.linalg.LinAlgError, match="circulante"):
        FieldSampler(box, grid, method='circulant')
    with pytest.raises(np.linalg.LinAlgError):
        FieldSampler(box, grid)


def test_sampler_argument_checks(exponential_model, s1, grid):
    with pytest.raises(ValueError, match="desconocido"):
        FieldSampler(exponential_model, grid, method='cholesky')
    with pytest.raises(ValueError):
        FieldSampler(exponential_model, GridSpec.uniform(8, H, d=2))
    explicit = CovarianceModel(kind='explicit-gram', alpha=0.5, scaling=s1, gram=np.eye(2))
    with pytest.raises(ValueError, match="estacionario"):
        FieldSampler(explicit, grid)


# ==================== TRANSFORMACIONES ====================

def test_mollifier_weights(bump1):
    w = mollifier_weights(bump1, 0.125, (H,))
    assert len(w) == 17
    assert w.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(w, w[::-1])
    with pytest.raises(ValueError, match="no resuelto"):
        mollifier_weights(bump1, H, (H,))


def test_mollify_preserves_constants_and_lines(grid, bump1):
    ones = LatticeField(grid, np.ones(128))
    np.testing.assert_allclose(mollify_field(ones, bump1, 0.125).values, 1.0, atol=1e-10)
    x = grid.points()[..., 0]
    line = mollify_field(LatticeField(grid, x), bump1, 0.125)
    np.testing.assert_allclose(line.values[8:-8], x[8:-8], atol=1e-10)


def test_mollified_variance_matches_samples(exponential_model, grid, bump1):
    sampler = FieldSampler(exponential_model, grid)
    fields = [mollify_field(sampler.sample(seed), bump1, 0.125) for seed in range(400)]
    exact = fields[0].variance
    assert exact < exponential_model.variance
    empirical = np.var(np.stack([f.values[16:-16] for f in fields]))
    assert empirical == pytest.approx(exact, rel=0.1)


def test_wick_powers(exponential_model, grid):
    fld = sample_field(exponential_model, grid, 3)
    np.testing.assert_array_equal(wick_power_field(fld, 0).values, np.ones(128))
    np.testing.assert_allclose(wick_power_field(fld, 1).values, fld.values)
    second = wick_power_field(fld, 2)
    np.testing.assert_allclose(second.values, fld.values ** 2 - 1.0)
    assert second.model is None
    with pytest.raises(ValueError):
        wick_power_field(fld, -1)


def test_scale_field_tracks_variance(exponential_model, grid):
    fld = scale_field(sample_field(exponential_model, grid, 5), 3.0)
    assert fld.variance == pytest.approx(9.0)


# ==================== EMPAREJAMIENTO ====================

def test_pairing_constant_field_integrates_test(grid, bump1):
    ones = LatticeField(grid, np.ones(128))
    assert pair_with_test(ones, bump1, 1.0, 0.25) == pytest.approx(1.0, abs=1e-2)
    with pytest.raises(ValueError, match="excede"):
        pair_with_test(ones, bump1, 0.0, 0.25)


def test_pairing_variance(exponential_model, grid, bump1):
    slices, pts, weights = riemann_weights(grid, bump1, 1.0, 0.25)
    C = exponential_kernel(pts[:, None, :] - pts[None, :, :])
    exact = float(weights @ C @ weights)
    sampler = FieldSampler(exponential_model, grid)
    pairs = np.array([pair_with_test(sampler.sample(seed), bump1, 1.0, 0.25) for seed in range(2000)])
    assert np.mean(pairs ** 2) == pytest.approx(exact, rel=0.15)


def test_pairing_integral_matches_riemann_sum(exponential_model, grid, bump1):
    _, pts, weights = riemann_weights(grid, bump1, 1.0, 0.25)
    riemann = float(weights @ exponential_kernel(pts[:, None, :] - pts[None, :, :]) @ weights)
    integral = covariance_pairing_integral(exponential_model, bump1, 0.25)
    assert integral == pytest.approx(riemann, rel=0.03)


# ==================== EXPORTACIÓN ====================

def test_binary_roundtrip(tmp_path, exponential_model, grid):
    fld = sample_field(exponential_model, grid, 42)
    path = field_to_binary(fld, tmp_path / 'campo.bin')
    again = field_from_binary(path)
    np.testing.assert_array_equal(again.values, fld.values)
    assert again.grid == fld.grid
    assert again.seed == 42


def test_binary_rejects_unknown_header(tmp_path):
    path = tmp_path / 'otro.bin'
    path.write_bytes(b'NOPE' + bytes(32))
    with pytest.raises(ValueError, match="cabecera"):
        field_from_binary(path)


def test_csv_export(tmp_path, exponential_model, grid):
    fld = sample_field(exponential_model, grid, 1)
    table = pd.read_csv(field_to_csv(fld, tmp_path / 'campo.csv'))
    assert list(table.columns) == ['x0', 'value']
    assert len(table) == 128
    np.testing.assert_allclose(table['value'], fld.values, rtol=1e-11)
