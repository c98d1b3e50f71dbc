"""
Simulación en red de campos gaussianos estacionarios: embebido circulante con
duplicación automática del dominio, respaldo denso, mollificación discreta,
potencias de Wick y emparejamiento con funciones test reescaladas.
"""
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.signal import fftconvolve

from config import FIELD_PARAMS
from covariance import CovarianceModel
from gaussian_algebra import hermite
from scaling_geom import TestFunction, midpoint_nodes, rescale_mollifier, rescale_test

logger = logging.getLogger(__name__)


# ==================== REJILLA ====================

@dataclass(frozen=True)
class GridSpec:
    origin: Tuple[float, ...]
    spacing: Tuple[float, ...]
    shape: Tuple[int, ...]

    def __post_init__(self):
        origin = tuple(float(v) for v in np.atleast_1d(self.origin))
        spacing = tuple(float(v) for v in np.atleast_1d(self.spacing))
        shape = tuple(int(v) for v in np.atleast_1d(self.shape))
        if not (len(origin) == len(spacing) == len(shape)):
            raise ValueError("origin, spacing y shape deben tener la misma dimensión")
        if any(h <= 0 for h in spacing):
            raise ValueError(f"Espaciado no positivo: {spacing}")
        if any(n < 1 for n in shape):
            raise ValueError(f"Forma de rejilla inválida: {shape}")
        object.__setattr__(self, 'origin', origin)
        object.__setattr__(self, 'spacing', spacing)
        object.__setattr__(self, 'shape', shape)

    @classmethod
    def uniform(cls, n: int, spacing: float, d: int = 1, origin: float = 0.0) -> "GridSpec":
        return cls((origin,) * d, (spacing,) * d, (n,) * d)

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self):
        return [self.origin[j] + self.spacing[j] * np.arange(self.shape[j]) for j in range(self.d)]

    def points(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes(), indexing='ij'), axis=-1)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        h = np.asarray(self.spacing)
        lower = np.asarray(self.origin) - h / 2
        upper = np.asarray(self.origin) + (np.asarray(self.shape) - 0.5) * h
        return lower, upper


@dataclass
class LatticeField:
    grid: GridSpec
    values: np.ndarray
    model: Optional[CovarianceModel] = None
    seed: Optional[int] = None
    filter: Optional[np.ndarray] = None
    scale: float = 1.0
    label: str = 'psi'

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"Valores con forma {self.values.shape} para rejilla {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("El campo contiene valores no finitos")

    @property
    def variance(self) -> float:
        """Varianza exacta del campo a partir del modelo y del filtro acumulado."""
        if self.model is None:
            raise ValueError(f"El campo '{self.label}' no es gaussiano con modelo conocido")
        d = self.grid.d
        if self.filter is None:
            return self.scale ** 2 * self.model.variance
        f = self.filter
        auto = fftconvolve(f, f[tuple(slice(None, None, -1) for _ in range(d))])
        idx = np.stack(np.meshgrid(*[np.arange(n) - (n - 1) // 2 for n in auto.shape], indexing='ij'), axis=-1)
        lags = idx * np.asarray(self.grid.spacing)
        keep = np.abs(auto) > 1e-16 * np.abs(auto).max()
        return float(self.scale ** 2 * np.sum(auto[keep] * self.model(lags[keep])))

    def with_values(self, values: np.ndarray, **changes) -> "LatticeField":
        return replace(self, values=values, **changes)


# ==================== MUESTREO ====================

def _signed_lags(M: Sequence[int], spacing: Sequence[float]) -> np.ndarray:
    axes = []
    for n, h in zip(M, spacing):
        k = np.arange(n)
        axes.append(np.where(k <= n // 2, k, k - n) * h)
    return np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1)


class FieldSampler:
    """Factorización preparada una vez; cada semilla da una muestra exacta en ley.

    ``method=None`` intenta el embebido circulante y cae al denso si no es PSD;
    'circulant' o 'dense' fuerzan una de las dos vías.
    """

    def __init__(self, model: CovarianceModel, grid: GridSpec, method: Optional[str] = None):
        if not model.stationary:
            raise ValueError("El muestreador necesita un modelo estacionario")
        if model.scaling.d != grid.d:
            raise ValueError("La dimensión del modelo no coincide con la rejilla")
        if method not in (None, 'circulant', 'dense'):
            raise ValueError(f"Método de muestreo desconocido: {method}")
        self.model = model
        self.grid = grid
        self.method = None
        self.min_eigenvalue = None
        if method == 'dense' or not self._prepare_circulant():
            if method == 'circulant':
                raise np.linalg.LinAlgError(
                    f"Embebido circulante no PSD (autovalor {self.min_eigenvalue:.3e})")
            self._prepare_dense()

    def _prepare_circulant(self) -> bool:
        tol = FIELD_PARAMS['embedding_tol']
        M = tuple(2 * n for n in self.grid.shape)
        for _ in range(FIELD_PARAMS['max_doublings'] + 1):
            c = np.asarray(self.model(_signed_lags(M, self.grid.spacing)), dtype=float)
            lam = np.fft.fftn(c).real
            trace = float(lam.sum())
            lowest = float(lam.min())
            self.min_eigenvalue = lowest
            if lowest >= -tol * trace:
                self.method = 'circulant'
                self.embedding = M
                self.sqrt_lam = np.sqrt(np.clip(lam, 0.0, None) / np.prod(M))
                logger.info(f"Embebido circulante aceptado: M={M}, autovalor mínimo {lowest:.3e}")
                return True
            logger.info(f"Embebido no PSD (autovalor {lowest:.3e}); duplicando dominio")
            M = tuple(2 * n for n in M)
        return False

    def _prepare_dense(self):
        tol = FIELD_PARAMS['embedding_tol']
        if self.grid.n_sites > FIELD_PARAMS['dense_fallback_sites']:
            raise np.linalg.LinAlgError(
                f"{self.grid.n_sites} sitios superan el respaldo denso "
                f"({FIELD_PARAMS['dense_fallback_sites']}) y el embebido circulante no es PSD")
        shape = self.grid.shape
        lag_axes = [np.arange(-(n - 1), n) * h for n, h in zip(shape, self.grid.spacing)]
        table = np.asarray(self.model(np.stack(np.meshgrid(*lag_axes, indexing='ij'), axis=-1)), dtype=float)
        idx = np.stack(np.meshgrid(*[np.arange(n) for n in shape], indexing='ij'), axis=-1).reshape(-1, self.grid.d)
        diff = idx[:, None, :] - idx[None, :, :] + (np.asarray(shape) - 1)
        cov = table[tuple(diff[..., j] for j in range(self.grid.d))]
        vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
        self.method = 'dense'
        self.min_eigenvalue = float(vals.min())
        if self.min_eigenvalue < -tol * float(vals.sum()):
            raise np.linalg.LinAlgError(f"Covarianza densa no PSD: autovalor {self.min_eigenvalue:.3e}")
        self.factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
        logger.info(f"Respaldo denso con {self.grid.n_sites} sitios")

    def sample(self, seed: int) -> LatticeField:
        rng = np.random.default_rng(seed)
        if self.method == 'circulant':
            Z = rng.standard_normal((2,) + self.embedding)
            Y = np.fft.fftn(self.sqrt_lam * (Z[0] + 1j * Z[1]))
            values = Y.real[tuple(slice(0, n) for n in self.grid.shape)]
        else:
            values = (self.factor @ rng.standard_normal(self.factor.shape[1])).reshape(self.grid.shape)
        return LatticeField(self.grid, np.ascontiguousarray(values), self.model, seed)


def sample_field(model: CovarianceModel, grid: GridSpec, seed: int) -> LatticeField:
    return FieldSampler(model, grid).sample(seed)


# ==================== TRANSFORMACIONES ====================

def mollifier_weights(rho: TestFunction, eps: float, spacing: Sequence[float]) -> np.ndarray:
    """Pesos discretos de rho_eps en la red, normalizados a masa uno."""
    s = rho.scaling
    h = np.asarray(spacing, dtype=float)
    half = rho.support_radius ** s.array * eps ** s.array
    if np.any(half < 2 * h):
        raise ValueError(f"Mollificador no resuelto: eps={eps} frente a espaciado {tuple(h)}")
    rho_eps = rescale_mollifier(rho, eps, s)
    n = np.floor(half / h).astype(int)
    axes = [np.arange(-n[j], n[j] + 1) * h[j] for j in range(s.d)]
    pts = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1)
    w = rho_eps(pts)
    return w / w.sum()


def mollify_field(fld: LatticeField, rho: TestFunction, eps: float) -> LatticeField:
    """Convolución discreta con rho_eps (bordes reflejados)."""
    w = mollifier_weights(rho, eps, fld.grid.spacing)
    pad = [((n - 1) // 2, (n - 1) // 2) for n in w.shape]
    padded = np.pad(fld.values, pad, mode='reflect')
    values = fftconvolve(padded, w, mode='valid')
    cumulative = w if fld.filter is None else fftconvolve(fld.filter, w)
    return fld.with_values(values, filter=cumulative, label=f"{fld.label}*rho_{eps:g}")


def wick_power_field(fld: LatticeField, m: int, sigma2: Optional[float] = None) -> LatticeField:
    """He_m(valor; sigma2) punto a punto, con sigma2 tomado del modelo."""
    if m < 0:
        raise ValueError(f"Orden de Wick negativo: {m}")
    sigma2 = fld.variance if sigma2 is None else sigma2
    values = hermite(m, fld.values, sigma2)
    return LatticeField(fld.grid, values, None, fld.seed, None, 1.0, f"{fld.label}^<>{m}")


def scale_field(fld: LatticeField, factor: float) -> LatticeField:
    return fld.with_values(fld.values * factor, scale=fld.scale * factor)


def riemann_weights(grid: GridSpec, phi: TestFunction, x, lam: float):
    """(cortes, nodos, pesos) de la suma de Riemann contra phi_x^lam."""
    test = rescale_test(phi, x, lam)
    lower, upper = test.box()
    g_lower, g_upper = grid.bounds()
    if np.any(lower < g_lower - 1e-12) or np.any(upper > g_upper + 1e-12):
        raise ValueError("El soporte de la función test excede la rejilla")
    axes, slices = [], []
    for j, ax in enumerate(grid.axes()):
        lo = int(np.searchsorted(ax, lower[j], side='left'))
        hi = int(np.searchsorted(ax, upper[j], side='right'))
        axes.append(ax[lo:hi])
        slices.append(slice(lo, hi))
    pts = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1)
    return tuple(slices), pts, test(pts) * grid.cell_volume


def pair_with_test(fld: LatticeField, phi: TestFunction, x, lam: float) -> float:
    """Suma de Riemann de campo * phi_x^lam sobre la red."""
    slices, _, weights = riemann_weights(fld.grid, phi, x, lam)
    return float(np.sum(fld.values[slices] * weights))


def covariance_pairing_integral(model: CovarianceModel, phi: TestFunction, lam: float,
                             resolution: Optional[int] = None) -> float:
    """int int C(x-y) phi^lam(x) phi^lam(y) dx dy (d = 1)."""
    test = rescale_test(phi, np.zeros(model.scaling.d), lam)
    lower, upper = test.box()
    pts, vol = midpoint_nodes(lower, upper, resolution)
    pts = pts.reshape(-1, model.scaling.d)
    weights = test(pts) * vol
    C = np.asarray(model(pts[:, None, :] - pts[None, :, :]), dtype=float)
    return float(weights @ C @ weights)


# ==================== EXPORTACIÓN ====================

def field_to_binary(fld: LatticeField, path) -> Path:
    """Cabecera (magia, d, forma, espaciado, origen, semilla) y cuerpo '<f8'."""
    path = Path(path)
    d = fld.grid.d
    header = FIELD_PARAMS['binary_magic']
    header += np.asarray([d], dtype='<u4').tobytes()
    header += np.asarray(fld.grid.shape, dtype='<u8').tobytes()
    header += np.asarray(fld.grid.spacing, dtype='<f8').tobytes()
    header += np.asarray(fld.grid.origin, dtype='<f8').tobytes()
    header += np.asarray([-1 if fld.seed is None else fld.seed], dtype='<i8').tobytes()
    path.write_bytes(header + np.asarray(fld.values, dtype='<f8').tobytes())
    return path


def field_from_binary(path) -> LatticeField:
    raw = Path(path).read_bytes()
    magic = FIELD_PARAMS['binary_magic']
    if not raw.startswith(magic):
        raise ValueError(f"{path}: cabecera binaria desconocida")
    pos = len(magic)
    d = int(np.frombuffer(raw, dtype='<u4', count=1, offset=pos)[0])
    pos += 4
    shape = tuple(int(v) for v in np.frombuffer(raw, dtype='<u8', count=d, offset=pos))
    pos += 8 * d
    spacing = tuple(np.frombuffer(raw, dtype='<f8', count=d, offset=pos))
    pos += 8 * d
    origin = tuple(np.frombuffer(raw, dtype='<f8', count=d, offset=pos))
    pos += 8 * d
    seed = int(np.frombuffer(raw, dtype='<i8', count=1, offset=pos)[0])
    pos += 8
    values = np.frombuffer(raw, dtype='<f8', offset=pos).reshape(shape).copy()
    return LatticeField(GridSpec(origin, spacing, shape), values, None, None if seed < 0 else seed)


def field_to_csv(fld: LatticeField, path) -> Path:
    if fld.grid.n_sites > FIELD_PARAMS['csv_max_sites']:
        raise ValueError(f"Rejilla de {fld.grid.n_sites} sitios demasiado grande para CSV")
    pts = fld.grid.points().reshape(-1, fld.grid.d)
    df = pd.DataFrame(pts, columns=[f"x{j}" for j in range(fld.grid.d)])
    df['value'] = fld.values.reshape(-1)
    df.to_csv(path, index=False, float_format='%.12e')
    return Path(path)
