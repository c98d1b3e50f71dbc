"""
Modelos de covarianza con la cota sándwich
    Lambda^{-1} eps^a/(r+eps)^a <= C(r) <= Lambda eps^a/(r+eps)^a,
covarianzas mollificadas por cuadratura y matrices de Gram validadas.
"""
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import integrate, special
from scipy.signal import fftconvolve

from config import COVARIANCE_PARAMS, QUADRATURE_PARAMS
from scaling_geom import (
    Scaling, TestFunction, aniso_norm, as_point_array, midpoint_nodes,
    pairwise_distances,
)

logger = logging.getLogger(__name__)

KINDS = ('fractional-kernel', 'mollified-of-G', 'explicit-gram', 'stationary-kernel')


# ==================== NÚCLEOS FRACCIONARIOS ====================

def riesz_constant(a: float, d: int) -> float:
    """gamma_d(a) del potencial de Riesz: I_a tiene núcleo |x|^{a-d}/gamma_d(a)."""
    return float(np.pi ** (d / 2) * 2.0 ** a * special.gamma(a / 2) / special.gamma((d - a) / 2))


@lru_cache(maxsize=None)
def _convolution_square_1d(p: float) -> float:
    """int |1+y|^{-p} |y|^{-p} dy sobre R, con 1/2 < p < 1."""
    mid, _ = integrate.quad(lambda y: 1.0, -1.0, 0.0, weight='alg', wvar=(-p, -p))
    near, _ = integrate.quad(lambda y: (1.0 + y) ** (-p), 0.0, 1.0, weight='alg', wvar=(-p, 0.0))
    far, _ = integrate.quad(lambda y: y ** (-p) * (1.0 + y) ** (-p), 1.0, np.inf)
    return mid + 2.0 * (near + far)


class FractionalKernel:
    """G(x) = c |x|^{-alpha} (1 + e^{-|x|_s} si es atemperado).

    En d = 1 se usa |x|_s; en d >= 2 (sólo escalamiento euclídeo) la norma
    euclídea, para la que G es radial.
    """

    def __init__(self, alpha: float, scaling: Scaling, constant: float, tempered: bool = False):
        self.alpha = float(alpha)
        self.scaling = scaling
        self.constant = float(constant)
        self.tempered = tempered

    def radius(self, z: np.ndarray) -> np.ndarray:
        if self.scaling.d == 1:
            return aniso_norm(z, self.scaling)
        return np.linalg.norm(z, axis=-1)

    def _tail(self, z: np.ndarray) -> np.ndarray:
        if not self.tempered:
            return 1.0
        return 1.0 + np.exp(-aniso_norm(z, self.scaling))

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        r = self.radius(z)
        with np.errstate(divide='ignore'):
            out = self.constant * r ** (-self.alpha)
        return out * self._tail(z)

    def cell_integral(self, centers: np.ndarray, widths: np.ndarray) -> np.ndarray:
        """Integral de G sobre las cajas centers +- widths/2."""
        if self.scaling.d == 1:
            a = self.alpha / self.scaling.exponents[0]
            lo = centers[..., 0] - widths[0] / 2
            hi = centers[..., 0] + widths[0] / 2

            def antiderivative(x):
                return np.sign(x) * np.abs(x) ** (1.0 - a) / (1.0 - a)

            return self.constant * (antiderivative(hi) - antiderivative(lo)) * self._tail(centers)
        k = QUADRATURE_PARAMS['cell_subsamples']
        offsets, _ = midpoint_nodes(-widths / 2, widths / 2, k)
        offsets = offsets.reshape(-1, self.scaling.d)
        values = self(centers[..., None, :] + offsets)
        return values.mean(axis=-1) * float(np.prod(widths))


def _fractional_constant(alpha: float, s: Scaling) -> float:
    beta = (s.total - alpha) / 2
    if s.d == 1:
        s1 = s.exponents[0]
        a = beta / s1
        p = 1.0 - a
        return _convolution_square_1d(p) / riesz_constant(a, 1) ** 2
    # I_beta I_beta = I_{2 beta}
    return 1.0 / riesz_constant(2 * beta, s.d)


def _check_alpha(alpha: float, s: Scaling):
    if not 0 < alpha < s.total:
        raise ValueError(f"alpha={alpha} fuera del rango (0, |s|={s.total})")
    if s.d >= 2 and not s.is_euclidean:
        raise ValueError("En d >= 2 sólo se admite el escalamiento euclídeo")


# ==================== MODELOS ====================

@dataclass
class CovarianceModel:
    kind: str
    alpha: float
    scaling: Scaling
    eps: float = 1.0
    Lambda: Optional[float] = None
    kernel: Optional[Callable[[np.ndarray], np.ndarray]] = None
    limit: Optional[Callable[[np.ndarray], np.ndarray]] = None
    gram: Optional[np.ndarray] = None
    mollifier_name: str = 'none'
    resolution: Optional[int] = None
    name: str = ''

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"Tipo de modelo desconocido: {self.kind}")
        if not 0 < self.alpha < self.scaling.total:
            raise ValueError(f"alpha={self.alpha} fuera del rango (0, |s|)")
        if not 0 < self.eps <= 1:
            raise ValueError(f"eps={self.eps} fuera de (0, 1]")
        if self.Lambda is not None and not self.Lambda > 1:
            raise ValueError(f"Lambda={self.Lambda} debe ser > 1")
        if self.kind == 'explicit-gram':
            if self.gram is None:
                raise ValueError("Un modelo explicit-gram necesita la matriz")
            self.gram = np.asarray(self.gram, dtype=float)
        elif self.kernel is None:
            raise ValueError(f"El modelo {self.kind} necesita un núcleo")

    @property
    def stationary(self) -> bool:
        return self.kind != 'explicit-gram'

    def __call__(self, z) -> np.ndarray:
        if not self.stationary:
            raise ValueError("Un modelo explicit-gram no es estacionario")
        return self.kernel(np.asarray(z, dtype=float))

    def covariance(self, x, y) -> float:
        return float(self(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))

    def radial(self, r) -> np.ndarray:
        """Covarianza a separación métrica r sobre el primer eje."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        z = np.zeros(r.shape + (self.scaling.d,))
        z[..., 0] = r ** self.scaling.exponents[0]
        return self(z)

    @property
    def variance(self) -> float:
        return float(self(np.zeros(self.scaling.d)))

    def middle(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return self.eps ** self.alpha / (r + self.eps) ** self.alpha

    def with_lambda(self, Lambda: float) -> "CovarianceModel":
        return replace(self, Lambda=Lambda)

    def to_stanza(self) -> str:
        lines = [
            "[covariance]",
            f"kind = {self.kind}",
            f"alpha = {self.alpha!r}",
            f"eps = {self.eps!r}",
            f"Lambda = {self.Lambda!r}" if self.Lambda is not None else "Lambda = none",
            f"mollifier = {self.mollifier_name}",
            f"resolution = {self.resolution if self.resolution is not None else 'none'}",
            "scaling = " + ", ".join(repr(s) for s in self.scaling.exponents),
        ]
        return "\n".join(lines) + "\n"


def fractional_covariance(alpha: float, s: Scaling) -> CovarianceModel:
    """Campo gaussiano fraccionario: G = K * K con K homogéneo de orden -|s| + beta."""
    _check_alpha(alpha, s)
    constant = _fractional_constant(alpha, s)
    G = FractionalKernel(alpha, s, constant)
    logger.info(f"Núcleo fraccionario construido: alpha={alpha}, c_G={constant:.6f}")
    return CovarianceModel(kind='fractional-kernel', alpha=alpha, scaling=s,
                           kernel=G, limit=G, name='fractional')


def tempered_fractional_covariance(alpha: float, s: Scaling) -> CovarianceModel:
    """G = c|x|^{-alpha}(1 + e^{-|x|_s}); límite g = 2c|x|^{-alpha}."""
    _check_alpha(alpha, s)
    constant = _fractional_constant(alpha, s)
    G = FractionalKernel(alpha, s, constant, tempered=True)
    g = FractionalKernel(alpha, s, 2.0 * constant)
    return CovarianceModel(kind='fractional-kernel', alpha=alpha, scaling=s,
                           kernel=G, limit=g, name='tempered-fractional')


def stationary_model(kernel: Callable[[np.ndarray], np.ndarray], alpha: float,
                     eps: float, s: Scaling, Lambda: Optional[float] = None,
                     name: str = 'custom') -> CovarianceModel:
    return CovarianceModel(kind='stationary-kernel', alpha=alpha, scaling=s, eps=eps,
                           Lambda=Lambda, kernel=kernel, name=name)


class MiddleFunction:
    """eps^a/(|z|_s + eps)^a, la función central del sándwich."""

    def __init__(self, alpha: float, eps: float, scaling: Scaling, factor: float = 1.0):
        self.alpha, self.eps, self.scaling, self.factor = alpha, eps, scaling, factor

    def __call__(self, z):
        r = aniso_norm(z, self.scaling)
        return self.factor * self.eps ** self.alpha / (r + self.eps) ** self.alpha


class WhiteNoiseKernel:
    """Covarianza diagonal en la red: sigma2 en el origen, cero fuera."""

    def __init__(self, sigma2: float = 1.0):
        self.sigma2 = sigma2

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(np.all(z == 0.0, axis=-1), self.sigma2, 0.0)


# ==================== MOLLIFICACIÓN ====================

def _reference_step(d: int) -> float:
    step = COVARIANCE_PARAMS['reference_step']
    return step if d == 1 else 1.0 / 8


def autocorrelation_table(rho: TestFunction, normalize: bool = True):
    """Tabla (desfases, densidad, celda) de P = rho * rho~ en la red de referencia.

    Con normalize=True rho se lleva a masa uno antes de correlar; los pesos
    nulos se descartan.
    """
    s = rho.scaling
    lower, upper = rho.box()
    n = max(8, int(round(float(np.max(upper - lower)) / _reference_step(s.d))))
    points, vol = midpoint_nodes(lower, upper, n)
    samples = rho(points)
    if normalize:
        samples = samples / (samples.sum() * vol)
    P = fftconvolve(samples, samples[tuple(slice(None, None, -1) for _ in range(s.d))]) * vol
    h = (upper - lower) / n
    idx = np.stack(np.meshgrid(*[np.arange(2 * n - 1) - (n - 1)] * s.d, indexing='ij'), axis=-1)
    lags = idx.reshape(-1, s.d) * h
    weights = P.reshape(-1)
    keep = np.abs(weights) > 1e-16 * np.abs(weights).max()
    return lags[keep], weights[keep], h


class MollifiedKernel:
    """C_eps(z) = eps^alpha int G(z + eps^s t) P(t) dt con P = rho * rho~.

    P se tabula por correlación discreta de rho y cada celda de G se integra
    exactamente (d = 1) o por submuestreo (d >= 2).
    """

    def __init__(self, G: FractionalKernel, rho: TestFunction, eps: float, alpha: float):
        s = rho.scaling
        self.G = G
        self.eps = float(eps)
        self.alpha = float(alpha)
        self.scaling = s
        self.ref_lags, self.ref_weights, self.cell = autocorrelation_table(rho)
        self.factors = eps ** s.array

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        shape = z.shape[:-1]
        flat = z.reshape(-1, self.scaling.d)
        out = np.empty(flat.shape[0])
        scaled_lags = self.ref_lags * self.factors
        widths = self.cell * self.factors
        prefactor = self.eps ** (self.alpha - self.scaling.total)
        chunk = max(1, 2_000_000 // max(1, len(scaled_lags)))
        for start in range(0, flat.shape[0], chunk):
            block = flat[start:start + chunk]
            centers = block[:, None, :] + scaled_lags[None, :, :]
            out[start:start + chunk] = prefactor * (self.G.cell_integral(centers, widths) @ self.ref_weights)
        return out.reshape(shape)


def mollified_covariance(model: CovarianceModel, rho: TestFunction, eps: float) -> CovarianceModel:
    """Covarianza de Phi_eps = eps^{alpha/2} rho_eps * Psi con su Lambda ajustado."""
    if model.kind != 'fractional-kernel' or not hasattr(model.kernel, 'cell_integral'):
        raise ValueError("Sólo se mollifican núcleos fraccionarios con integral de celda")
    if not 0 < eps < 1:
        raise ValueError(f"eps={eps} fuera de (0, 1)")
    kernel = MollifiedKernel(model.kernel, rho, eps, model.alpha)
    variance = float(kernel(np.zeros(model.scaling.d)))
    if not np.isfinite(variance) or variance <= 0:
        raise RuntimeError(f"Cuadratura no resuelta: varianza {variance} en el origen")
    provisional = CovarianceModel(
        kind='mollified-of-G', alpha=model.alpha, scaling=model.scaling, eps=eps,
        kernel=kernel, limit=model.limit, mollifier_name=rho.name,
        resolution=len(kernel.ref_weights), name=model.name,
    )
    report = sandwich_check(provisional, default_probes())
    if not np.isfinite(report.lambda_fit):
        raise RuntimeError(f"Cuadratura no resuelta: {report.diagnostic}")
    Lambda = max(report.lambda_fit, 1.0 + 1e-12)
    logger.info(f"Covarianza mollificada eps={eps:.6g}: varianza={variance:.6f}, Lambda={Lambda:.4f}")
    return provisional.with_lambda(Lambda)


# ==================== COTA SÁNDWICH ====================

def default_probes() -> np.ndarray:
    count = COVARIANCE_PARAMS['probe_count']
    positive = np.logspace(np.log10(COVARIANCE_PARAMS['probe_min_positive']),
                           np.log10(COVARIANCE_PARAMS['probe_max']), count - 1)
    return np.concatenate([[0.0], positive])


@dataclass
class SandwichReport:
    lambda_fit: float
    passed: bool
    worst_probe: Optional[float]
    diagnostic: str = ''
    ratios: np.ndarray = field(default_factory=lambda: np.empty(0))


def sandwich_ratios(values: np.ndarray, middle: np.ndarray) -> np.ndarray:
    return np.maximum(values / middle, middle / values)


def sandwich_check(model: CovarianceModel, probes: Optional[Sequence[float]] = None,
                   Lambda: Optional[float] = None) -> SandwichReport:
    probes = default_probes() if probes is None else np.asarray(probes, dtype=float)
    if probes.size == 0:
        raise ValueError("La lista de separaciones de prueba está vacía")
    values = np.asarray(model.radial(probes), dtype=float)
    bad = ~np.isfinite(values) | (values <= 0)
    if np.any(bad):
        r = float(probes[np.argmax(bad)])
        return SandwichReport(np.inf, False, r, f"covarianza no positiva o no finita en r={r:g}")
    ratios = sandwich_ratios(values, model.middle(probes))
    worst = int(np.argmax(ratios))
    lambda_fit = float(ratios[worst])
    threshold = Lambda if Lambda is not None else model.Lambda
    passed = True if threshold is None else lambda_fit <= threshold * (1 + 1e-12)
    diagnostic = '' if passed else f"Lambda_fit={lambda_fit:.6g} supera Lambda={threshold:.6g}"
    return SandwichReport(lambda_fit, passed, float(probes[worst]), diagnostic, ratios)


def limit_kernel_error(model: CovarianceModel, eps: float, window: float = 1.0,
                       resolution: Optional[int] = None) -> float:
    """Error L^1 relativo de eps^alpha G(eps^s x) frente a g en [-window, window]^d."""
    if model.limit is None:
        raise ValueError("El modelo no declara núcleo límite g")
    s = model.scaling
    points, _ = midpoint_nodes(-window * np.ones(s.d), window * np.ones(s.d), resolution)
    rescaled = eps ** model.alpha * model.kernel(points * eps ** s.array)
    g = model.limit(points)
    return float(np.sum(np.abs(rescaled - g)) / np.sum(np.abs(g)))


# ==================== VECTORES GAUSSIANOS ====================

@dataclass
class GaussianVector:
    points: np.ndarray
    cov: np.ndarray
    variances: np.ndarray = field(init=False)

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=float)
        if self.cov.ndim != 2 or self.cov.shape[0] != self.cov.shape[1]:
            raise ValueError("La covarianza debe ser una matriz cuadrada")
        self.points = np.asarray(self.points, dtype=float)
        if len(self.points) != self.cov.shape[0]:
            raise ValueError("Número de puntos distinto del tamaño de la covarianza")
        self.variances = np.diag(self.cov).copy()

    @property
    def K(self) -> int:
        return self.cov.shape[0]

    @classmethod
    def from_matrix(cls, cov, points=None) -> "GaussianVector":
        cov = np.asarray(cov, dtype=float)
        if points is None:
            points = np.arange(cov.shape[0], dtype=float).reshape(-1, 1)
        cov = validate_psd(cov)
        return cls(points, cov)

    def subvector(self, indices: Sequence[int]) -> "GaussianVector":
        idx = list(indices)
        return GaussianVector(self.points[idx], self.cov[np.ix_(idx, idx)])

    def with_signs(self, signs: Sequence[float]) -> "GaussianVector":
        """Vector (sigma_j X_j): covarianza D C D con D = diag(signs)."""
        D = np.asarray(signs, dtype=float)
        return GaussianVector(self.points, self.cov * np.outer(D, D))


def validate_psd(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    asym = float(np.max(np.abs(cov - cov.T))) if cov.size else 0.0
    scale = max(float(np.max(np.abs(cov))) if cov.size else 0.0, 1e-300)
    if asym > 1e-9 * scale:
        raise ValueError(f"Matriz no simétrica (asimetría {asym:.3e})")
    cov = (cov + cov.T) / 2
    eigenvalues = np.linalg.eigvalsh(cov)
    trace = max(float(np.trace(cov)), 1e-300)
    lowest = float(eigenvalues.min())
    if lowest < -COVARIANCE_PARAMS['psd_tol'] * trace:
        raise np.linalg.LinAlgError(
            f"Matriz de Gram no semidefinida positiva: autovalor {lowest:.6e} (traza {trace:.6e})")
    return cov


def gram_matrix(model: CovarianceModel, points) -> GaussianVector:
    """Matriz de Gram C(x_i - x_j) validada como semidefinida positiva."""
    if model.kind == 'explicit-gram':
        cov = validate_psd(model.gram)
        if points is None:
            points = np.arange(cov.shape[0], dtype=float).reshape(-1, 1)
        pts = as_point_array(points, model.scaling.d)
        if len(pts) != cov.shape[0]:
            raise ValueError("Número de puntos distinto del tamaño de la matriz explícita")
        return GaussianVector(pts, cov)
    if model.kind == 'fractional-kernel':
        raise ValueError("El núcleo fraccionario es singular en el origen; mollificar antes")
    pts = as_point_array(points, model.scaling.d)
    diff = pts[:, None, :] - pts[None, :, :]
    cov = np.asarray(model(diff), dtype=float)
    cov = validate_psd((cov + cov.T) / 2)
    return GaussianVector(pts, cov)


def pairwise_lambda(gaussian: GaussianVector, alpha: float, eps: float, s: Scaling) -> float:
    """Lambda_fit restringido a las separaciones realizadas por los puntos."""
    dist = pairwise_distances(gaussian.points, s)
    middle = eps ** alpha / (dist + eps) ** alpha
    if np.any(gaussian.cov <= 0):
        return np.inf
    return float(np.max(sandwich_ratios(gaussian.cov, middle)))


def probe_grid_bounds(model: CovarianceModel, probes: Optional[Sequence[float]] = None) -> List[float]:
    """(c, C) con c r^{-alpha} <= G(r) <= C r^{-alpha} sobre la malla positiva."""
    probes = default_probes()[1:] if probes is None else np.asarray(probes, dtype=float)
    values = model.radial(probes) * probes ** model.alpha
    return [float(values.min()), float(values.max())]
