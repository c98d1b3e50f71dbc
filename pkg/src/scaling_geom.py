"""
Escalamiento anisótropo, métrica asociada y funciones test reescaladas.

La métrica inducida por el escalamiento s = (s_1, ..., s_d) es
|x|_s = sum_j |x_j|^{1/s_j}; las dilataciones actúan coordenada a coordenada
como x_j -> lam^{s_j} x_j, de modo que |dil(x)|_s = lam |x|_s.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from config import QUADRATURE_PARAMS

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Scaling:
    exponents: Tuple[float, ...]
    total: float = field(init=False)

    def __post_init__(self):
        exps = tuple(float(s) for s in np.atleast_1d(self.exponents))
        if len(exps) < 1:
            raise ValueError("El escalamiento necesita al menos una dimensión")
        if any((not np.isfinite(s)) or s <= 0 for s in exps):
            raise ValueError(f"Exponentes de escalamiento no positivos: {exps}")
        object.__setattr__(self, 'exponents', exps)
        object.__setattr__(self, 'total', float(sum(exps)))

    @classmethod
    def euclidean(cls, d: int = 1) -> "Scaling":
        return cls(tuple([1.0] * d))

    @property
    def d(self) -> int:
        return len(self.exponents)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.exponents, dtype=float)

    @property
    def is_euclidean(self) -> bool:
        return all(s == 1.0 for s in self.exponents)

    @property
    def quasi_triangle_constant(self) -> float:
        """Constante c_s de |x-z| <= c_s (|x-y| + |y-z|)."""
        return max(1.0, 2.0 ** (max(1.0 / s for s in self.exponents) - 1.0))

    def dilate(self, x, lam: float) -> np.ndarray:
        return np.asarray(x, dtype=float) * lam ** self.array

    def axis_point(self, r: float) -> np.ndarray:
        """Punto sobre el primer eje a distancia métrica r del origen."""
        p = np.zeros(self.d)
        p[0] = float(r) ** self.exponents[0]
        return p


def _as_points(x, d: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1] != d:
        raise ValueError(f"Dimensión del punto {arr.shape[-1]} distinta de d={d}")
    return arr


def aniso_norm(x, s: Scaling):
    """sum_j |x_j|^{1/s_j}; admite arreglos de forma (..., d)."""
    arr = _as_points(x, s.d)
    return np.sum(np.abs(arr) ** (1.0 / s.array), axis=-1)


def default_resolution(d: int) -> int:
    table = QUADRATURE_PARAMS['midpoint_resolution']
    return table.get(d, min(table.values()))


def midpoint_nodes(lower: np.ndarray, upper: np.ndarray,
                   resolution: Optional[int] = None) -> Tuple[np.ndarray, float]:
    """Nodos de la regla del punto medio tensorial y volumen de celda."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    d = lower.size
    n = resolution or default_resolution(d)
    widths = (upper - lower) / n
    axes = [lower[j] + (np.arange(n) + 0.5) * widths[j] for j in range(d)]
    mesh = np.meshgrid(*axes, indexing='ij')
    points = np.stack(mesh, axis=-1)
    return points, float(np.prod(widths))


@dataclass(frozen=True)
class TestFunction:
    """Función test de soporte compacto: cierre más metadatos.

    El soporte está contenido en la caja center_j +- R^{s_j}, es decir en la
    bola métrica max_j |u_j|^{1/s_j} <= R, que escala exactamente con lam.
    """
    __test__ = False

    evaluator: Callable[[np.ndarray], np.ndarray]
    support_radius: float
    scaling: Scaling
    center: Tuple[float, ...] = ()
    smoothness: str = 'smooth'
    name: str = 'custom'

    def __post_init__(self):
        if not self.support_radius > 0:
            raise ValueError("El radio de soporte debe ser positivo")
        c = tuple(float(v) for v in np.atleast_1d(self.center)) if len(self.center) else (0.0,) * self.scaling.d
        if len(c) != self.scaling.d:
            raise ValueError("Centro con dimensión incorrecta")
        object.__setattr__(self, 'center', c)

    def __call__(self, y) -> np.ndarray:
        pts = _as_points(y, self.scaling.d)
        return np.asarray(self.evaluator(pts), dtype=float)

    def box(self) -> Tuple[np.ndarray, np.ndarray]:
        half = self.support_radius ** self.scaling.array
        c = np.asarray(self.center)
        return c - half, c + half

    def integrate(self, resolution: Optional[int] = None,
                  weight: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> float:
        lower, upper = self.box()
        points, vol = midpoint_nodes(lower, upper, resolution)
        values = self(points)
        if weight is not None:
            values = values * weight(points)
        return float(np.sum(values) * vol)


def _bump_profile(u: np.ndarray) -> np.ndarray:
    r2 = np.sum(u ** 2, axis=-1)
    out = np.zeros(r2.shape)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@lru_cache(maxsize=None)
def _bump_mass(d: int, resolution: int) -> float:
    points, vol = midpoint_nodes(-np.ones(d), np.ones(d), resolution)
    return float(np.sum(_bump_profile(points)) * vol)


def bump_function(scaling: Scaling, resolution: Optional[int] = None) -> TestFunction:
    """Bump normalizado c·exp(-1/(1-|x|^2)) sobre |x| < 1."""
    n = resolution or default_resolution(scaling.d)
    c = 1.0 / _bump_mass(scaling.d, n)
    return TestFunction(
        evaluator=lambda u: c * _bump_profile(u),
        support_radius=1.0,
        scaling=scaling,
        smoothness='smooth',
        name='bump',
    )


def tent_function(scaling: Scaling) -> TestFunction:
    """Producto de triángulos max(0, 1-|x_j|), masa uno."""
    return TestFunction(
        evaluator=lambda u: np.prod(np.clip(1.0 - np.abs(u), 0.0, None), axis=-1),
        support_radius=1.0,
        scaling=scaling,
        smoothness='lipschitz',
        name='tent',
    )


def rescale_test(phi: TestFunction, x, lam: float,
                 s: Optional[Scaling] = None) -> TestFunction:
    """phi_x^lam(y) = lam^{-|s|} phi((y - x) / lam^s)."""
    s = s or phi.scaling
    if s.d != phi.scaling.d:
        raise ValueError("El escalamiento no coincide con la dimensión de la función test")
    if not lam > 0:
        raise ValueError(f"lambda debe ser positivo, se recibió {lam}")
    x = _as_points(x, s.d).reshape(s.d)
    factors = lam ** s.array
    norm = lam ** (-s.total)
    base = phi.evaluator

    def evaluator(y: np.ndarray) -> np.ndarray:
        return norm * base((y - x) / factors)

    center = x + factors * np.asarray(phi.center)
    return TestFunction(
        evaluator=evaluator,
        support_radius=phi.support_radius * lam,
        scaling=s,
        center=tuple(center),
        smoothness=phi.smoothness,
        name=phi.name,
    )


def rescale_mollifier(rho: TestFunction, eps: float,
                      s: Optional[Scaling] = None,
                      resolution: Optional[int] = None) -> TestFunction:
    """rho_eps; exige masa unitaria dentro de la tolerancia de cuadratura."""
    if not eps > 0:
        raise ValueError(f"epsilon debe ser positivo, se recibió {eps}")
    mass = rho.integrate(resolution)
    tol = QUADRATURE_PARAMS['normalization_tol']
    if abs(mass - 1.0) > tol:
        raise ValueError(f"Mollificador no normalizado: integral = {mass:.8f}")
    s = s or rho.scaling
    return rescale_test(rho, np.zeros(s.d), eps, s)


def metric_distance(x, y, s: Scaling):
    return aniso_norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), s)


def as_point_array(points: Sequence, d: int) -> np.ndarray:
    """Normaliza una lista de puntos a un arreglo (K, d)."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim <= 1 and d == 1:
        return arr.reshape(-1, 1)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != d:
        raise ValueError(f"Puntos con forma {arr.shape} incompatibles con d={d}")
    return arr


def pairwise_distances(points: Sequence, s: Scaling) -> np.ndarray:
    pts = as_point_array(points, s.d)
    diff = pts[:, None, :] - pts[None, :, :]
    return aniso_norm(diff, s)
