"""
Cálculo gaussiano exacto: momentos de Wick e Isserlis, polinomios de Hermite,
coeficientes de caos y esperanzas mixtas exponencial-Wick.

Toda esperanza del tipo E prod_j (e^{i theta X_j} P_j(X_j) + Q_j(X_j)) se
evalúa exactamente: se expande el producto sobre subconjuntos A, el factor
exponencial se absorbe con el desplazamiento complejo
mu_k = i theta sum_{j in A} C_kj y lo que queda es una suma finita de momentos
de Wick.
"""
import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import hermite_e
from numpy.polynomial import polynomial as poly

from config import GAUSSIAN_PARAMS
from covariance import GaussianVector

logger = logging.getLogger(__name__)


# ==================== TIPOS ====================

@dataclass(frozen=True)
class MultiIndex:
    values: Tuple[int, ...]

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        if any(v < 0 for v in vals):
            raise ValueError(f"Multi-índice con entradas negativas: {vals}")
        object.__setattr__(self, 'values', vals)

    @property
    def total(self) -> int:
        return sum(self.values)

    @property
    def factorial(self) -> int:
        out = 1
        for v in self.values:
            out *= factorial(v)
        return out

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, k):
        return self.values[k]


@dataclass(frozen=True)
class ChaosQuery:
    gaussian: GaussianVector
    m: int
    r: int
    theta: float

    def __post_init__(self):
        if self.m < 0 or self.r < 0:
            raise ValueError(f"m y r deben ser >= 0 (m={self.m}, r={self.r})")
        if self.gaussian.K > GAUSSIAN_PARAMS['point_cap']:
            raise ValueError(f"K={self.gaussian.K} excede el tope de puntos {GAUSSIAN_PARAMS['point_cap']}")
        if self.m * self.gaussian.K > GAUSSIAN_PARAMS['leg_cap']:
            raise ValueError(f"m*K={self.m * self.gaussian.K} excede el tope de patas")


def _cov_matrix(cov) -> np.ndarray:
    if isinstance(cov, GaussianVector):
        return cov.cov
    return np.asarray(cov, dtype=float)


def _as_index(n, K: int) -> Tuple[int, ...]:
    vals = tuple(MultiIndex(tuple(n)).values)
    if len(vals) != K:
        raise ValueError(f"Multi-índice de longitud {len(vals)} para K={K} puntos")
    return vals


def _check_legs(total: int, cap: Optional[int] = None):
    cap = GAUSSIAN_PARAMS['leg_cap'] if cap is None else cap
    if total > cap:
        raise ValueError(f"{total} patas exceden el tope configurado ({cap})")


# ==================== MOMENTOS ====================

def _pairing_counter(C: np.ndarray, labels: Sequence):
    """pair_sum(grados): suma de prod C_vw^E / E! sobre multigrafos E con esos grados.

    La memoria depende solo de C y de las etiquetas, así que se comparte
    entre multi-índices distintos.
    """
    K = C.shape[0]

    @lru_cache(maxsize=None)
    def pair_sum(remaining: Tuple[int, ...]) -> float:
        v = next((j for j, k in enumerate(remaining) if k), None)
        if v is None:
            return 1.0
        partners = tuple(w for w in range(v + 1, K) if remaining[w] and labels[w] != labels[v])
        return spread(v, remaining[v], partners, remaining)

    def spread(v, left, partners, rem):
        if left == 0:
            return pair_sum(rem[:v] + (0,) + rem[v + 1:])
        if not partners or left > sum(rem[w] for w in partners):
            return 0.0
        w, rest = partners[0], partners[1:]
        acc = 0.0
        for e in range(min(left, rem[w]) + 1):
            reduced = rem[:w] + (rem[w] - e,) + rem[w + 1:]
            acc += C[v, w] ** e / factorial(e) * spread(v, left - e, rest, reduced)
        return acc

    return pair_sum


def _factorial_weight(n) -> int:
    weight = 1
    for k in n:
        weight *= factorial(k)
    return weight


def wick_moment(cov, n, blocks: Optional[Sequence] = None, leg_cap: Optional[int] = None) -> float:
    """E prod_j X_j^{<>n_j}: emparejamientos sin pares dentro de un mismo bloque.

    Se enumeran multigrafos E con grados n (cada uno cuenta
    prod n_j! / prod E_ij! emparejamientos), con memoria sobre los grados
    restantes.
    """
    C = _cov_matrix(cov)
    K = C.shape[0]
    n = _as_index(n, K)
    total = sum(n)
    _check_legs(total, leg_cap)
    if total % 2:
        return 0.0
    if total == 0:
        return 1.0
    labels = list(range(K)) if blocks is None else list(blocks)
    if len(labels) != K:
        raise ValueError("Etiquetas de bloque con longitud distinta de K")
    return float(_factorial_weight(n) * _pairing_counter(C, labels)(n))


def all_pairings(items):
    """Todos los emparejamientos perfectos de la lista."""
    items = list(items)
    if len(items) == 0:
        yield []
        return
    first_item = items.pop(0)
    for i, item in enumerate(items):
        first_pair = (first_item, item)
        for pairing in all_pairings(items[:i] + items[i + 1:]):
            yield [first_pair] + pairing


def isserlis_moment(cov, n) -> float:
    """E prod_j X_j^{n_j} (potencias ordinarias) por enumeración completa."""
    C = _cov_matrix(cov)
    n = _as_index(n, C.shape[0])
    total = sum(n)
    _check_legs(total)
    if total % 2:
        return 0.0
    legs = [j for j, k in enumerate(n) for _ in range(k)]
    acc = 0.0
    for pairing in all_pairings(legs):
        term = 1.0
        for a, b in pairing:
            term *= C[a, b]
        acc += term
    return float(acc)


# ==================== HERMITE ====================

def hermite(n: int, x, sigma2: float = 1.0):
    """He_n(x; sigma2) por la recurrencia de tres términos."""
    if n < 0:
        raise ValueError(f"Orden de Hermite negativo: {n}")
    x = np.asarray(x)
    prev, cur = np.ones_like(x, dtype=np.result_type(x, float)), x * 1.0
    if n == 0:
        return prev
    for k in range(2, n + 1):
        prev, cur = cur, x * cur - (k - 1) * sigma2 * prev
    return cur


def to_wick_basis(coefs, sigma2: float) -> np.ndarray:
    """Coeficientes monomiales -> coeficientes en la base He_b(x; sigma2)."""
    coefs = np.atleast_1d(np.asarray(coefs, dtype=complex))
    if sigma2 <= 0:
        return coefs.copy()
    sigma = np.sqrt(sigma2)
    h = hermite_e.poly2herme(coefs * sigma ** np.arange(len(coefs)))
    return np.asarray(h, dtype=complex) / sigma ** np.arange(len(h))


def from_wick_basis(w, sigma2: float) -> np.ndarray:
    w = np.atleast_1d(np.asarray(w, dtype=complex))
    if sigma2 <= 0:
        return w.copy()
    sigma = np.sqrt(sigma2)
    p = hermite_e.herme2poly(w * sigma ** np.arange(len(w)))
    return np.asarray(p, dtype=complex) / sigma ** np.arange(len(p))


def hermite_coefficients(n: int, sigma2: float) -> np.ndarray:
    """Coeficientes monomiales (reales) de He_n(x; sigma2)."""
    unit = np.zeros(n + 1)
    unit[n] = 1.0
    return from_wick_basis(unit, sigma2).real


def wick_shift(w, mu: complex) -> np.ndarray:
    """He_n(x+mu) = sum_k binom(n,k) mu^k He_{n-k}(x), aplicado a una combinación."""
    w = np.asarray(w, dtype=complex)
    if mu == 0:
        return w.copy()
    out = np.zeros_like(w)
    for n, coef in enumerate(w):
        if coef == 0:
            continue
        for k in range(n + 1):
            out[n - k] += coef * comb(n, k) * mu ** k
    return out


# ==================== ThetaExpr ====================

class ThetaExpr:
    """sum_j p_j(theta) exp(-q_j theta^2 / 2) con p_j polinomios complejos."""

    def __init__(self, terms: Optional[Dict[float, Sequence[complex]]] = None):
        self.terms: Dict[float, np.ndarray] = {}
        for rate, coefs in (terms or {}).items():
            self._accumulate(rate, np.asarray(coefs, dtype=complex))

    @staticmethod
    def _rate_key(rate: float) -> float:
        rate = round(float(rate), GAUSSIAN_PARAMS['rate_decimals'])
        if rate < 0:
            raise ValueError(f"Tasa gaussiana negativa: {rate}")
        return rate + 0.0

    def _accumulate(self, rate, coefs):
        if len(coefs) - 1 > GAUSSIAN_PARAMS['theta_degree_cap']:
            raise ValueError(f"Grado {len(coefs) - 1} excede el tope de ThetaExpr")
        key = self._rate_key(rate)
        if key in self.terms:
            self.terms[key] = poly.polyadd(self.terms[key], coefs)
        else:
            self.terms[key] = np.atleast_1d(coefs).astype(complex)

    @classmethod
    def monomial(cls, degree: int, coef: complex = 1.0, rate: float = 0.0) -> "ThetaExpr":
        coefs = np.zeros(degree + 1, dtype=complex)
        coefs[degree] = coef
        return cls({rate: coefs})

    def __add__(self, other: "ThetaExpr") -> "ThetaExpr":
        out = ThetaExpr(self.terms)
        for rate, coefs in other.terms.items():
            out._accumulate(rate, coefs)
        return out

    def __neg__(self) -> "ThetaExpr":
        return self.scale(-1.0)

    def __sub__(self, other: "ThetaExpr") -> "ThetaExpr":
        return self + (-other)

    def __mul__(self, other) -> "ThetaExpr":
        if not isinstance(other, ThetaExpr):
            return self.scale(other)
        out = ThetaExpr()
        for (q1, p1), (q2, p2) in itertools.product(self.terms.items(), other.terms.items()):
            out._accumulate(q1 + q2, poly.polymul(p1, p2))
        return out

    __rmul__ = __mul__

    def scale(self, factor: complex) -> "ThetaExpr":
        return ThetaExpr({q: p * factor for q, p in self.terms.items()})

    def derivative(self, order: int = 1) -> "ThetaExpr":
        """d/dtheta [p e^{-q theta^2/2}] = (p' - q theta p) e^{-q theta^2/2}."""
        out = self
        for _ in range(order):
            nxt = ThetaExpr()
            for q, p in out.terms.items():
                dp = poly.polyder(p) if len(p) > 1 else np.zeros(1, dtype=complex)
                nxt._accumulate(q, poly.polysub(dp, q * poly.polymulx(p)))
            out = nxt
        return out

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        acc = np.zeros(theta.shape, dtype=complex)
        for q, p in self.terms.items():
            acc = acc + poly.polyval(theta, p) * np.exp(-q * theta ** 2 / 2)
        return acc if acc.ndim else complex(acc)

    def __repr__(self):
        return f"ThetaExpr({len(self.terms)} tasas)"


def _power_theta_gaussian(n: int, sigma2: float, coef: complex = 1.0) -> ThetaExpr:
    """coef * theta^n * e^{-theta^2 sigma2 / 2}."""
    return ThetaExpr.monomial(n, coef, rate=sigma2)


@lru_cache(maxsize=4096)
def _low_chaos_coefficient(k: int, n: int, r: int, sigma2: float, theta: float) -> complex:
    """d^r [(i theta)^n e^{-theta^2 sigma2/2} (i theta)^k / k!]."""
    expr = _power_theta_gaussian(n + k, sigma2, 1j ** (n + k) / factorial(k))
    return complex(expr.derivative(r)(theta))


def chaos_coefficient(theta: float, sigma2: float, n: int, r: int, m: int) -> complex:
    """(i^n/n!) d^r(theta^n e^{-theta^2 sigma2/2}) si n >= m, cero si no."""
    if n < m:
        return 0.0 + 0.0j
    return _low_chaos_coefficient(n, 0, r, float(sigma2), float(theta))


# ==================== ESPERANZAS MIXTAS ====================

def _trim(w: np.ndarray) -> np.ndarray:
    nz = np.nonzero(w)[0]
    return w[:nz[-1] + 1] if nz.size else np.zeros(1, dtype=complex)


def mixed_expectation(cov, theta: float, exp_parts: Sequence[np.ndarray],
                      plain_parts: Sequence[np.ndarray],
                      moments: Optional[Dict[Tuple[int, ...], float]] = None) -> complex:
    """E prod_j (e^{i theta X_j} P_j(X_j) + Q_j(X_j)).

    P_j y Q_j se dan en la base de Wick de X_j (He_b(x; C_jj)); `moments`
    puede reutilizarse entre llamadas con la misma covarianza.
    """
    C = _cov_matrix(cov)
    K = C.shape[0]
    if len(exp_parts) != K or len(plain_parts) != K:
        raise ValueError("Se necesita un factor por punto")
    exp_parts = [_trim(np.asarray(p, dtype=complex)) for p in exp_parts]
    plain_parts = [_trim(np.asarray(q, dtype=complex)) for q in plain_parts]
    degree = sum(max(len(p), len(q)) - 1 for p, q in zip(exp_parts, plain_parts))
    _check_legs(degree)
    if moments is None:
        moments = {}

    def moment(b):
        if b not in moments:
            moments[b] = wick_moment(C, b)
        return moments[b]

    total = 0.0 + 0.0j
    for choice in itertools.product((True, False), repeat=K):
        factors = [exp_parts[j] if choice[j] else plain_parts[j] for j in range(K)]
        if any(not np.any(f) for f in factors):
            continue
        A = [j for j in range(K) if choice[j]]
        if A:
            mu = 1j * theta * C[:, A].sum(axis=1)
            var = float(C[np.ix_(A, A)].sum())
            prefactor = np.exp(-theta ** 2 * var / 2)
        else:
            mu = np.zeros(K, dtype=complex)
            prefactor = 1.0
        shifted = [wick_shift(f, mu[j]) for j, f in enumerate(factors)]
        supports = [np.nonzero(w)[0] for w in shifted]
        acc = 0.0 + 0.0j
        for b in itertools.product(*supports):
            if sum(b) % 2:
                continue
            weight = 1.0 + 0.0j
            for j, bj in enumerate(b):
                weight *= shifted[j][bj]
            acc += weight * moment(tuple(int(v) for v in b))
        total += prefactor * acc
    return complex(total)


def _unit(n: int) -> np.ndarray:
    w = np.zeros(n + 1, dtype=complex)
    w[n] = 1.0
    return w


def exp_wick_expectation(cov, A: Iterable[int], n, theta: float,
                         powers: Optional[Sequence[int]] = None) -> complex:
    """E[prod_{j in A} (iX_j)^{a_j} e^{i theta X_j} prod_j X_j^{<>n_j}]."""
    C = _cov_matrix(cov)
    K = C.shape[0]
    n = _as_index(n, K) if len(tuple(n)) else (0,) * K
    A = set(int(a) for a in A)
    if any(a < 0 or a >= K for a in A):
        raise ValueError(f"Índices de A fuera de rango: {sorted(A)}")
    powers = tuple(powers) if powers is not None else (0,) * K
    exp_parts, plain_parts = [], []
    for j in range(K):
        if j in A:
            mono = poly.polymul(hermite_coefficients(n[j], C[j, j]), _unit(powers[j]) * 1j ** powers[j])
            exp_parts.append(to_wick_basis(mono, C[j, j]))
            plain_parts.append(np.zeros(1, dtype=complex))
        else:
            exp_parts.append(np.zeros(1, dtype=complex))
            plain_parts.append(_unit(n[j]))
    return mixed_expectation(C, theta, exp_parts, plain_parts)


def _subtracted_factor(sigma2: float, theta: float, m: int, r: int,
                       n: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Partes (P, Q) en base de Wick de d_theta^r [(i theta)^n H^_{m-n}(e^{i theta x})]."""
    mono = np.zeros(r + 1, dtype=complex)
    for a in range(r + 1):
        t = r - a
        if t > n:
            continue
        # d^t (i theta)^n = i^n n!/(n-t)! theta^{n-t}
        mono[a] += comb(r, a) * 1j ** n * factorial(n) / factorial(n - t) * theta ** (n - t) * 1j ** a
    low = max(m - n, 0)
    Q = np.zeros(max(low, 1), dtype=complex)
    for k in range(low):
        Q[k] = -_low_chaos_coefficient(k, n, r, float(sigma2), float(theta))
    return to_wick_basis(mono, sigma2), Q


def subtracted_factor_at(x, sigma2: float, theta: float, m: int, r: int) -> np.ndarray:
    """d_theta^r H^_m(e^{i theta x}) evaluado punto a punto."""
    x = np.asarray(x, dtype=float)
    out = (1j * x) ** r * np.exp(1j * theta * x)
    for n in range(m):
        out = out - chaos_coefficient(theta, sigma2, n, r, 0) * hermite(n, x, sigma2)
    return out


def subtracted_product(query: ChaosQuery,
                       moments: Optional[Dict[Tuple[int, ...], float]] = None) -> complex:
    """E prod_j d_theta^r H^_m(e^{i theta X_j}) exacto."""
    C = query.gaussian.cov
    parts = [_subtracted_factor(C[j, j], query.theta, query.m, query.r) for j in range(query.gaussian.K)]
    return mixed_expectation(C, query.theta, [p for p, _ in parts], [q for _, q in parts], moments)


def cluster_coefficient(gaussian: GaussianVector, block: Sequence[int], n, theta: float,
                        m: int, r: int) -> complex:
    """(1/n!) E prod_{j in block} d_theta^r d_x^{n_j} H^_m(e^{i theta X_j})."""
    block = list(block)
    n = tuple(int(v) for v in n)
    if len(n) != len(block):
        raise ValueError("El multi-índice no coincide con el tamaño del bloque")
    sub = gaussian.subvector(block)
    parts = [_subtracted_factor(sub.cov[k, k], theta, m, r, n[k]) for k in range(len(block))]
    value = mixed_expectation(sub.cov, theta, [p for p, _ in parts], [q for _, q in parts])
    return value / MultiIndex(n).factorial


def _block_indices(blocks: Sequence[int]) -> List[List[int]]:
    groups: Dict[int, List[int]] = {}
    for j, b in enumerate(blocks):
        groups.setdefault(b, []).append(j)
    return [groups[b] for b in sorted(groups)]


def _compositions(total_max: int, size: int):
    for combo in itertools.product(range(total_max + 1), repeat=size):
        if sum(combo) <= total_max:
            yield combo


def cluster_expansion(gaussian: GaussianVector, blocks: Sequence[int], m: int, r: int,
                      theta: float, max_order: int) -> complex:
    """sum_{|n| <= N} prod_u C_{n_u}(theta, X_u) E prod_u X_u^{<>n_u}, truncada."""
    groups = _block_indices(blocks)
    coefficient_cache: Dict[Tuple[int, Tuple[int, ...]], complex] = {}

    def coefficient(g, nu):
        key = (g, nu)
        if key not in coefficient_cache:
            coefficient_cache[key] = cluster_coefficient(gaussian, groups[g], nu, theta, m, r)
        return coefficient_cache[key]

    total = 0.0 + 0.0j
    for n in _compositions(max_order, gaussian.K):
        if sum(n) % 2:
            continue
        product = 1.0 + 0.0j
        for g, members in enumerate(groups):
            product *= coefficient(g, tuple(n[j] for j in members))
            if product == 0:
                break
        if product == 0:
            continue
        total += product * wick_moment(gaussian.cov, n, blocks)
    return complex(total)


def fit_coefficient_constant(gaussian: GaussianVector, blocks: Sequence[int], m: int, r: int,
                             thetas: Sequence[float], max_order: int) -> float:
    """Menor C con |C_{n_u}| <= (C <theta>)^{|n|}/n! sobre el barrido (|n| >= 1)."""
    groups = _block_indices(blocks)
    best = 0.0
    for theta in thetas:
        bracket = np.sqrt(1.0 + theta ** 2)
        for members in groups:
            for nu in _compositions(max_order, len(members)):
                size = sum(nu)
                if size == 0:
                    continue
                value = abs(cluster_coefficient(gaussian, members, nu, theta, m, r))
                if value == 0:
                    continue
                best = max(best, (value * MultiIndex(nu).factorial) ** (1.0 / size) / bracket)
    return best


def singleton_coefficient_constant(sigma2: float, Lambda: float, m: int, r: int,
                                   thetas: Sequence[float], max_order: int) -> float:
    """Menor C con |C_n| <= e^{-theta^2/(2 Lambda)} (C <theta>)^n / n!."""
    best = 0.0
    for theta in thetas:
        bracket = np.sqrt(1.0 + theta ** 2)
        damping = np.exp(theta ** 2 / (2 * Lambda))
        for n in range(max(m, 1), max_order + 1):
            value = abs(chaos_coefficient(theta, sigma2, n, r, m))
            if value == 0:
                continue
            best = max(best, (value * factorial(n) * damping) ** (1.0 / n) / bracket)
    return best


def rhs_legs(K: int, m: int) -> int:
    """Patas del término de mayor grado de E prod_j (X_j^{<>m} + X_j^{<>(m+1)})."""
    return K * (m + 1)


def rhs_moment(cov, m: int, leg_cap: Optional[int] = None) -> float:
    """E prod_j (X_j^{<>m} + X_j^{<>(m+1)}).

    Los 2^K multi-índices comparten la memoria de emparejamientos; el tope
    por defecto es GAUSSIAN_PARAMS['rhs_leg_cap'].
    """
    if m < 0:
        raise ValueError(f"m debe ser >= 0, se recibió {m}")
    C = _cov_matrix(cov)
    K = C.shape[0]
    cap = GAUSSIAN_PARAMS['rhs_leg_cap'] if leg_cap is None else leg_cap
    needed = rhs_legs(K, m)
    if needed > cap:
        raise ValueError(f"El lado derecho con K={K} y m={m} necesita {needed} patas; "
                         f"el tope configurado es {cap}")
    pair_sum = _pairing_counter(C, list(range(K)))
    total = 0.0
    for extra in itertools.product((0, 1), repeat=K):
        n = tuple(m + e for e in extra)
        if sum(n) % 2:
            continue
        total += _factorial_weight(n) * pair_sum(n)
    return float(total)
