"""
Verificación de la cota uniforme en theta: LHS exacto frente a RHS exacto
sobre barridos de theta, eps y geometría, con resumen de uniformidad y
contraste Monte Carlo.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from cluster_graph import (
    build_clusters, calibrate_c0, choose_L, no_singleton_bound, random_admissible_graph,
    run_pipeline,
)
from config import BOUND_PARAMS, GAUSSIAN_PARAMS
from covariance import (
    CovarianceModel, GaussianVector, fractional_covariance, gram_matrix, mollified_covariance,
)
from gaussian_algebra import (
    ChaosQuery, rhs_legs, rhs_moment, singleton_coefficient_constant, subtracted_factor_at,
    subtracted_product,
)
from scaling_geom import Scaling, bump_function

logger = logging.getLogger(__name__)

COLUMNS = ['family', 'K', 'm', 'r', 'eps', 'theta', 'lhs', 'rhs', 'ratio']


# ==================== CONFIGURACIÓN Y FIXTURES ====================

@dataclass
class BoundSweepConfig:
    families: List[str] = field(default_factory=lambda: list(BOUND_PARAMS['families']))
    K_list: List[int] = field(default_factory=lambda: [2, 3])
    m_list: List[int] = field(default_factory=lambda: [1, 2])
    r_list: List[int] = field(default_factory=lambda: [0, 1])
    eps_list: List[float] = field(default_factory=lambda: [2.0 ** -2, 2.0 ** -5, 2.0 ** -8])
    theta_max: float = BOUND_PARAMS['theta_max']
    theta_step: float = BOUND_PARAMS['theta_step']
    separations: List[float] = field(default_factory=lambda: list(BOUND_PARAMS['separations']))
    alpha: float = 0.5
    scaling: Tuple[float, ...] = (1.0,)
    seed: int = 0
    random_geometries: int = 2
    L: Optional[float] = None
    certificate_graphs: int = 5

    def __post_init__(self):
        if not self.families or not self.K_list or not self.m_list or not self.r_list or not self.eps_list:
            raise ValueError("Las rejillas del barrido no pueden estar vacías")
        unknown = set(self.families) - set(BOUND_PARAMS['families'])
        if unknown:
            raise ValueError(f"Familias desconocidas: {sorted(unknown)}")
        if min(self.m_list) < 0 or min(self.r_list) < 0:
            raise ValueError("m y r deben ser >= 0")
        for K in self.K_list:
            for m in self.m_list:
                rhs_need = rhs_legs(K, m)
                if rhs_need > GAUSSIAN_PARAMS['rhs_leg_cap']:
                    raise ValueError(f"K={K}, m={m}: el lado derecho necesita {rhs_need} patas "
                                     f"(tope {GAUSSIAN_PARAMS['rhs_leg_cap']})")
                for r in self.r_list:
                    lhs_need = lhs_legs(K, m, r)
                    if lhs_need > GAUSSIAN_PARAMS['leg_cap']:
                        raise ValueError(f"K={K}, m={m}, r={r}: el lado izquierdo necesita {lhs_need} patas "
                                         f"(tope {GAUSSIAN_PARAMS['leg_cap']})")
        if not self.theta_max > 0 or not self.theta_step > 0:
            raise ValueError("theta_max y theta_step deben ser positivos")

    @property
    def thetas(self) -> np.ndarray:
        return theta_grid(self.theta_max, self.theta_step)


def lhs_legs(K: int, m: int, r: int) -> int:
    """Patas de la consulta de caos: el tope K*m de ChaosQuery y el grado K*max(r, m-1) de la esperanza mixta."""
    return K * max(m, r)


def theta_grid(theta_max: float, step: float) -> np.ndarray:
    return np.arange(0.0, theta_max + step / 2, step)


@dataclass
class Fixture:
    family: str
    K: int
    eps: float
    points: np.ndarray
    gaussian: GaussianVector
    label: str = ''


def make_geometry(family: str, K: int, eps: float, d: int = 1,
                  separation: float = 100.0, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Puntos de la familia geométrica a escala eps (primer eje)."""
    pts = np.zeros((K, d))
    tight = 0.1 * eps
    if family == 'coincident':
        return pts
    if family == 'two_clusters':
        half = (K + 1) // 2
        for j in range(K):
            pts[j, 0] = tight * j if j < half else separation * eps + tight * (j - half)
        return pts
    if family == 'singleton_pair':
        for j in range(K - 1):
            pts[j, 0] = tight * j
        pts[K - 1, 0] = separation * eps
        return pts
    if family == 'random_ball':
        rng = rng or np.random.default_rng(0)
        radius = BOUND_PARAMS['ball_radius'] * eps
        return rng.uniform(-radius, radius, size=(K, d))
    raise ValueError(f"Familia geométrica desconocida: {family}")


def default_model(alpha: float = 0.5, s: Optional[Scaling] = None) -> CovarianceModel:
    return fractional_covariance(alpha, s or Scaling.euclidean(1))


def build_fixtures(config: BoundSweepConfig, models: Dict[float, CovarianceModel]) -> List[Fixture]:
    s = Scaling(config.scaling)
    root = np.random.SeedSequence(config.seed)
    fixtures = []
    for family in config.families:
        for K in config.K_list:
            for eps in config.eps_list:
                if family in ('two_clusters', 'singleton_pair'):
                    variants = [(D, None) for D in config.separations]
                elif family == 'random_ball':
                    variants = [(None, np.random.default_rng(child))
                                for child in root.spawn(config.random_geometries)]
                else:
                    variants = [(None, None)]
                for idx, (D, rng) in enumerate(variants):
                    pts = make_geometry(family, K, eps, s.d, D or 0.0, rng)
                    gaussian = gram_matrix(models[eps], pts)
                    label = f"{family}-D{D:g}" if D is not None else f"{family}-{idx}"
                    fixtures.append(Fixture(family, K, eps, pts, gaussian, label))
    return fixtures


# ==================== LADOS DE LA COTA ====================

def _gaussian_of(fixture) -> GaussianVector:
    return fixture.gaussian if isinstance(fixture, Fixture) else fixture


def lhs_exact(fixture, theta: float, m: int, r: int, moments: Optional[dict] = None) -> float:
    """|E prod_j d_theta^r H^_m(e^{i theta X_j})|."""
    return abs(subtracted_product(ChaosQuery(_gaussian_of(fixture), m, r, float(theta)), moments))


def _ratio(lhs: float, rhs: float) -> Tuple[float, bool]:
    zero = BOUND_PARAMS['zero_tol']
    if lhs <= zero:
        return 0.0, False
    if rhs <= 0:
        return np.inf, True
    return lhs / rhs, False


def _sweep_cell(fixture: Fixture, m: int, r: int, thetas: np.ndarray) -> Tuple[List[dict], List[dict]]:
    gaussian = fixture.gaussian
    rhs = rhs_moment(gaussian, m)
    rows, flags = [], []
    moments: dict = {}
    for theta in thetas:
        lhs = lhs_exact(gaussian, theta, m, r, moments)
        ratio, flagged = _ratio(lhs, rhs)
        rows.append({'family': fixture.family, 'K': fixture.K, 'm': m, 'r': r, 'eps': fixture.eps,
                     'theta': float(theta), 'lhs': lhs, 'rhs': rhs, 'ratio': ratio})
        if flagged:
            flags.append({'fixture': fixture.label, 'K': fixture.K, 'm': m, 'r': r,
                          'eps': fixture.eps, 'theta': float(theta), 'lhs': lhs, 'rhs': rhs})
    return rows, flags


# ==================== INFORME ====================

@dataclass
class BoundReport:
    table: pd.DataFrame
    summary: pd.DataFrame
    violations: List[dict]
    certificates: Dict[str, object]
    L_calibrated: float
    L_used: float
    seed: int

    @property
    def theta_uniform(self) -> bool:
        return bool(self.summary['theta_uniform'].all()) and bool(self.summary['far_ok'].all())

    @property
    def passed(self) -> bool:
        finite = bool(np.isfinite(self.table['ratio']).all())
        return finite and not self.violations and self.theta_uniform and \
            bool(self.certificates.get('all_valid', True))

    def offending_cell(self) -> Optional[dict]:
        if self.violations:
            return self.violations[0]
        bad = self.summary[~(self.summary['theta_uniform'] & self.summary['far_ok'])]
        return bad.iloc[0].to_dict() if len(bad) else None

    def to_summary_dict(self) -> dict:
        return {
            'seed': self.seed,
            'passed': self.passed,
            'theta_uniform': self.theta_uniform,
            'sup_ratio': float(self.table['ratio'].max()) if len(self.table) else 0.0,
            'L_calibrated': self.L_calibrated,
            'L_used': self.L_used,
            'violations': self.violations,
            'fitted_constants': self.summary.to_dict(orient='records'),
            'certificates': self.certificates,
        }


def summarize(table: pd.DataFrame) -> pd.DataFrame:
    """Constante ajustada por (familia, K, m, r) y comparación de ventanas en theta."""
    near_w, far_w = BOUND_PARAMS['near_window'], BOUND_PARAMS['far_window']
    tol = BOUND_PARAMS['uniformity_tol']
    records = []
    for key, group in table.groupby(['family', 'K', 'm', 'r'], sort=True):
        near = group.loc[group['theta'] <= near_w + 1e-12, 'ratio'].max()
        far_values = group.loc[group['theta'] >= far_w - 1e-12, 'ratio']
        far = far_values.max() if len(far_values) else 0.0
        fitted = group['ratio'].max()
        records.append({
            'family': key[0], 'K': int(key[1]), 'm': int(key[2]), 'r': int(key[3]),
            'fitted_C': float(fitted), 'sup_near': float(near), 'sup_far': float(far),
            'theta_uniform': bool(fitted <= near * (1 + tol) or fitted == 0.0),
            'far_ok': bool(far <= near * (1 + 1e-9) or far == 0.0),
        })
    return pd.DataFrame.from_records(records)


def _certificate_summary(config: BoundSweepConfig, fixtures: List[Fixture], L: float,
                         alpha: float) -> Dict[str, object]:
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    m = max(config.m_list)
    s = Scaling(config.scaling)
    graphs, steps, valid, worst_C = 0, 0, True, 0.0
    no_singleton_checks = 0
    for fixture in fixtures:
        if fixture.family == 'coincident' or fixture.K < 2:
            continue
        clustering = build_clusters(fixture.points, L, fixture.eps, s)
        if not clustering.singletons:
            no_singleton_bound(fixture.gaussian, clustering, m)
            no_singleton_checks += 1
            continue
        for _ in range(config.certificate_graphs):
            graph = random_admissible_graph(clustering, m, rng, fixture.gaussian.cov)
            result = run_pipeline(graph, clustering, m, fixture.gaussian, alpha)
            graphs += 1
            steps += result.steps
            valid = valid and result.valid
            worst_C = max(worst_C, result.C_total)
    return {'graphs': graphs, 'steps': steps, 'all_valid': valid, 'max_C_total': worst_C,
            'no_singleton_checks': no_singleton_checks, 'm': m}


def calibrate_L(model: CovarianceModel, m: int, r: int, thetas: Sequence[float]) -> float:
    """L a partir de la constante de coeficientes del fixture estándar."""
    coarse = np.asarray(thetas)[::max(1, len(thetas) // 50)]
    C = singleton_coefficient_constant(model.variance, model.Lambda, m, r, coarse, 8)
    C0 = calibrate_c0(max(C, 1e-12), model.Lambda, model.alpha)
    return choose_L(model.Lambda, C0, model.alpha)


def ratio_sweep(config: BoundSweepConfig, jobs: int = 1, show_progress: bool = True,
                models: Optional[Dict[float, CovarianceModel]] = None) -> BoundReport:
    logger.info("Barrido de cotas iniciado")
    s = Scaling(config.scaling)
    if models is None:
        base = default_model(config.alpha, s)
        rho = bump_function(s)
        models = {eps: mollified_covariance(base, rho, eps) for eps in config.eps_list}
    for eps, model in models.items():
        if model.Lambda is None:
            raise ValueError(f"El modelo para eps={eps} no superó la verificación sándwich")
    fixtures = build_fixtures(config, models)
    thetas = config.thetas
    tasks = [(fx, m, r) for fx in fixtures for m in config.m_list for r in config.r_list]
    results = Parallel(n_jobs=jobs)(
        delayed(_sweep_cell)(fx, m, r, thetas)
        for fx, m, r in tqdm(tasks, desc="Barrido", disable=not show_progress)
    )
    rows = [row for cell_rows, _ in results for row in cell_rows]
    violations = [flag for _, cell_flags in results for flag in cell_flags]
    table = pd.DataFrame.from_records(rows, columns=COLUMNS)
    summary = summarize(table)
    reference = models[config.eps_list[0]]
    L_cal = calibrate_L(reference, max(config.m_list), max(config.r_list), thetas)
    L_used = config.L if config.L is not None else L_cal
    certificates = _certificate_summary(config, fixtures, L_used, config.alpha)
    if violations:
        logger.error(f"{len(violations)} celdas con rhs = 0 y lhs > 0")
    logger.info(f"Barrido completado: {len(table)} filas, L calibrado={L_cal:g}")
    return BoundReport(table, summary, violations, certificates, L_cal, L_used, config.seed)


# ==================== MONTE CARLO ====================

@dataclass
class MCEstimate:
    value: complex
    stderr: float
    samples: int

    def agrees(self, exact: complex, k: float = 4.0) -> bool:
        return abs(self.value - exact) <= k * self.stderr + 1e-12


def sample_gaussian(gaussian: GaussianVector, samples: int, rng: np.random.Generator) -> np.ndarray:
    """Muestras (N, K) por factorización espectral exacta de la covarianza."""
    vals, vecs = np.linalg.eigh(gaussian.cov)
    factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return rng.standard_normal((samples, gaussian.K)) @ factor.T


def mc_cross_check(fixture, theta: float, m: int, r: int, samples: int, seed: int,
                   chunk: int = 100_000) -> MCEstimate:
    """Estimador Monte Carlo de E prod_j d_theta^r H^_m(e^{i theta X_j})."""
    if seed is None:
        raise ValueError("mc_cross_check necesita una semilla")
    gaussian = _gaussian_of(fixture)
    rng = np.random.default_rng(seed)
    total, total_re2, total_im2 = 0.0 + 0.0j, 0.0, 0.0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        X = sample_gaussian(gaussian, n, rng)
        prod = np.ones(n, dtype=complex)
        for j in range(gaussian.K):
            prod *= subtracted_factor_at(X[:, j], gaussian.cov[j, j], theta, m, r)
        total += prod.sum()
        total_re2 += float(np.sum(prod.real ** 2))
        total_im2 += float(np.sum(prod.imag ** 2))
        done += n
    mean = total / samples
    var_re = max(total_re2 / samples - mean.real ** 2, 0.0) * samples / max(samples - 1, 1)
    var_im = max(total_im2 / samples - mean.imag ** 2, 0.0) * samples / max(samples - 1, 1)
    return MCEstimate(complex(mean), float(np.sqrt((var_re + var_im) / samples)), samples)
