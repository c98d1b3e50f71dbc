#MODULO 2- Modulo de procesamiento
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from bound_lab import BoundReport, ratio_sweep
from cluster_graph import (ClusterGraph, Clustering, GraphFile, PipelineResult,
                           build_clusters, run_pipeline)
from convergence_lab import ConvergenceReport, base_model, convergence_error, make_test_function
from covariance import (default_probes, gram_matrix, limit_kernel_error,
                        mollified_covariance, sandwich_check)
from input_module import (BoundSweepSettings, ConvergeSettings, InputModule,
                          ReduceDemoSettings, SandwichSettings)
from scaling_geom import Scaling

logger = logging.getLogger(__name__)

SANDWICH_COLUMNS = ['eps', 'model', 'mollifier', 'variance', 'lambda_fit', 'lambda_configured',
                    'worst_probe', 'sandwich_ok', 'limit_l1_error', 'limit_ok']


@dataclass(frozen=True)
class SandwichJob:
    index: int
    eps: float
    alpha: float
    scaling: Tuple[float, ...]
    model: str
    mollifier: str
    Lambda: Optional[float]
    window: float
    limit_tol: float


@dataclass
class ReductionOutcome:
    graph_file: GraphFile
    clustering: Clustering
    result: PipelineResult
    m: int
    Lambda: float

    @property
    def passed(self) -> bool:
        return self.result.valid


@dataclass
class SandwichOutcome:
    table: pd.DataFrame
    settings: SandwichSettings

    @property
    def passed(self) -> bool:
        finest = self.table['eps'].idxmin()
        return bool(self.table['sandwich_ok'].all()) and bool(self.table.loc[finest, 'limit_ok'])

    def to_summary_dict(self) -> dict:
        return {
            'passed': self.passed,
            'alpha': self.settings.alpha,
            'model': self.settings.model,
            'mollifier': self.settings.mollifier,
            'Lambda': self.settings.Lambda,
            'rows': self.table.to_dict(orient='records'),
        }


def run_sandwich_job(job: SandwichJob) -> dict:
    s = Scaling(job.scaling)
    base = base_model(job.model, job.alpha, s)
    rho = make_test_function(job.mollifier, s)
    mollified = mollified_covariance(base, rho, job.eps)
    report = sandwich_check(mollified, default_probes(), Lambda=job.Lambda)
    error = limit_kernel_error(base, job.eps, job.window)
    if not report.passed:
        logger.warning(f"eps={job.eps:g}: {report.diagnostic}")
    return {
        'eps': job.eps, 'model': job.model, 'mollifier': job.mollifier,
        'variance': float(mollified.variance), 'lambda_fit': report.lambda_fit,
        'lambda_configured': np.nan if job.Lambda is None else job.Lambda,
        'worst_probe': report.worst_probe, 'sandwich_ok': report.passed,
        'limit_l1_error': error, 'limit_ok': bool(error <= job.limit_tol),
    }


class ProcessingModule:

    def __init__(self, jobs: int = 1, show_progress: bool = True):
        self.jobs = jobs
        self.show_progress = show_progress
        self.input_module = InputModule()

    # ==================== BARRIDO DE COTAS ====================

    def ejecutar_barrido(self, settings: BoundSweepSettings, seed: int) -> BoundReport:
        config = settings.to_config(seed)
        logger.info(f"Barrido: familias={config.families}, K={config.K_list}, m={config.m_list}, "
                    f"r={config.r_list}, theta_max={config.theta_max}")
        return ratio_sweep(config, jobs=self.jobs, show_progress=self.show_progress)

    # ==================== REDUCCIÓN DE GRAFOS ====================

    def ejecutar_reduccion(self, settings: ReduceDemoSettings, ruta_grafo: Path) -> ReductionOutcome:
        grafo = self.input_module.cargar_grafo(ruta_grafo)
        m = settings.m if settings.m is not None else grafo.m
        s = Scaling(tuple(settings.scaling))
        if grafo.points.shape[1] != s.d:
            raise ValueError(f"Los puntos tienen dimensión {grafo.points.shape[1]} y el escalamiento {s.d}")
        if grafo.labels is not None:
            clustering = Clustering.from_labels(grafo.points, grafo.labels, grafo.L, grafo.eps, s)
        else:
            clustering = build_clusters(grafo.points, grafo.L, grafo.eps, s)
        base = base_model(settings.model, settings.alpha, s)
        model = mollified_covariance(base, make_test_function('bump', s), grafo.eps)
        gaussian = gram_matrix(model, clustering.points)
        graph = ClusterGraph(gaussian.cov, grafo.edges)
        logger.info(f"Reducción: K={graph.K}, m={m}, grados iniciales={graph.degrees()}")
        result = run_pipeline(graph, clustering, m, gaussian, settings.alpha)
        logger.info(f"Reducción terminada: {result.steps} pasos, C_total={result.C_total:.6e}, "
                    f"válida={result.valid}")
        return ReductionOutcome(grafo, clustering, result, m, float(model.Lambda))

    # ==================== CONVERGENCIA ====================

    def ejecutar_convergencia(self, settings: ConvergeSettings, seed: int) -> ConvergenceReport:
        config = settings.to_config(seed)
        return convergence_error(config, jobs=self.jobs, show_progress=self.show_progress)

    # ==================== SÁNDWICH ====================

    def trabajos_sandwich(self, settings: SandwichSettings) -> List[SandwichJob]:
        return [
            SandwichJob(index=i, eps=float(eps), alpha=settings.alpha,
                        scaling=tuple(settings.scaling), model=settings.model,
                        mollifier=settings.mollifier, Lambda=settings.Lambda,
                        window=settings.window, limit_tol=settings.limit_tol)
            for i, eps in enumerate(settings.eps_list)
        ]

    def ejecutar_sandwich(self, settings: SandwichSettings) -> SandwichOutcome:
        jobs = self.trabajos_sandwich(settings)
        logger.info(f"Verificación sándwich: {len(jobs)} valores de eps, modelo {settings.model}")
        results = Parallel(n_jobs=self.jobs)(
            delayed(run_sandwich_job)(job)
            for job in tqdm(jobs, desc="Sándwich", disable=not self.show_progress)
        )
        ordered = [row for _, row in sorted(zip([j.index for j in jobs], results), key=lambda p: p[0])]
        table = pd.DataFrame.from_records(ordered, columns=SANDWICH_COLUMNS)
        return SandwichOutcome(table, settings)
