#MODULO 1- Modulo de entrada
import configparser
import logging
import os
import re
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from bound_lab import BoundSweepConfig
from cluster_graph import GraphFile, read_graph_file
from config import BOUND_PARAMS, CONVERGENCE_PARAMS, COVARIANCE_PARAMS, GRAPHS_DIR
from convergence_lab import ConvergenceConfig

logger = logging.getLogger(__name__)

STOCHASTIC_SUBCOMMANDS = ('bound-sweep', 'converge')
MODELS = ('fractional', 'tempered')
SECTIONS = {
    'bound-sweep': 'bound_sweep',
    'reduce-demo': 'reduce_demo',
    'converge': 'converge',
    'sandwich-check': 'sandwich',
}

_POWER = re.compile(r'^\s*([+-]?[\d.]+)\s*\^\s*([+-]?[\d.]+)\s*$')


# ==================== LECTURA DE VALORES ====================

def parse_number(raw) -> float:
    """'0.5', '1e-3' o potencias como '2^-3'."""
    if isinstance(raw, (int, float)):
        return float(raw)
    match = _POWER.match(str(raw))
    if match:
        return float(match.group(1)) ** float(match.group(2))
    return float(str(raw).strip())


def parse_list(raw) -> list:
    if isinstance(raw, (list, tuple)):
        return list(raw)
    return [item.strip() for item in str(raw).split(',') if item.strip()]


def _numbers(raw) -> List[float]:
    return [parse_number(v) for v in parse_list(raw)]


def _integers(raw) -> List[int]:
    values = []
    for v in parse_list(raw):
        number = parse_number(v)
        if number != int(number):
            raise ValueError(f"se esperaba un entero, se recibió {v}")
        values.append(int(number))
    return values


def _known_model(name: str) -> str:
    if name not in MODELS:
        raise ValueError(f"modelo desconocido: {name}")
    return name


# ==================== MODELOS DE CONFIGURACIÓN ====================

class _Settings(BaseModel):
    model_config = ConfigDict(extra='forbid')

    seed: Optional[int] = None
    alpha: float = 0.5
    scaling: List[float] = [1.0]

    @field_validator('alpha', mode='before')
    @classmethod
    def _alpha(cls, v):
        return parse_number(v)

    @field_validator('scaling', mode='before')
    @classmethod
    def _scaling(cls, v):
        return _numbers(v)


class BoundSweepSettings(_Settings):
    families: List[str] = list(BOUND_PARAMS['families'])
    K: List[int] = [2, 3]
    m: List[int] = [1, 2]
    r: List[int] = [0, 1]
    eps_list: List[float] = [2.0 ** -2, 2.0 ** -5, 2.0 ** -8]
    theta_max: float = BOUND_PARAMS['theta_max']
    theta_step: float = BOUND_PARAMS['theta_step']
    separations: List[float] = list(BOUND_PARAMS['separations'])
    random_geometries: int = 2
    L: Optional[float] = None
    certificate_graphs: int = 5

    @field_validator('families', mode='before')
    @classmethod
    def _families(cls, v):
        return parse_list(v)

    @field_validator('K', 'm', 'r', mode='before')
    @classmethod
    def _int_lists(cls, v):
        return _integers(v)

    @field_validator('eps_list', 'separations', mode='before')
    @classmethod
    def _float_lists(cls, v):
        return _numbers(v)

    @field_validator('theta_max', 'theta_step', 'L', mode='before')
    @classmethod
    def _floats(cls, v):
        return None if v is None or str(v).strip().lower() == 'none' else parse_number(v)

    @field_validator('m', 'r')
    @classmethod
    def _non_negative(cls, v):
        if any(x < 0 for x in v):
            raise ValueError("todos los valores deben ser >= 0")
        return v

    @field_validator('K')
    @classmethod
    def _positive(cls, v):
        if any(x < 1 for x in v):
            raise ValueError("K debe ser >= 1")
        return v

    @field_validator('eps_list')
    @classmethod
    def _eps_range(cls, v):
        if not v or any(not 0 < e < 1 for e in v):
            raise ValueError("cada eps debe estar en (0, 1)")
        return v

    @model_validator(mode='after')
    def _theta_grid(self):
        if not self.theta_max > 0 or not 0 < self.theta_step <= self.theta_max:
            raise ValueError("theta_grid necesita 0 < theta_step <= theta_max")
        return self

    def to_config(self, seed: int) -> BoundSweepConfig:
        return BoundSweepConfig(
            families=self.families, K_list=self.K, m_list=self.m, r_list=self.r,
            eps_list=self.eps_list, theta_max=self.theta_max, theta_step=self.theta_step,
            separations=self.separations, alpha=self.alpha, scaling=tuple(self.scaling),
            seed=seed, random_geometries=self.random_geometries, L=self.L,
            certificate_graphs=self.certificate_graphs,
        )


class ConvergeSettings(_Settings):
    alpha: float = CONVERGENCE_PARAMS['alpha']
    F: List[str] = ['x^2', 'x^4', '|x|']
    m: int = CONVERGENCE_PARAMS['m']
    kappa: float = CONVERGENCE_PARAMS['kappa']
    eps_list: List[float] = list(CONVERGENCE_PARAMS['eps_list'])
    lambda_list: List[float] = list(CONVERGENCE_PARAMS['lambda_list'])
    n: int = CONVERGENCE_PARAMS['n']
    samples: int = CONVERGENCE_PARAMS['samples']
    grid_exponent: int = CONVERGENCE_PARAMS['grid_exponent']
    model: str = 'fractional'
    test_function: str = 'bump'
    mollifier: str = 'bump'

    @field_validator('F', mode='before')
    @classmethod
    def _names(cls, v):
        return parse_list(v)

    @field_validator('eps_list', 'lambda_list', mode='before')
    @classmethod
    def _float_lists(cls, v):
        return _numbers(v)

    @field_validator('kappa', mode='before')
    @classmethod
    def _kappa(cls, v):
        return parse_number(v)

    @field_validator('model')
    @classmethod
    def _model(cls, v):
        return _known_model(v)

    @field_validator('m')
    @classmethod
    def _m(cls, v):
        if v < 0:
            raise ValueError("m debe ser >= 0")
        return v

    @model_validator(mode='after')
    def _chaos_order(self):
        total = sum(self.scaling)
        if not self.m * self.alpha < total:
            raise ValueError(f"m={self.m} viola la condición del teorema de convergencia "
                             f"m < |s|/alpha = {total / self.alpha:.4g}")
        return self

    def to_config(self, seed: int) -> ConvergenceConfig:
        return ConvergenceConfig(
            nonlinearities=self.F, m=self.m, alpha=self.alpha, kappa=self.kappa,
            eps_list=self.eps_list, lambda_list=self.lambda_list, n=self.n,
            samples=self.samples, seed=seed, scaling=tuple(self.scaling),
            grid_exponent=self.grid_exponent, model=self.model,
            test_function=self.test_function, mollifier=self.mollifier,
        )


class ReduceDemoSettings(_Settings):
    graph: Optional[str] = None
    m: Optional[int] = None
    model: str = 'fractional'

    @field_validator('m')
    @classmethod
    def _m(cls, v):
        if v is not None and v < 0:
            raise ValueError("m debe ser >= 0")
        return v

    @field_validator('model')
    @classmethod
    def _model(cls, v):
        return _known_model(v)

    def graph_path(self, override: Optional[str] = None) -> Path:
        raw = override or self.graph
        if raw is None:
            raise ValueError("reduce-demo necesita un archivo de grafo")
        path = Path(raw)
        if not path.exists() and (GRAPHS_DIR / path).exists():
            path = GRAPHS_DIR / path
        return path


class SandwichSettings(_Settings):
    eps_list: List[float] = [2.0 ** -2, 2.0 ** -4, 2.0 ** -6]
    model: str = 'fractional'
    mollifier: str = 'bump'
    Lambda: Optional[float] = None
    window: float = 1.0
    limit_tol: float = COVARIANCE_PARAMS['limit_l1_tol']

    @field_validator('eps_list', mode='before')
    @classmethod
    def _float_lists(cls, v):
        return _numbers(v)

    @field_validator('Lambda', 'window', 'limit_tol', mode='before')
    @classmethod
    def _floats(cls, v):
        return None if v is None or str(v).strip().lower() == 'none' else parse_number(v)

    @field_validator('eps_list')
    @classmethod
    def _eps_range(cls, v):
        if not v or any(not 0 < e < 1 for e in v):
            raise ValueError("cada eps debe estar en (0, 1)")
        return v

    @field_validator('model')
    @classmethod
    def _model(cls, v):
        return _known_model(v)


SETTINGS = {
    'bound-sweep': BoundSweepSettings,
    'reduce-demo': ReduceDemoSettings,
    'converge': ConvergeSettings,
    'sandwich-check': SandwichSettings,
}


class RunConfig(BaseModel):
    subcommand: str
    config_path: Optional[Path] = None
    seed: Optional[int] = None
    out_dir: Path
    jobs: int = 1

    @field_validator('subcommand')
    @classmethod
    def _subcommand(cls, v):
        if v not in SECTIONS:
            raise ValueError(f"subcomando desconocido: {v}")
        return v

    @field_validator('jobs')
    @classmethod
    def _jobs(cls, v):
        if v == 0:
            raise ValueError("jobs no puede ser 0")
        return v

    @model_validator(mode='after')
    def _seed_required(self):
        if self.subcommand in STOCHASTIC_SUBCOMMANDS and self.seed is None:
            raise ValueError(f"{self.subcommand} necesita una semilla (--seed o 'seed' en la configuración)")
        return self


# ==================== MÓDULO DE ENTRADA ====================

class InputModule:

    def leer_seccion(self, ruta: Optional[Path], seccion: str) -> Dict[str, str]:
        """Pares clave = valor de la sección; sin archivo se devuelve vacío."""
        if ruta is None:
            return {}
        ruta = Path(ruta)
        if not ruta.exists():
            raise FileNotFoundError(f"Archivo de configuración no encontrado: {ruta}")
        parser = configparser.ConfigParser(inline_comment_prefixes=('#', ';'))
        parser.optionxform = str
        parser.read(ruta, encoding='utf-8')
        if not parser.has_section(seccion):
            raise configparser.NoSectionError(seccion)
        valores = dict(parser.items(seccion))
        logger.info(f"Configuración [{seccion}] leída de {ruta}: {len(valores)} claves")
        return valores

    def cargar_settings(self, subcomando: str, ruta: Optional[Path] = None,
                        overrides: Optional[Dict[str, object]] = None):
        """Valida la sección del subcomando; los overrides de la CLI tienen prioridad."""
        valores: Dict[str, object] = dict(self.leer_seccion(ruta, SECTIONS[subcomando]))
        for clave, valor in (overrides or {}).items():
            if valor is not None:
                valores[clave] = valor
        settings = SETTINGS[subcomando].model_validate(valores)
        return settings

    def resolver_run_config(self, subcomando: str, ruta: Optional[Path], seed: Optional[int],
                            out_dir: Path, jobs: int, settings) -> RunConfig:
        run = RunConfig(subcommand=subcomando, config_path=ruta,
                        seed=seed if seed is not None else settings.seed,
                        out_dir=out_dir, jobs=jobs)
        run.out_dir.mkdir(parents=True, exist_ok=True)
        if not os.access(run.out_dir, os.W_OK):
            raise ValueError(f"Directorio de salida sin permiso de escritura: {run.out_dir}")
        return run

    def cargar_grafo(self, ruta: Path) -> GraphFile:
        ruta = Path(ruta)
        if not ruta.exists():
            raise FileNotFoundError(f"Archivo de grafo no encontrado: {ruta}")
        grafo = read_graph_file(ruta)
        logger.info(f"Grafo cargado de {ruta}: K={grafo.K}, m={grafo.m}, {len(grafo.edges)} aristas")
        return grafo

    def resumen_settings(self, settings) -> List[Tuple[str, str]]:
        return [(k, str(v)) for k, v in settings.model_dump().items()]
