#MODULO 3- Modulo de salida
import json
import logging
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd
from colorama import Fore, Style, init

from bound_lab import BoundReport
from config import MESSAGES
from convergence_lab import ConvergenceReport

init(autoreset=True)
logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.12e'
TRACE_COLUMNS = ['step', 'kind', 'vertices', 'factor', 'value_before', 'value_after',
                 'degrees_before', 'degrees_after', 'worst_case_factor', 'holds']


def _to_builtin(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Tipo no serializable: {type(value).__name__}")


class OutputModule:

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.archivos: List[Path] = []

    # ==================== ARCHIVOS ====================

    def exportar_csv(self, tabla: pd.DataFrame, nombre: str) -> Path:
        ruta = self.out_dir / nombre
        tabla.to_csv(ruta, index=False, float_format=FLOAT_FORMAT)
        self.archivos.append(ruta)
        logger.info(f"Tabla exportada a: {ruta} ({len(tabla)} filas)")
        return ruta

    def exportar_json(self, datos: Dict, nombre: str) -> Path:
        ruta = self.out_dir / nombre
        with open(ruta, 'w', encoding='utf-8') as f:
            json.dump(datos, f, indent=2, sort_keys=True, default=_to_builtin)
            f.write("\n")
        self.archivos.append(ruta)
        logger.info(f"Resumen exportado a: {ruta}")
        return ruta

    def exportar_barrido(self, report: BoundReport) -> List[Path]:
        return [
            self.exportar_csv(report.table, 'bound_sweep.csv'),
            self.exportar_csv(report.summary, 'bound_sweep_constants.csv'),
            self.exportar_json(report.to_summary_dict(), 'bound_sweep.json'),
        ]

    def exportar_convergencia(self, report: ConvergenceReport) -> List[Path]:
        return [
            self.exportar_csv(report.table, 'converge.csv'),
            self.exportar_csv(report.slopes, 'converge_slopes.csv'),
            self.exportar_json(report.to_summary_dict(), 'converge.json'),
        ]

    def tabla_traza(self, outcome) -> pd.DataFrame:
        rows = []
        for k, cert in enumerate(outcome.result.certificates, start=1):
            rows.append({
                'step': k, 'kind': cert.kind,
                'vertices': ' '.join(str(v) for v in cert.vertices),
                'factor': cert.factor, 'value_before': cert.value_before,
                'value_after': cert.value_after,
                'degrees_before': ' '.join(str(d) for d in cert.degrees_before),
                'degrees_after': ' '.join(str(d) for d in cert.degrees_after),
                'worst_case_factor': np.nan if cert.worst_case_factor is None else cert.worst_case_factor,
                'holds': cert.holds,
            })
        return pd.DataFrame.from_records(rows, columns=TRACE_COLUMNS)

    def exportar_reduccion(self, outcome) -> List[Path]:
        result = outcome.result
        resumen = {
            'passed': outcome.passed,
            'm': outcome.m,
            'K': result.initial.K,
            'Lambda': outcome.Lambda,
            'steps': result.steps,
            'C_total': result.C_total,
            'rhs_moment': result.rhs,
            'value_initial': result.initial.value(),
            'degrees_initial': list(result.initial.degrees()),
            'degrees_reduced': list(result.reduced.degrees()),
            'degrees_final': list(result.enhanced.degrees()),
            'degrees_ok': result.degrees_ok,
            'composition_holds': result.composition_holds,
            'clusters': outcome.clustering.blocks,
        }
        return [
            self.exportar_csv(self.tabla_traza(outcome), 'reduce_demo_trace.csv'),
            self.exportar_json(resumen, 'reduce_demo.json'),
        ]

    def exportar_sandwich(self, outcome) -> List[Path]:
        return [
            self.exportar_csv(outcome.table, 'sandwich.csv'),
            self.exportar_json(outcome.to_summary_dict(), 'sandwich.json'),
        ]

    # ==================== CONSOLA ====================

    def _cabecera(self, titulo: str):
        print("\n" + "=" * 70)
        print(Fore.CYAN + Style.BRIGHT + f"     {titulo}")
        print("=" * 70 + "\n")

    def _veredicto(self, aprobado: bool, detalle: str = ''):
        if aprobado:
            print(f"\n{Fore.GREEN + Style.BRIGHT}{MESSAGES['ok']}")
        else:
            print(f"\n{Fore.RED + Style.BRIGHT}{MESSAGES['check_failed']}")
            if detalle:
                print(f"   {Fore.RED}{detalle}")
        print("=" * 70 + "\n")

    def mostrar_barrido(self, report: BoundReport):
        self._cabecera("BARRIDO DE LA COTA lhs <= C rhs")
        print(f"   Filas evaluadas:      {len(report.table)}")
        print(f"   Sup lhs/rhs:          {report.table['ratio'].max():.6e}")
        print(f"   L calibrado / usado:  {report.L_calibrated:g} / {report.L_used:g}")
        print(f"   Uniformidad en theta: {'sí' if report.theta_uniform else 'no'}")
        print(f"\n Constantes ajustadas:")
        for row in report.summary.itertuples():
            color = Fore.GREEN if row.theta_uniform and row.far_ok else Fore.YELLOW
            print(f"   {color}{row.family:12s} K={row.K} m={row.m} r={row.r}  C={row.fitted_C:.6e}")
        cert = report.certificates
        print(f"\n Certificados: {cert.get('graphs', 0)} grafos, {cert.get('steps', 0)} pasos, "
              f"válidos={cert.get('all_valid', True)}")
        celda = report.offending_cell()
        self._veredicto(report.passed, f"Celda ofensiva: {celda}" if celda else '')

    def mostrar_traza(self, outcome):
        result = outcome.result
        self._cabecera("REESCRITURA DE GRAFOS CON CERTIFICADOS")
        print(f"   K={result.initial.K}, m={outcome.m}, Lambda={outcome.Lambda:.4f}")
        print(f"   Bloques: {outcome.clustering.blocks}")
        print(f"   Grados iniciales: {result.initial.degrees()}\n")
        if not result.certificates:
            print(f"   {Fore.YELLOW}Sin pasos: el grafo ya tiene grados en {{m, m+1}}")
        for k, cert in enumerate(result.certificates, start=1):
            color = Fore.GREEN if cert.holds else Fore.RED
            print(f"   {k:3d}. {color}{cert.describe()}")
        print(f"\n   Grados finales: {result.enhanced.degrees()}")
        print(f"   C_total = {result.C_total:.6e}")
        print(f"   |Gamma| = {result.initial.value():.6e} <= C_total * rhs = "
              f"{result.C_total * result.rhs:.6e}: {'sí' if result.composition_holds else 'no'}")
        detalle = '' if result.degrees_ok else f"grados finales fuera de {{{outcome.m}, {outcome.m + 1}}}"
        self._veredicto(outcome.passed, detalle)

    def mostrar_convergencia(self, report: ConvergenceReport):
        self._cabecera("CONVERGENCIA DE LA NO LINEALIDAD RENORMALIZADA")
        config = report.config
        print(f"   m={config.m}, alpha={config.alpha}, kappa={config.kappa}, n={config.n}, "
              f"réplicas={config.samples}, muestreador={report.sampler_method}")
        print(f"   sigma^2 límite = {report.sigma2:.6f}\n")
        for row in report.pooled.itertuples():
            color = Fore.GREEN if row.rate_positive else Fore.RED
            kappa = "cumple" if row.rate_meets_kappa else "no alcanza"
            print(f"   {color}{row.F:8s} pendiente={row.slope:+.4f} ± {row.stderr:.4f} "
                  f"(cota inferior {row.lower:+.4f}; {kappa} kappa/2)")
        for name, (slope, se) in report.recovered.items():
            a_m = report.coefficients[name]['a_m']
            print(f"   a_m recuperado para {name}: {slope:.4f} ± {se:.4f} (exacto {a_m:.4f})")
        detalle = f"Pendiente no positiva para: {', '.join(report.failing)}" if report.failing else ''
        self._veredicto(report.passed, detalle)

    def mostrar_sandwich(self, outcome):
        self._cabecera("VERIFICACIÓN SÁNDWICH DE LA COVARIANZA")
        for row in outcome.table.itertuples():
            color = Fore.GREEN if row.sandwich_ok and row.limit_ok else Fore.YELLOW
            print(f"   {color}eps={row.eps:<10.4g} Lambda_fit={row.lambda_fit:.4f}  "
                  f"error L1 límite={row.limit_l1_error:.3e}")
        self._veredicto(outcome.passed)

    def mostrar_configuracion(self, subcomando: str, pares: List[Tuple[str, str]]):
        self._cabecera(f"CONFIGURACIÓN DE {subcomando.upper()}")
        for clave, valor in pares:
            print(f"   {clave:16s} {valor}")

    @staticmethod
    def mostrar_error(mensaje: str):
        print(f"\n{Fore.RED + Style.BRIGHT}{MESSAGES['config_error']}: {mensaje}")

    def mostrar_archivos(self):
        for ruta in self.archivos:
            print(f"   {Fore.CYAN}{ruta}")
