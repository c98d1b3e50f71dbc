import sys
sys.path.append('src')

import argparse
import configparser
import logging
from pathlib import Path
from typing import List, Optional

from colorama import Fore, init
from pydantic import ValidationError

from config import (BOUND_SWEEP_CONFIG, CONVERGE_CONFIG, EXIT_CODES, LOG_FILE, LOG_FORMAT,
                    LOG_LEVEL, LOGS_DIR, OUTPUT_DIR, REDUCE_DEMO_CONFIG, SANDWICH_CONFIG)
from input_module import InputModule
from output_module import OutputModule
from processing_module import ProcessingModule

init(autoreset=True)
logger = logging.getLogger(__name__)

DEFAULT_CONFIGS = {
    'bound-sweep': BOUND_SWEEP_CONFIG,
    'reduce-demo': REDUCE_DEMO_CONFIG,
    'converge': CONVERGE_CONFIG,
    'sandwich-check': SANDWICH_CONFIG,
}
INPUT_ERRORS = (ValidationError, ValueError, FileNotFoundError, configparser.Error)


def configurar_logging():
    LOGS_DIR.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL),
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(LOG_FILE, encoding='utf-8'),
            logging.StreamHandler()
        ]
    )


def construir_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='main.py',
        description="Verificador numérico de cotas gaussianas, reescritura de grafos y convergencia renormalizada")
    comunes = argparse.ArgumentParser(add_help=False)
    comunes.add_argument('--config', type=Path, default=None,
                         help="archivo INI (por defecto el incluido en data/configs)")
    comunes.add_argument('--seed', type=int, default=None, help="semilla (prioridad sobre el archivo)")
    comunes.add_argument('--out', type=Path, default=OUTPUT_DIR, help="directorio de resultados")
    comunes.add_argument('--jobs', type=int, default=1, help="procesos en paralelo (-1 = todos)")
    comunes.add_argument('--quiet', action='store_true', help="sin barras de progreso")

    sub = parser.add_subparsers(dest='subcommand', required=True)
    barrido = sub.add_parser('bound-sweep', parents=[comunes], help="barrido lhs/rhs de la cota de momentos")
    barrido.add_argument('--theta-max', type=float, default=None, help="extremo de la malla en theta")
    reduccion = sub.add_parser('reduce-demo', parents=[comunes], help="traza de reducción y realce de un grafo")
    reduccion.add_argument('graph', nargs='?', default=None, help="archivo de aristas 'i j multiplicidad'")
    sub.add_parser('converge', parents=[comunes], help="pendiente del error renormalizado en eps")
    sub.add_parser('sandwich-check', parents=[comunes], help="cota sándwich de la covarianza mollificada")
    return parser


class SistemaVerificacion:

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.modulo_entrada = InputModule()
        mostrar_progreso = not args.quiet and sys.stderr.isatty()
        self.modulo_procesamiento = ProcessingModule(jobs=args.jobs, show_progress=mostrar_progreso)
        self.modulo_salida = OutputModule(args.out)

    def _overrides(self) -> dict:
        overrides = {'seed': self.args.seed}
        if self.args.subcommand == 'bound-sweep':
            overrides['theta_max'] = self.args.theta_max
        return overrides

    def ejecutar(self) -> int:
        subcomando = self.args.subcommand
        ruta = self.args.config if self.args.config is not None else DEFAULT_CONFIGS[subcomando]
        settings = self.modulo_entrada.cargar_settings(subcomando, ruta, self._overrides())
        run = self.modulo_entrada.resolver_run_config(
            subcomando, ruta, self.args.seed, self.args.out, self.args.jobs, settings)
        logger.info(f"Subcomando {subcomando}: config={ruta}, semilla={run.seed}, salida={run.out_dir}")
        self.modulo_salida.mostrar_configuracion(subcomando, self.modulo_entrada.resumen_settings(settings))

        if subcomando == 'bound-sweep':
            report = self.modulo_procesamiento.ejecutar_barrido(settings, run.seed)
            self.modulo_salida.exportar_barrido(report)
            self.modulo_salida.mostrar_barrido(report)
            aprobado = report.passed
        elif subcomando == 'reduce-demo':
            outcome = self.modulo_procesamiento.ejecutar_reduccion(
                settings, settings.graph_path(self.args.graph))
            self.modulo_salida.exportar_reduccion(outcome)
            self.modulo_salida.mostrar_traza(outcome)
            aprobado = outcome.passed
        elif subcomando == 'converge':
            report = self.modulo_procesamiento.ejecutar_convergencia(settings, run.seed)
            self.modulo_salida.exportar_convergencia(report)
            self.modulo_salida.mostrar_convergencia(report)
            aprobado = report.passed
        else:
            outcome = self.modulo_procesamiento.ejecutar_sandwich(settings)
            self.modulo_salida.exportar_sandwich(outcome)
            self.modulo_salida.mostrar_sandwich(outcome)
            aprobado = outcome.passed

        self.modulo_salida.mostrar_archivos()
        if not aprobado:
            logger.warning(f"{subcomando}: la verificación numérica falló")
            return EXIT_CODES['check_failed']
        return EXIT_CODES['ok']


def main(argv: Optional[List[str]] = None) -> int:
    args = construir_parser().parse_args(argv)
    configurar_logging()
    try:
        return SistemaVerificacion(args).ejecutar()
    except INPUT_ERRORS as e:
        logger.error(f"Error de configuración o entrada: {e}")
        OutputModule.mostrar_error(str(e))
        return EXIT_CODES['config_error']
    except KeyboardInterrupt:
        print(Fore.YELLOW + "\n\n Ejecución interrumpida por el usuario")
        return EXIT_CODES['config_error']
    except Exception as e:
        logger.critical(f"Error interno: {e}", exc_info=True)
        print(Fore.RED + f"\n ERROR INTERNO: {e}")
        raise


if __name__ == "__main__":
    sys.exit(main())
