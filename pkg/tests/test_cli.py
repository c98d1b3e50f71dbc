import configparser
import json

import pandas as pd
import pytest
from pydantic import ValidationError

from input_module import (
    BoundSweepSettings, ConvergeSettings, InputModule, ReduceDemoSettings, RunConfig, SandwichSettings,
    _integers, parse_list, parse_number,
)
from main import main
from output_module import OutputModule
from processing_module import ProcessingModule

TINY_SWEEP = """
[bound_sweep]
seed = 20240
alpha = 0.5
families = two_clusters, singleton_pair
K = 2
m = 1
r = 0
eps_list = 2^-2, 2^-5
theta_max = 5
theta_step = 0.5
separations = 10
certificate_graphs = 2
"""


def write_ini(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding='utf-8')
    return path


def run(*argv, out):
    return main([*map(str, argv), '--out', str(out), '--quiet'])


# ==================== LECTURA DE VALORES ====================

def test_parse_number_accepts_powers():
    assert parse_number('2^-3') == 0.125
    assert parse_number(' 1e-3 ') == 0.001
    assert parse_number(4) == 4.0


def test_parse_list_skips_blanks():
    assert parse_list('a, b,,c ') == ['a', 'b', 'c']
    assert parse_list([1, 2]) == [1, 2]


def test_integers_reject_fractions():
    assert _integers('1, 2^3') == [1, 8]
    with pytest.raises(ValueError, match="entero"):
        _integers('1.5')


# ==================== CONFIGURACIÓN ====================

def test_bound_sweep_settings_validation():
    settings = BoundSweepSettings.model_validate({'K': '2, 3', 'eps_list': '2^-2', 'L': 'none'})
    assert settings.K == [2, 3]
    assert settings.L is None
    with pytest.raises(ValidationError):
        BoundSweepSettings.model_validate({'eps_list': '1.5'})
    with pytest.raises(ValidationError):
        BoundSweepSettings.model_validate({'theta_max': '1', 'theta_step': '2'})
    with pytest.raises(ValidationError):
        BoundSweepSettings.model_validate({'colour': 'red'})


def test_settings_reject_unknown_model():
    for settings in (ReduceDemoSettings, ConvergeSettings, SandwichSettings):
        with pytest.raises(ValidationError, match="modelo desconocido: tempred"):
            settings(model='tempred')
    assert ReduceDemoSettings(model='tempered').model == 'tempered'


def test_run_config_requires_seed_for_stochastic_commands(tmp_path):
    with pytest.raises(ValidationError, match="semilla"):
        RunConfig(subcommand='converge', out_dir=tmp_path)
    assert RunConfig(subcommand='reduce-demo', out_dir=tmp_path).seed is None
    with pytest.raises(ValidationError):
        RunConfig(subcommand='bound-sweep', seed=1, out_dir=tmp_path, jobs=0)


def test_read_section_errors(tmp_path):
    modulo = InputModule()
    with pytest.raises(FileNotFoundError):
        modulo.leer_seccion(tmp_path / 'falta.ini', 'converge')
    path = write_ini(tmp_path, 'otra.ini', "[sandwich]\nalpha = 0.5\n")
    with pytest.raises(configparser.NoSectionError):
        modulo.leer_seccion(path, 'converge')
    assert modulo.leer_seccion(None, 'converge') == {}


def test_cli_overrides_take_precedence(tmp_path):
    path = write_ini(tmp_path, 'sweep.ini', TINY_SWEEP)
    settings = InputModule().cargar_settings('bound-sweep', path, {'seed': 3, 'theta_max': None})
    assert settings.seed == 3
    assert settings.theta_max == 5.0
    assert ('seed', '3') in InputModule().resumen_settings(settings)


def test_graph_path_resolves_bundled_graphs(graphs_dir):
    assert ReduceDemoSettings(graph='case1_triangle.txt').graph_path() == graphs_dir / 'case1_triangle.txt'
    with pytest.raises(ValueError):
        ReduceDemoSettings().graph_path()


def test_json_export_sorts_keys(tmp_path):
    path = OutputModule(tmp_path).exportar_json({'b': 1, 'a': 2.5}, 'x.json')
    text = path.read_text(encoding='utf-8')
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {'a': 2.5, 'b': 1}


# ==================== SUBCOMANDOS ====================

def test_reduce_demo_default_graph(tmp_path):
    assert run('reduce-demo', out=tmp_path) == 0
    trace = pd.read_csv(tmp_path / 'reduce_demo_trace.csv')
    assert list(trace['kind']) == ['reduce-case-1']
    summary = json.loads((tmp_path / 'reduce_demo.json').read_text(encoding='utf-8'))
    assert summary['steps'] == 1
    assert summary['passed']


def test_reduce_demo_enhanced_graph_has_empty_trace(tmp_path, graphs_dir):
    assert run('reduce-demo', graphs_dir / 'enhanced_triangle.txt', out=tmp_path) == 0
    assert len(pd.read_csv(tmp_path / 'reduce_demo_trace.csv')) == 0


def test_reduce_demo_malformed_graph(tmp_path):
    bad = write_ini(tmp_path, 'bad.txt', "K = 2\nm = 1\nL = 4\neps = 0.01\npoints = 0; 1\n0 1\n")
    assert run('reduce-demo', bad, out=tmp_path / 'out') == 1


def test_invalid_configs_exit_with_one(tmp_path):
    sweep = write_ini(tmp_path, 'sweep.ini', "[bound_sweep]\nseed = 1\nm = -1\n")
    assert run('bound-sweep', '--config', sweep, out=tmp_path / 'a') == 1
    chaos = write_ini(tmp_path, 'chaos.ini', "[converge]\nseed = 1\nalpha = 0.4\nm = 3\n")
    assert run('converge', '--config', chaos, out=tmp_path / 'b') == 1
    seedless = write_ini(tmp_path, 'seedless.ini', "[converge]\nalpha = 0.4\nm = 2\n")
    assert run('converge', '--config', seedless, out=tmp_path / 'c') == 1


def test_bound_sweep_is_reproducible(tmp_path):
    config = write_ini(tmp_path, 'sweep.ini', TINY_SWEEP)
    assert run('bound-sweep', '--config', config, out=tmp_path / 'a') == 0
    assert run('bound-sweep', '--config', config, out=tmp_path / 'b') == 0
    first = (tmp_path / 'a' / 'bound_sweep.csv').read_bytes()
    assert first == (tmp_path / 'b' / 'bound_sweep.csv').read_bytes()
    summary = json.loads((tmp_path / 'a' / 'bound_sweep.json').read_text(encoding='utf-8'))
    assert summary['passed']


def test_bound_sweep_theta_max_override(tmp_path):
    config = write_ini(tmp_path, 'sweep.ini', TINY_SWEEP)
    assert run('bound-sweep', '--config', config, out=tmp_path / 'short') == 0
    assert run('bound-sweep', '--config', config, '--theta-max', 10, out=tmp_path / 'long') == 0
    short = pd.read_csv(tmp_path / 'short' / 'bound_sweep_constants.csv')
    long = pd.read_csv(tmp_path / 'long' / 'bound_sweep_constants.csv')
    pd.testing.assert_series_equal(short['fitted_C'], long['fitted_C'], rtol=1e-10)
    assert pd.read_csv(tmp_path / 'long' / 'bound_sweep.csv')['theta'].max() == pytest.approx(10.0)


def test_sandwich_check_default(tmp_path):
    assert run('sandwich-check', out=tmp_path) == 0
    table = pd.read_csv(tmp_path / 'sandwich.csv')
    assert len(table) == 3
    assert table['sandwich_ok'].all()


def test_converge_bundled_config_is_reproducible(tmp_path, configs_dir):
    config = configs_dir / 'converge_abs.ini'
    assert run('converge', '--config', config, '--seed', 7, out=tmp_path / 'a') == 0
    assert run('converge', '--config', config, '--seed', 7, out=tmp_path / 'b') == 0
    for name in ('converge.csv', 'converge_slopes.csv'):
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()
    summary = json.loads((tmp_path / 'a' / 'converge.json').read_text(encoding='utf-8'))
    assert summary['seed'] == 7
    assert summary['passed']


# ==================== CONSOLA Y ERRORES ====================

def test_settings_summary_is_shown(tmp_path, monkeypatch):
    shown = []
    monkeypatch.setattr(OutputModule, 'mostrar_configuracion',
                        lambda self, subcomando, pares: shown.append((subcomando, dict(pares))))
    assert run('reduce-demo', out=tmp_path) == 0
    assert shown == [('reduce-demo', {'seed': 'None', 'alpha': '0.5', 'scaling': '[1.0]',
                                      'graph': 'case1_triangle.txt', 'm': 'None', 'model': 'fractional'})]


def test_unknown_model_is_a_config_error(tmp_path, monkeypatch):
    errors = []
    monkeypatch.setattr(OutputModule, 'mostrar_error', staticmethod(errors.append))
    config = write_ini(tmp_path, 'demo.ini', "[reduce_demo]\ngraph = case1_triangle.txt\nmodel = tempred\n")
    assert run('reduce-demo', '--config', config, out=tmp_path / 'out') == 1
    assert len(errors) == 1
    assert "modelo desconocido: tempred" in errors[0]


def test_internal_errors_propagate(tmp_path, monkeypatch):
    def broken(self, settings):
        raise RuntimeError("fallo interno")

    monkeypatch.setattr(ProcessingModule, 'ejecutar_sandwich', broken)
    with pytest.raises(RuntimeError, match="fallo interno"):
        run('sandwich-check', out=tmp_path)
