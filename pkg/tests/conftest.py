"""
Fixtures compartidas: los módulos viven en src/ y se importan planos, igual
que desde main.py.
"""
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / 'src'))
sys.path.insert(0, str(ROOT))

import numpy as np
import pytest

from cluster_graph import ClusterGraph, build_clusters, read_graph_file
from covariance import fractional_covariance, gram_matrix, mollified_covariance
from scaling_geom import Scaling, bump_function


@pytest.fixture(scope='session')
def s1():
    return Scaling.euclidean(1)


@pytest.fixture(scope='session')
def bump1(s1):
    return bump_function(s1)


@pytest.fixture(scope='session')
def fractional_half(s1):
    return fractional_covariance(0.5, s1)


@pytest.fixture(scope='session')
def mollified_quarter(fractional_half, bump1):
    return mollified_covariance(fractional_half, bump1, 0.25)


@pytest.fixture(scope='session')
def mollified_centi(fractional_half, bump1):
    """Modelo a eps = 0.01, la escala de los grafos de data/graphs."""
    return mollified_covariance(fractional_half, bump1, 0.01)


@pytest.fixture(scope='session')
def graphs_dir():
    return ROOT / 'data' / 'graphs'


@pytest.fixture(scope='session')
def configs_dir():
    return ROOT / 'data' / 'configs'


def graph_setup(path, model, s, clustering=None):
    """(grafo, agrupamiento, vector gaussiano) a partir de un archivo de aristas."""
    graph_file = read_graph_file(path)
    clustering = clustering or build_clusters(graph_file.points, graph_file.L, graph_file.eps, s)
    gaussian = gram_matrix(model, clustering.points)
    return ClusterGraph(gaussian.cov, graph_file.edges), clustering, gaussian, graph_file


def random_psd(rng, K, scale=1.0):
    A = rng.normal(size=(K, K)) * scale
    return A @ A.T / K + 0.05 * np.eye(K)
