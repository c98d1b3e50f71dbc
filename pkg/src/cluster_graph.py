"""
Agrupamiento a escala L*eps, grafos generalizados y los sistemas de
reescritura de reducción y realce. Cada paso emite un certificado numérico
|Gamma_antes| <= factor * |Gamma_después| evaluado con los valores reales R.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from config import CERTIFICATE_PARAMS
from covariance import GaussianVector, pairwise_lambda
from gaussian_algebra import rhs_moment, wick_moment
from scaling_geom import Scaling, as_point_array, pairwise_distances

logger = logging.getLogger(__name__)


# ==================== AGRUPAMIENTO ====================

@dataclass
class Clustering:
    points: np.ndarray
    L: float
    eps: float
    scaling: Scaling
    blocks: List[List[int]]
    labels: List[int] = field(init=False)

    def __post_init__(self):
        self.blocks = sorted((sorted(int(j) for j in b) for b in self.blocks), key=lambda b: b[0])
        labels = [-1] * len(self.points)
        for k, block in enumerate(self.blocks):
            for j in block:
                if labels[j] != -1:
                    raise ValueError(f"El punto {j} aparece en dos bloques")
                labels[j] = k
        if -1 in labels:
            raise ValueError("La partición no cubre todos los puntos")
        self.labels = labels

    @property
    def K(self) -> int:
        return len(self.points)

    @property
    def singletons(self) -> List[int]:
        return [b[0] for b in self.blocks if len(b) == 1]

    @property
    def non_singletons(self) -> List[List[int]]:
        return [b for b in self.blocks if len(b) > 1]

    @property
    def representatives(self) -> List[int]:
        return [b[0] for b in self.non_singletons]

    def representative(self, j: int) -> int:
        return self.blocks[self.labels[j]][0]

    def block_of(self, j: int) -> List[int]:
        return self.blocks[self.labels[j]]

    @property
    def support(self) -> List[int]:
        """Vértices que pueden llevar grado: singletons y representantes."""
        return sorted(self.singletons + self.representatives)

    @classmethod
    def from_labels(cls, points, labels: Sequence[int], L: float, eps: float,
                    s: Scaling) -> "Clustering":
        groups: Dict[int, List[int]] = {}
        for j, lab in enumerate(labels):
            groups.setdefault(int(lab), []).append(j)
        return cls(as_point_array(points, s.d), L, eps, s, list(groups.values()))


def build_clusters(points, L: float, eps: float, s: Scaling) -> Clustering:
    """Componentes conexas de la relación |x_i - x_j|_s <= L eps."""
    if not L > 0:
        raise ValueError(f"L debe ser positivo, se recibió {L}")
    if not 0 < eps < 1:
        raise ValueError(f"eps={eps} fuera de (0, 1)")
    pts = as_point_array(points, s.d)
    dist = pairwise_distances(pts, s)
    G = nx.Graph()
    G.add_nodes_from(range(len(pts)))
    close = np.argwhere(np.triu(dist <= L * eps, k=1))
    G.add_edges_from((int(i), int(j)) for i, j in close)
    blocks = [sorted(c) for c in nx.connected_components(G)]
    clustering = Clustering(pts, float(L), float(eps), s, blocks)
    logger.info(f"Agrupamiento: {len(clustering.singletons)} singletons, "
                f"{len(clustering.non_singletons)} clusters")
    return clustering


def choose_L(Lambda: float, C0: float, alpha: float) -> float:
    """Menor potencia de 2 con L^alpha > 4 C0 Lambda."""
    if not C0 > 0:
        raise ValueError(f"C0 debe ser positivo, se recibió {C0}")
    target = 4.0 * C0 * Lambda
    L = 1.0
    while not L ** alpha > target:
        L *= 2.0
    return L


def calibrate_c0(C: float, Lambda: float, alpha: float) -> float:
    """C0 = C^2 2^alpha Lambda^3 / 2 a partir de la constante de coeficientes."""
    return C ** 2 * 2.0 ** alpha * Lambda ** 3 / 2.0


# ==================== GRAFOS GENERALIZADOS ====================

class ClusterGraph:
    """Multigrafo sin lazos sobre los K puntos con valores R(e) = E[X_i X_j]."""

    def __init__(self, R: np.ndarray, edges: Optional[Dict[Tuple[int, int], int]] = None):
        self.R = np.asarray(R, dtype=float)
        self.graph = nx.Graph()
        self.graph.add_nodes_from(range(self.R.shape[0]))
        for (i, j), k in (edges or {}).items():
            self.add_edges(i, j, k)

    @property
    def K(self) -> int:
        return self.R.shape[0]

    def multiplicity(self, i: int, j: int) -> int:
        if self.graph.has_edge(i, j):
            return self.graph[i][j]['multiplicity']
        return 0

    def add_edges(self, i: int, j: int, k: int = 1):
        if i == j:
            raise ValueError(f"Lazo no permitido en el vértice {i}")
        if k < 0:
            raise ValueError("Multiplicidad negativa")
        if k == 0:
            return
        self.graph.add_edge(i, j, multiplicity=self.multiplicity(i, j) + k)

    def remove_edges(self, i: int, j: int, k: int = 1):
        current = self.multiplicity(i, j)
        if k > current:
            raise ValueError(f"No hay {k} aristas entre {i} y {j}")
        if current == k:
            self.graph.remove_edge(i, j)
        else:
            self.graph[i][j]['multiplicity'] = current - k

    def degree(self, v: int) -> int:
        return int(self.graph.degree(v, weight='multiplicity'))

    def degrees(self) -> Tuple[int, ...]:
        return tuple(self.degree(v) for v in range(self.K))

    @property
    def total_degree(self) -> int:
        return sum(self.degrees())

    def neighbors(self, v: int) -> List[int]:
        return sorted(self.graph.neighbors(v))

    def edges(self) -> Dict[Tuple[int, int], int]:
        return {(min(i, j), max(i, j)): d['multiplicity'] for i, j, d in self.graph.edges(data=True)}

    def value(self) -> float:
        return graph_value(self)

    def copy(self) -> "ClusterGraph":
        return ClusterGraph(self.R, self.edges())

    def __eq__(self, other):
        return isinstance(other, ClusterGraph) and self.edges() == other.edges()


def graph_value(graph: ClusterGraph) -> float:
    """prod_e R(e)^{E(e)}; el grafo vacío vale 1."""
    value = 1.0
    for (i, j), k in graph.edges().items():
        value *= graph.R[i, j] ** k
    return float(value)


def omega_star_member(graph: ClusterGraph, clustering: Clustering, m: int) -> Tuple[bool, List[str]]:
    violations = []
    for s in clustering.singletons:
        deg = graph.degree(s)
        if deg not in (m, m + 1):
            violations.append(f"condition 1: singleton {s} con grado {deg}")
    singles = set(clustering.singletons)
    for u in clustering.representatives:
        deg = graph.degree(u)
        if deg > m + 1:
            violations.append(f"condition 1: representante {u} con grado {deg}")
        if deg > 0:
            nbrs = graph.neighbors(u)
            if len(nbrs) != 1 or nbrs[0] not in singles:
                violations.append(f"condition 2: representante {u} unido a {nbrs}")
    support = set(clustering.support)
    for v in range(graph.K):
        if v not in support and graph.degree(v) > 0:
            violations.append(f"grado fuera del soporte: vértice {v}")
    return not violations, violations


# ==================== CERTIFICADOS ====================

@dataclass
class RewriteCertificate:
    kind: str
    vertices: Tuple[int, ...]
    factor: float
    value_before: float
    value_after: float
    degrees_before: Tuple[int, ...]
    degrees_after: Tuple[int, ...]
    worst_case_factor: Optional[float] = None

    @property
    def holds(self) -> bool:
        tol = CERTIFICATE_PARAMS['relative_tol']
        return self.value_before <= self.factor * self.value_after * (1.0 + tol)

    def describe(self) -> str:
        estado = "OK" if self.holds else "FALLA"
        return (f"{self.kind} en {self.vertices}: |antes|={self.value_before:.6e} "
                f"<= {self.factor:.6e} * |después|={self.value_after:.6e} [{estado}]")


class _Certifier:
    """Distancias y Lambda efectivo sobre los puntos reales."""

    def __init__(self, gaussian: GaussianVector, clustering: Clustering, alpha: float):
        self.clustering = clustering
        self.alpha = alpha
        self.eps = clustering.eps
        self.dist = pairwise_distances(clustering.points, clustering.scaling)
        self.Lambda = pairwise_lambda(gaussian, alpha, clustering.eps, clustering.scaling)
        self.gamma = 2.0 * clustering.scaling.quasi_triangle_constant
        self.L = clustering.L

    def decay(self, r: float) -> float:
        return (self.eps / (r + self.eps)) ** self.alpha

    def pair_move(self, v: int, i: int, i2: int) -> Tuple[float, float]:
        r = min(self.dist[v, i], self.dist[v, i2])
        factor = self.gamma ** self.alpha * self.Lambda ** 3 * self.decay(r)
        worst = self.gamma ** self.alpha * self.Lambda ** 3 / (self.L + 1) ** self.alpha
        return factor, worst

    def double_drop(self, v: int, w: int) -> Tuple[float, float]:
        factor = self.Lambda ** 2 * self.decay(self.dist[v, w]) ** 2
        return factor, self.Lambda ** 2 / (self.L + 1) ** (2 * self.alpha)

    def single_drop(self, v: int, w: int) -> Tuple[float, float]:
        factor = self.Lambda * self.decay(self.dist[v, w])
        return factor, self.Lambda / (self.L + 1) ** self.alpha

    def moved_edge(self, s: int, u: int, j: int) -> float:
        ratio = (self.dist[s, j] + self.eps) / (self.dist[s, u] + self.eps)
        return self.Lambda ** 2 * ratio ** self.alpha

    def added_edge(self, a: int, b: int) -> float:
        return self.Lambda / self.decay(self.dist[a, b])


def _emit(kind, vertices, factor, worst, before: ClusterGraph, after: ClusterGraph) -> RewriteCertificate:
    cert = RewriteCertificate(
        kind=kind, vertices=tuple(int(v) for v in vertices), factor=float(factor),
        value_before=before.value(), value_after=after.value(),
        degrees_before=before.degrees(), degrees_after=after.degrees(),
        worst_case_factor=None if worst is None else float(worst),
    )
    if not cert.holds:
        logger.warning(f"Certificado no verificado: {cert.describe()}")
    return cert


# ==================== REDUCCIÓN ====================

def _check_support(graph: ClusterGraph, clustering: Clustering):
    support = set(clustering.support)
    for v in range(graph.K):
        if v not in support and graph.degree(v) > 0:
            raise ValueError(f"Vértice {v} con grado {graph.degree(v)} fuera de singletons y representantes")


def _best_pair(graph: ClusterGraph, v: int) -> Tuple[int, int]:
    nbrs = graph.neighbors(v)
    best, best_value = None, -np.inf
    for a in range(len(nbrs)):
        for b in range(a + 1, len(nbrs)):
            value = graph.R[nbrs[a], nbrs[b]]
            if value > best_value:
                best, best_value = (nbrs[a], nbrs[b]), value
    return best


def _next_reduction(graph: ClusterGraph, clustering: Clustering, m: int):
    for v in clustering.support:
        if graph.degree(v) >= m + 2:
            if len(graph.neighbors(v)) >= 2:
                return 'reduce-case-1', v
            return 'reduce-case-2', v
    reps = clustering.representatives
    singles = set(clustering.singletons)
    for u in reps:
        if len(graph.neighbors(u)) >= 2:
            return 'reduce-a', u
    for u in reps:
        nbrs = graph.neighbors(u)
        if len(nbrs) == 1 and nbrs[0] not in singles:
            return 'reduce-b', u
    return None, None


def reduce_graph(graph: ClusterGraph, clustering: Clustering, m: int, gaussian: GaussianVector,
                 alpha: float) -> Tuple[ClusterGraph, List[RewriteCertificate]]:
    """Reescribe hasta Omega*; el grado total baja en cada paso."""
    _check_support(graph, clustering)
    certifier = _Certifier(gaussian, clustering, alpha)
    current = graph.copy()
    certificates: List[RewriteCertificate] = []
    budget = current.total_degree
    while True:
        kind, v = _next_reduction(current, clustering, m)
        if kind is None:
            break
        before = current.copy()
        if kind in ('reduce-case-1', 'reduce-a'):
            i, i2 = _best_pair(current, v)
            current.remove_edges(v, i)
            current.remove_edges(v, i2)
            current.add_edges(i, i2)
            factor, worst = certifier.pair_move(v, i, i2)
            vertices = (v, i, i2)
        elif kind == 'reduce-case-2':
            w = current.neighbors(v)[0]
            current.remove_edges(v, w, 2)
            factor, worst = certifier.double_drop(v, w)
            vertices = (v, w)
        else:
            w = current.neighbors(v)[0]
            current.remove_edges(v, w, 1)
            factor, worst = certifier.single_drop(v, w)
            vertices = (v, w)
        if current.total_degree >= before.total_degree:
            raise RuntimeError("La reducción no disminuyó el grado total")
        certificates.append(_emit(kind, vertices, factor, worst, before, current))
        if len(certificates) > budget:
            raise RuntimeError("La reducción no terminó dentro del grado inicial")
    logger.info(f"Reducción completada en {len(certificates)} pasos")
    return current, certificates


# ==================== REALCE ====================

def _enhance_pair(current: ClusterGraph, certifier: _Certifier, u: int, j: int, s: Optional[int],
                  ell: int, m: int, kind: str, certificates: List[RewriteCertificate]):
    before = current.copy()
    moved = (ell + 1) // 2
    factor = 1.0
    if moved:
        current.remove_edges(s, u, moved)
        current.add_edges(s, j, moved)
        factor *= certifier.moved_edge(s, u, j) ** moved
    added = m - ell // 2
    current.add_edges(u, j, added)
    factor *= certifier.added_edge(u, j) ** added
    if moved or added:
        certificates.append(_emit(kind, (u, j) if s is None else (u, j, s), factor, None, before, current))


def enhance_graph(graph: ClusterGraph, clustering: Clustering, m: int, gaussian: GaussianVector,
                  alpha: float) -> Tuple[ClusterGraph, List[RewriteCertificate]]:
    """Lleva cada vértice a grado m o m+1 sin tocar los singletons."""
    member, violations = omega_star_member(graph, clustering, m)
    if not member:
        raise ValueError(f"El grafo no pertenece a Omega*: {violations}")
    certifier = _Certifier(gaussian, clustering, alpha)
    current = graph.copy()
    certificates: List[RewriteCertificate] = []
    for block in clustering.non_singletons:
        u = block[0]
        ell = current.degree(u)
        s = current.neighbors(u)[0] if ell else None
        others = block[1:]
        if len(block) == 2:
            _enhance_pair(current, certifier, u, others[0], s, ell, m, 'enhance-case-1', certificates)
        elif len(block) == 3:
            i, j = others
            before = current.copy()
            k_side = (m + 1 - ell) // 2
            k_base = (m + ell) // 2
            current.add_edges(u, i, k_side)
            current.add_edges(u, j, k_side)
            current.add_edges(i, j, k_base)
            factor = (certifier.added_edge(u, i) ** k_side * certifier.added_edge(u, j) ** k_side
                      * certifier.added_edge(i, j) ** k_base)
            if k_side or k_base:
                certificates.append(_emit('enhance-case-2', (u, i, j), factor, None, before, current))
        else:
            cycle = others[:-1]
            mult = (m + 1) // 2
            before = current.copy()
            factor = 1.0
            for a, b in zip(cycle, cycle[1:] + cycle[:1]):
                current.add_edges(a, b, mult)
                factor *= certifier.added_edge(a, b) ** mult
            if mult:
                certificates.append(_emit('enhance-case-3', tuple(cycle), factor, None, before, current))
            _enhance_pair(current, certifier, u, others[-1], s, ell, m, 'enhance-case-1', certificates)
    for v in range(current.K):
        if current.degree(v) not in (m, m + 1):
            raise RuntimeError(f"Realce incompleto: vértice {v} con grado {current.degree(v)}")
    logger.info(f"Realce completado con {len(certificates)} certificados")
    return current, certificates


# ==================== TUBERÍA COMPLETA ====================

@dataclass
class PipelineResult:
    initial: ClusterGraph
    reduced: ClusterGraph
    enhanced: ClusterGraph
    certificates: List[RewriteCertificate]
    C_total: float
    rhs: float
    m: int

    @property
    def steps(self) -> int:
        return len(self.certificates)

    @property
    def degrees_ok(self) -> bool:
        return all(d in (self.m, self.m + 1) for d in self.enhanced.degrees())

    @property
    def composition_holds(self) -> bool:
        tol = CERTIFICATE_PARAMS['relative_tol']
        return self.initial.value() <= self.C_total * self.rhs * (1.0 + tol)

    @property
    def valid(self) -> bool:
        return all(c.holds for c in self.certificates) and self.degrees_ok and self.composition_holds


def run_pipeline(graph: ClusterGraph, clustering: Clustering, m: int, gaussian: GaussianVector,
                 alpha: float, rhs: Optional[float] = None) -> PipelineResult:
    """Reducción y realce con certificados; rhs se puede pasar ya calculado para el mismo (gaussian, m)."""
    if rhs is None:
        rhs = rhs_moment(gaussian, m)
    if all(d in (m, m + 1) for d in graph.degrees()):
        logger.info("El grafo ya está realzado; no se aplican pasos")
        return PipelineResult(graph, graph, graph, [], 1.0, rhs, m)
    reduced, reduce_certs = reduce_graph(graph, clustering, m, gaussian, alpha)
    enhanced, enhance_certs = enhance_graph(reduced, clustering, m, gaussian, alpha)
    certificates = reduce_certs + enhance_certs
    C_total = float(np.prod([c.factor for c in certificates])) if certificates else 1.0
    return PipelineResult(graph, reduced, enhanced, certificates, C_total, rhs, m)


def no_singleton_bound(gaussian: GaussianVector, clustering: Clustering, m: int) -> float:
    """Producto cíclico prod R(x_j, x_{j+1})^{floor((m+1)/2)} <= rhs_moment."""
    if clustering.singletons:
        raise ValueError("El agrupamiento tiene singletons")
    K = gaussian.K
    mult = (m + 1) // 2
    cycle = ClusterGraph(gaussian.cov)
    for j in range(K):
        cycle.add_edges(j, (j + 1) % K, mult)
    bound = cycle.value()
    rhs = rhs_moment(gaussian, m)
    if rhs < bound * (1.0 - CERTIFICATE_PARAMS['relative_tol']):
        raise RuntimeError(f"Cota sin singletons violada: {rhs:.6e} < {bound:.6e}")
    return bound


def representative_bound(gaussian: GaussianVector, clustering: Clustering, n: Sequence[int],
                         alpha: float) -> Tuple[float, float, float]:
    """E prod_u X_u^{<>n_u} <= C^{|n|} E prod_u X_{u*}^{<>|n_u|} con C = gamma^{alpha/2} Lambda."""
    n = tuple(int(v) for v in n)
    lhs = wick_moment(gaussian.cov, n, blocks=clustering.labels)
    reps = [b[0] for b in clustering.blocks]
    rep_n = tuple(sum(n[j] for j in b) for b in clustering.blocks)
    rhs = wick_moment(gaussian.subvector(reps).cov, rep_n)
    dist = pairwise_distances(clustering.points, clustering.scaling)
    gamma = 1.0
    for a in range(gaussian.K):
        for b in range(a + 1, gaussian.K):
            if clustering.labels[a] != clustering.labels[b]:
                ua, ub = clustering.representative(a), clustering.representative(b)
                gamma = max(gamma, (dist[ua, ub] + clustering.eps) / (dist[a, b] + clustering.eps))
    Lambda = pairwise_lambda(gaussian, alpha, clustering.eps, clustering.scaling)
    return lhs, rhs, gamma ** (alpha / 2) * Lambda


def random_admissible_graph(clustering: Clustering, m: int, rng: np.random.Generator,
                            R: np.ndarray, max_extra: Optional[int] = None) -> ClusterGraph:
    """Grafo aleatorio con grado sólo en singletons y representantes, singletons con grado >= m."""
    max_extra = CERTIFICATE_PARAMS['max_extra_degree'] if max_extra is None else max_extra
    graph = ClusterGraph(R)
    support = clustering.support
    if len(support) < 2:
        return graph
    for a in range(len(support)):
        for b in range(a + 1, len(support)):
            graph.add_edges(support[a], support[b], int(rng.integers(0, 2)))
    for s in clustering.singletons:
        target = m + int(rng.integers(0, max_extra + 1))
        while graph.degree(s) < target:
            partner = support[int(rng.integers(0, len(support)))]
            if partner != s:
                graph.add_edges(s, partner)
    return graph


# ==================== ARCHIVOS DE GRAFOS ====================

@dataclass
class GraphFile:
    K: int
    m: int
    L: float
    eps: float
    points: np.ndarray
    labels: Optional[List[int]]
    edges: Dict[Tuple[int, int], int]


def _parse_header_value(key: str, raw: str):
    if key in ('K', 'm'):
        return int(raw)
    if key in ('L', 'eps'):
        return float(raw)
    if key == 'points':
        return [[float(c) for c in p.split(',')] for p in raw.split(';') if p.strip()]
    if key == 'clusters':
        return [int(c) for c in raw.split()]
    raise ValueError(f"Clave de cabecera desconocida: {key}")


def read_graph_file(path) -> GraphFile:
    """Cabecera 'clave = valor' seguida de líneas 'i j multiplicidad'."""
    header: Dict[str, object] = {}
    edges: Dict[Tuple[int, int], int] = {}
    text = Path(path).read_text(encoding='utf-8')
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        try:
            if '=' in line:
                key, value = (part.strip() for part in line.split('=', 1))
                header[key] = _parse_header_value(key, value)
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError("se esperaban tres enteros 'i j multiplicidad'")
            i, j, k = (int(p) for p in parts)
        except ValueError as e:
            raise ValueError(f"{path}:{lineno}: línea mal formada ({e})") from e
        if i == j or k < 0:
            raise ValueError(f"{path}:{lineno}: arista inválida {i} {j} {k}")
        key = (min(i, j), max(i, j))
        edges[key] = edges.get(key, 0) + k
    for required in ('K', 'm', 'L', 'eps', 'points'):
        if required not in header:
            raise ValueError(f"{path}: falta la clave de cabecera '{required}'")
    K = header['K']
    points = np.asarray(header['points'], dtype=float)
    if len(points) != K:
        raise ValueError(f"{path}: {len(points)} puntos para K={K}")
    labels = header.get('clusters')
    if labels is not None and len(labels) != K:
        raise ValueError(f"{path}: {len(labels)} etiquetas de cluster para K={K}")
    if any(not (0 <= v < K) for e in edges for v in e):
        raise ValueError(f"{path}: arista con vértice fuera de [0, {K})")
    if header['m'] < 0:
        raise ValueError(f"{path}: m debe ser >= 0")
    return GraphFile(K, header['m'], header['L'], header['eps'], points, labels, edges)


def write_graph_file(path, graph: ClusterGraph, clustering: Clustering, m: int):
    lines = [
        f"K = {graph.K}",
        f"m = {m}",
        f"L = {clustering.L!r}",
        f"eps = {clustering.eps!r}",
        "points = " + "; ".join(", ".join(repr(float(c)) for c in p) for p in clustering.points),
        "clusters = " + " ".join(str(lab) for lab in clustering.labels),
    ]
    lines += [f"{i} {j} {k}" for (i, j), k in sorted(graph.edges().items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding='utf-8')
