"""
Quasisymmetries between finite spaces, the quasi-isometries they induce on
fillings, and transport of admissible weight functions along them.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse.csgraph import dijkstra
from sklearn.neighbors import KDTree

from boundary_modulus import edge_to_vertex_sum
from config import Config
from errors import InvalidArgumentError, PreconditionViolation
from filling import Filling, sample_pairs
from metric_core import MetricSpace, sample_triples

logger = logging.getLogger(__name__)

MAP_FORMAT = '# hyperfill-map v1'

# hop-distance queries are answered in chunks of sources
_CHUNK = 256


def _pair_dist(space: MetricSpace, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return space.to_metric(np.linalg.norm(space.coords[a] - space.coords[b], axis=1))


@dataclass
class QuasiSymmetry:
    """
    Point bijection with a distortion gauge. kind 'identity': eta(t) = t;
    'exponent' (a,): eta(t) = t^a; 'power' (C, a): eta(t) = C max(t^a, t^(1/a)).
    """

    source: MetricSpace
    target: MetricSpace
    forward: np.ndarray
    backward: np.ndarray
    kind: str = 'identity'
    params: Tuple[float, ...] = ()

    def __post_init__(self):
        self.forward = np.asarray(self.forward, dtype=int)
        self.backward = np.asarray(self.backward, dtype=int)
        n = len(self.source)
        if len(self.target) != n or self.forward.shape != (n,) or self.backward.shape != (n,):
            raise InvalidArgumentError("A quasisymmetry must be a bijection between equal-size spaces")
        if not np.array_equal(self.backward[self.forward], np.arange(n)):
            raise InvalidArgumentError("forward and backward maps are not inverse to each other")
        if self.kind not in ('identity', 'exponent', 'power'):
            raise InvalidArgumentError(f"Unknown gauge kind '{self.kind}'")

    def eta(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == 'identity':
            return t
        if self.kind == 'exponent':
            return t ** self.params[0]
        big_c, a = self.params
        return big_c * np.maximum(t ** a, t ** (1.0 / a))

    def inverse(self) -> 'QuasiSymmetry':
        if self.kind == 'exponent':
            kind, params = 'exponent', (1.0 / self.params[0],)
        elif self.kind == 'power':
            # this power gauge dominates 1 / eta^-1(1 / t)
            big_c, a = self.params
            e = max(a, 1.0 / a) if big_c >= 1 else min(a, 1.0 / a)
            kind, params = 'power', (big_c ** e, a)
        else:
            kind, params = 'identity', ()
        return QuasiSymmetry(self.target, self.source, self.backward, self.forward, kind, params)

    def eta_test(self, count: int = 1000, seed: int = 0, tol: float = 1e-9) -> Dict:
        """
        |z - z'| <= t |z - z''| must give |phi z - phi z'| <= eta(t) |phi z - phi z''|
        on sampled triples of distinct points.
        """
        triples = sample_triples(len(self.source), count, seed)
        triples = triples[(triples[:, 0] != triples[:, 1]) & (triples[:, 0] != triples[:, 2])
                          & (triples[:, 1] != triples[:, 2])]
        z, z1, z2 = triples.T
        t = _pair_dist(self.source, z, z1) / _pair_dist(self.source, z, z2)
        fz, fz1, fz2 = self.forward[z], self.forward[z1], self.forward[z2]
        lhs = _pair_dist(self.target, fz, fz1)
        rhs = self.eta(t) * _pair_dist(self.target, fz, fz2)
        excess = lhs / rhs - 1.0
        violations = int(np.count_nonzero(excess > tol))
        return {'triples': len(triples), 'violations': violations,
                'worst': float(excess.max()) if len(excess) else 0.0}


def snowflake_map(space: MetricSpace, alpha: float) -> Tuple[MetricSpace, QuasiSymmetry]:
    """(Z, d^alpha) with the identity point map, eta(t) = t^alpha"""
    target = space.snowflaked(alpha)
    ids = np.arange(len(space))
    return target, QuasiSymmetry(space, target, ids, ids, 'exponent', (alpha,))


def from_pair_table(source: MetricSpace, target: MetricSpace, pairs: np.ndarray,
                    big_c: float, a: float, count: int = 1000, seed: int = 0) -> QuasiSymmetry:
    """User map from (source id, target id) rows; rejected unless the power gauge holds"""
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    n = len(source)
    if len(pairs) != n or sorted(pairs[:, 0].tolist()) != list(range(n)) \
            or sorted(pairs[:, 1].tolist()) != list(range(len(target))):
        raise InvalidArgumentError("The pair table must list every point of both spaces exactly once")
    forward = np.empty(n, dtype=int)
    forward[pairs[:, 0]] = pairs[:, 1]
    backward = np.empty(n, dtype=int)
    backward[pairs[:, 1]] = pairs[:, 0]
    phi = QuasiSymmetry(source, target, forward, backward, 'power', (float(big_c), float(a)))
    result = phi.eta_test(count, seed)
    if result['violations']:
        raise PreconditionViolation(
            f"Point map breaks eta(t) = {big_c:g} max(t^{a:g}, t^(1/{a:g})) on "
            f"{result['violations']} of {result['triples']} triples")
    return phi


def save_pair_table(phi: QuasiSymmetry, path: str) -> str:
    with open(path, 'w') as fh:
        fh.write(MAP_FORMAT + '\n')
        for i, j in enumerate(phi.forward):
            fh.write(f"{i} {j}\n")
    return path


def load_pair_table(path: str) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise InvalidArgumentError(f"{path}:{number}: expected two point ids")
            rows.append((int(parts[0]), int(parts[1])))
    return np.array(rows, dtype=int).reshape(-1, 2)


# ---- induced quasi-isometry ----------------------------------------------

@dataclass
class QiMap:
    """Vertex map between fillings with fitted constants of the QI inequality"""

    source: Filling
    target: Filling
    vertex_map: np.ndarray
    c: float = 0.0
    C: float = 1.0
    D: int = 0
    root_fallbacks: int = 0
    extras: Dict = field(default_factory=dict)

    def __call__(self, v):
        return self.vertex_map[v]

    def constants(self) -> Dict:
        return {'c': self.c, 'C': self.C, 'D': self.D, 'root_fallbacks': self.root_fallbacks, **self.extras}


def hop_distances(f: Filling, sources: np.ndarray, targets: np.ndarray,
                  limit: Optional[int] = None) -> np.ndarray:
    """Hop distance from sources[k] to targets[k]; inf beyond `limit` hops"""
    sources = np.asarray(sources, dtype=int)
    targets = np.asarray(targets, dtype=int)
    out = np.empty(len(sources))
    unique, inverse = np.unique(sources, return_inverse=True)
    bound = np.inf if limit is None else limit + 0.5
    for start in range(0, len(unique), _CHUNK):
        block = unique[start:start + _CHUNK]
        dist = dijkstra(f.adjacency, directed=False, unweighted=True, indices=block, limit=bound)
        rows = np.flatnonzero((inverse >= start) & (inverse < start + len(block)))
        out[rows] = dist[inverse[rows] - start, targets[rows]]
    return out


def _containing_vertex(target: Filling, trees, points: np.ndarray, center: int, top_level: int) -> int:
    """
    Deepest target vertex, at most top_level deep, whose ball holds every
    point; nearest center to `center` on ties, then smallest id.
    """
    space = target.space
    anchor = space.coords[points[0]:points[0] + 1]
    for level in range(min(top_level, target.max_level), -1, -1):
        r = target.radius_at(level)
        ids = target.level_vertices(level)
        found = np.sort(trees[level].query_radius(anchor, r=space.query_radius(r))[0])
        best, best_gap = None, np.inf
        for k in found:
            v = int(ids[k])
            reach = space.distances_from(int(target.vertex_center[v]), points).max()
            if reach <= r * (1 + 1e-12) + Config.BALL_SLACK:
                gap = space.dist(int(target.vertex_center[v]), center)
                if gap < best_gap:
                    best, best_gap = v, gap
        if best is not None:
            return best
    return target.root


def qi_extension(phi: QuasiSymmetry, X: Filling, Y: Filling, pair_count: int = 400,
                 seed: int = 0) -> QiMap:
    """
    F(x) = deepest Y vertex whose ball holds phi(B_x), no deeper than x when
    that image is all of Y; the root goes to the root. Constants: D is the
    largest hop distance between images of adjacent vertices, C = max(D, 1),
    and c the additive slack making |Fx - Fx'| >= |x - x'| / C - c on
    sampled pairs.
    """
    if len(X.space) != len(phi.source) or len(Y.space) != len(phi.target):
        raise InvalidArgumentError("Fillings do not sit over the map's spaces")
    trees = [KDTree(Y.space.coords[Y.vertex_center[Y.level_vertices(k)]])
             for k in range(Y.max_level + 1)]
    vertex_map = np.empty(X.n_vertices, dtype=int)
    for x in range(X.n_vertices):
        image = phi.forward[X.ball_points(x)]
        # an image covering all of Y says nothing about depth; stay at x's level
        top = int(X.vertex_level[x]) if len(np.unique(image)) == len(Y.space) else Y.max_level
        center = int(phi.forward[X.vertex_center[x]])
        vertex_map[x] = _containing_vertex(Y, trees, image, center, top)
    vertex_map[X.root] = Y.root
    fallbacks = int(np.count_nonzero((vertex_map == Y.root) & (np.arange(X.n_vertices) != X.root)))
    if fallbacks:
        logger.info(f"QI extension: {fallbacks} vertices fall back to the root of {Y.space.name}")

    adjacent = hop_distances(Y, vertex_map[X.edges[:, 0]], vertex_map[X.edges[:, 1]])
    D = int(adjacent.max()) if len(adjacent) else 0
    big_c = float(max(D, 1))
    pairs = sample_pairs(X, pair_count, seed)
    d_x = hop_distances(X, pairs[:, 0], pairs[:, 1])
    d_y = hop_distances(Y, vertex_map[pairs[:, 0]], vertex_map[pairs[:, 1]])
    c = float(max(0.0, np.max(d_x / big_c - d_y))) if len(pairs) else 0.0
    qi = QiMap(X, Y, vertex_map, c=c, C=big_c, D=D, root_fallbacks=fallbacks)
    logger.info(f"QI {X.space.name} -> {Y.space.name}: C={big_c:g}, c={c:.3g}, D={D}")
    return qi


def qi_sandwich(F: QiMap, G: QiMap, sample: Optional[Sequence[int]] = None) -> int:
    """max |G(F(x)) - x| over the sample (all vertices by default)"""
    if F.target is not G.source or G.target is not F.source:
        raise InvalidArgumentError("Sandwich needs F: X -> Y and G: Y -> X")
    xs = np.arange(F.source.n_vertices) if sample is None else np.asarray(sample, dtype=int)
    back = G.vertex_map[F.vertex_map[xs]]
    bound = int(hop_distances(F.source, xs, back).max()) if len(xs) else 0
    F.extras['sandwich'] = bound
    return bound


# ---- transport -----------------------------------------------------------

def transport_edge_function(tau: np.ndarray, G: QiMap, D: Optional[int] = None) -> np.ndarray:
    """
    sigma(e') = sum_{|x - G(e'+)| <= D} sum_{e ~ x} tau(e) + the same at e'-,
    an edge function on the domain of G from an edge function on its range.
    """
    X, Y = G.target, G.source
    D = G.D + 1 if D is None else int(D)
    if D < G.D:
        raise InvalidArgumentError(f"Transport radius {D} is below the adjacency bound {G.D}")
    fv = edge_to_vertex_sum(tau, X)
    images = np.unique(G.vertex_map)
    near_sum = np.zeros(X.n_vertices)
    for start in range(0, len(images), _CHUNK):
        block = images[start:start + _CHUNK]
        dist = dijkstra(X.adjacency, directed=False, unweighted=True, indices=block, limit=D + 0.5)
        near_sum[block] = np.where(np.isfinite(dist), fv[None, :], 0.0).sum(axis=1)
    ends = G.vertex_map[Y.edges]
    return near_sum[ends[:, 0]] + near_sum[ends[:, 1]]


def transport_vertex_function(tau: np.ndarray, G: QiMap) -> np.ndarray:
    """sigma(y) = tau(G(y))"""
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (G.target.n_vertices,):
        raise InvalidArgumentError(f"Expected {G.target.n_vertices} vertex values, got shape {tau.shape}")
    return tau[G.vertex_map]
