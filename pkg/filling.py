"""
Finite-depth hyperbolic filling of a MetricSpace.

Vertices are balls B(p, 2 s^-k) over maximal s^-k separated nets P_k; two
distinct vertices are joined when their levels differ by at most one and the
closed balls meet. Level k+1 nets are seeded with the level-k centers, so the
nets are nested and truncating a filling equals building it shallower.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, asdict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path
from sklearn.neighbors import KDTree

from config import Config
from errors import (DepthError, EmptyAnchorError, InternalError, InvalidArgumentError,
                    ComparabilityViolation, ResourceError)
from metric_core import (MetricSpace, Region, euclidean_diameter, maximal_separated_net,
                         seeded_order)

logger = logging.getLogger(__name__)

FILLING_FORMAT = 'hyperfill-filling v1'


@dataclass(frozen=True)
class Vertex:
    id: int
    level: int
    center: int
    radius: float


class Filling:
    """Leveled ball graph X = (V, E) with root O = vertex 0"""

    def __init__(self, space: MetricSpace, s: float, max_level: int,
                 level_centers: List[np.ndarray], edges: np.ndarray):
        self.space = space
        self.s = float(s)
        self.max_level = int(max_level)
        self.level_centers = [np.asarray(c, dtype=int) for c in level_centers]
        counts = [len(c) for c in self.level_centers]
        self.level_offsets = np.concatenate([[0], np.cumsum(counts)]).astype(int)
        self.vertex_level = np.repeat(np.arange(len(counts)), counts).astype(int)
        self.vertex_center = (np.concatenate(self.level_centers) if counts
                              else np.zeros(0, dtype=int)).astype(int)
        self.vertex_radius = 2.0 * self.s ** (-self.vertex_level.astype(float))
        self.edges = np.asarray(edges, dtype=int).reshape(-1, 2)
        n = len(self.vertex_level)
        data = np.ones(2 * len(self.edges))
        rows = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        cols = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        self.adjacency = csr_matrix((data, (rows, cols)), shape=(n, n))
        self.edge_index: Dict[Tuple[int, int], int] = {
            (int(a), int(b)): i for i, (a, b) in enumerate(self.edges)}
        self._bfs_cache: Dict[int, np.ndarray] = {}
        self._ball_cache: Dict[Tuple[int, float], List[np.ndarray]] = {}

    # ---- basic accessors -------------------------------------------------

    @property
    def root(self) -> int:
        return 0

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_level)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def vertex(self, v: int) -> Vertex:
        return Vertex(int(v), int(self.vertex_level[v]), int(self.vertex_center[v]),
                      float(self.vertex_radius[v]))

    @property
    def vertices(self) -> List[Vertex]:
        return [self.vertex(v) for v in range(self.n_vertices)]

    def level_vertices(self, level: int) -> np.ndarray:
        if not 0 <= level <= self.max_level:
            raise DepthError(f"Level {level} outside 0..{self.max_level}")
        return np.arange(self.level_offsets[level], self.level_offsets[level + 1])

    def radius_at(self, level: int) -> float:
        return 2.0 * self.s ** (-level)

    def neighbors(self, v: int) -> np.ndarray:
        row = self.adjacency
        return row.indices[row.indptr[v]:row.indptr[v + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    def edge_id(self, a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        return self.edge_index[key]

    def incident_edges(self, v: int) -> np.ndarray:
        return np.array([self.edge_id(v, w) for w in self.neighbors(v)], dtype=int)

    # ---- balls -----------------------------------------------------------

    def ball_points(self, v: int, factor: float = 1.0) -> np.ndarray:
        """Space points of factor * B_v"""
        return self.level_balls(int(self.vertex_level[v]), factor)[v - self.level_offsets[self.vertex_level[v]]]

    def level_balls(self, level: int, factor: float = 1.0) -> List[np.ndarray]:
        key = (level, float(factor))
        if key not in self._ball_cache:
            ids = self.level_vertices(level)
            self._ball_cache[key] = self.space.balls(self.vertex_center[ids],
                                                     factor * self.radius_at(level))
        return self._ball_cache[key]

    def covers_level(self, level: int) -> bool:
        """Every space point lies in some ball of V_level"""
        centers = self.vertex_center[self.level_vertices(level)]
        tree = KDTree(self.space.coords[centers])
        dist, _ = tree.query(self.space.coords, k=1)
        worst = float(self.space.to_metric(dist.max()))
        return worst <= self.radius_at(level) + Config.BALL_SLACK

    # ---- graph metric ----------------------------------------------------

    def bfs(self, v: int) -> np.ndarray:
        """Hop distances from v to every vertex (inf when unreachable)"""
        if v not in self._bfs_cache:
            self._bfs_cache[v] = shortest_path(self.adjacency, directed=False,
                                               unweighted=True, indices=v)
        return self._bfs_cache[v]

    def is_connected(self) -> bool:
        n_components, _ = connected_components(self.adjacency, directed=False)
        return n_components == 1

    def truncated(self, depth: int) -> 'Filling':
        """The filling restricted to levels 0..depth"""
        if not 0 <= depth <= self.max_level:
            raise DepthError(f"Cannot truncate a depth-{self.max_level} filling to {depth}")
        keep = self.level_offsets[depth + 1]
        mask = (self.edges[:, 0] < keep) & (self.edges[:, 1] < keep)
        return Filling(self.space, self.s, depth, self.level_centers[:depth + 1], self.edges[mask])

    def growth_table(self, c_q: float) -> List[Dict]:
        """Level counts against the packing bound (2 s^k)^Q / c_Q"""
        q = self.space.q_exponent
        rows = []
        for level in range(self.max_level + 1):
            count = int(self.level_offsets[level + 1] - self.level_offsets[level])
            bound = (2.0 * self.s ** level) ** q / c_q
            rows.append({'level': level, 'count': count, 'bound': bound, 'ratio': count / bound})
            logger.debug(f"Level {level}: {count} vertices, packing bound {bound:.1f}")
        return rows

    def cache_key(self) -> str:
        return filling_key(self.space, self.s, self.max_level)

    # ---- adjacency text format -------------------------------------------

    def to_text(self, path: str) -> str:
        with open(path, 'w') as fh:
            fh.write(f"# {FILLING_FORMAT}\n")
            fh.write(f"s {self.s!r}\nmax_level {self.max_level}\nspace {self.space.content_hash()}\n")
            fh.write(f"vertices {self.n_vertices}\n")
            for v in range(self.n_vertices):
                fh.write(f"v {v} {self.vertex_level[v]} {self.vertex_center[v]}\n")
            fh.write(f"edges {self.n_edges}\n")
            for a, b in self.edges:
                fh.write(f"e {a} {b}\n")
        return path

    @classmethod
    def from_text(cls, path: str, space: MetricSpace) -> 'Filling':
        with open(path) as fh:
            lines = [line.split() for line in fh if line.strip()]
        if ' '.join(lines[0]) != f"# {FILLING_FORMAT}":
            raise InvalidArgumentError(f"{path} is not a {FILLING_FORMAT} file")
        header = {parts[0]: parts[1] for parts in lines[1:4]}
        if header['space'] != space.content_hash():
            raise InvalidArgumentError(f"{path} was built over a different space")
        max_level = int(header['max_level'])
        records = [parts for parts in lines if parts[0] in ('v', 'e')]
        levels = [[] for _ in range(max_level + 1)]
        edges = []
        for parts in records:
            if parts[0] == 'v':
                levels[int(parts[2])].append(int(parts[3]))
            else:
                edges.append((int(parts[1]), int(parts[2])))
        return cls(space, float(header['s']), max_level, [np.array(c) for c in levels],
                   np.array(edges, dtype=int).reshape(-1, 2))


def filling_key(space: MetricSpace, s: float, depth: int) -> str:
    return hashlib.sha256(f"{space.content_hash()}|{float(s)!r}|{int(depth)}".encode()).hexdigest()[:20]


def _pairs_within(space: MetricSpace, centers_a: np.ndarray, centers_b: np.ndarray,
                  radius: float) -> np.ndarray:
    """Index pairs (i, j) into (centers_a, centers_b) with center distance <= radius"""
    if len(centers_a) == 0 or len(centers_b) == 0:
        return np.zeros((0, 2), dtype=int)
    tree = KDTree(space.coords[centers_b])
    found = tree.query_radius(space.coords[centers_a], r=space.query_radius(radius))
    counts = np.array([len(ix) for ix in found])
    rows = np.repeat(np.arange(len(centers_a)), counts)
    cols = np.concatenate(found).astype(int)
    return np.column_stack([rows, cols])


def build_filling(space: MetricSpace, s: Optional[float] = None, max_level: int = 4,
                  max_vertices: Optional[int] = None) -> Filling:
    """Build the hyperbolic filling of `space` with parameter s down to max_level"""
    s = Config.FILLING_S if s is None else float(s)
    max_vertices = Config.MAX_VERTICES if max_vertices is None else max_vertices
    if not (1 < s <= 10):
        raise InvalidArgumentError(f"Filling parameter s must lie in (1, 10], got {s}")
    if not isinstance(max_level, (int, np.integer)) or max_level < 0:
        raise InvalidArgumentError(f"max_level must be a nonnegative integer, got {max_level}")
    if max_level > Config.MAX_LEVEL:
        raise ResourceError(f"max_level {max_level} exceeds the configured cap {Config.MAX_LEVEL}")
    if space.diameter >= 1:
        raise InvalidArgumentError(f"Space diameter {space.diameter:.6g} must be < 1")

    level_centers = [maximal_separated_net(space, 1.0, level=0).members]
    total = 1
    for level in range(1, max_level + 1):
        delta = s ** (-level)
        if delta < space.mesh:
            logger.debug(f"Level {level} separation {delta:.3g} is below the mesh {space.mesh:.3g}")
        order = seeded_order(len(space), level_centers[-1])
        net = maximal_separated_net(space, delta, order=order, level=level)
        total += len(net)
        if total > max_vertices:
            raise ResourceError(
                f"Filling of {space.name} at level {level} needs more than {max_vertices} vertices")
        level_centers.append(net.members)

    offsets = np.concatenate([[0], np.cumsum([len(c) for c in level_centers])])
    edges = []
    for level, centers in enumerate(level_centers):
        r = 2.0 * s ** (-level)
        same = _pairs_within(space, centers, centers, 2 * r)
        same = same[same[:, 0] < same[:, 1]]
        edges.append(same + offsets[level])
        if level < max_level:
            r_next = 2.0 * s ** (-(level + 1))
            cross = _pairs_within(space, centers, level_centers[level + 1], r + r_next)
            edges.append(np.column_stack([cross[:, 0] + offsets[level],
                                          cross[:, 1] + offsets[level + 1]]))
    edges = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=int)
    # parent and child can share a center point
    edges = edges[edges[:, 0] != edges[:, 1]]
    edges = np.unique(np.sort(edges, axis=1), axis=0)

    filling = Filling(space, s, max_level, level_centers, edges)
    if not filling.is_connected():
        raise InternalError(f"Filling of {space.name} is disconnected")
    logger.info(f"Built filling of {space.name}: s={s:g}, depth {max_level}, "
                f"{filling.n_vertices} vertices, {filling.n_edges} edges")
    return filling


# ---- graph metric queries ------------------------------------------------

def graph_distance(f: Filling, v: int, w: int) -> int:
    d = f.bfs(v)[w]
    if not np.isfinite(d):
        raise InternalError(f"Vertices {v} and {w} are disconnected")
    return int(d)


def gromov_product(f: Filling, v: int, w: int) -> float:
    from_root = f.bfs(f.root)
    return 0.5 * (from_root[v] + from_root[w] - graph_distance(f, v, w))


def sample_pairs(f: Filling, count: int, seed: int = 0, min_level: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    pool = np.flatnonzero(f.vertex_level >= min_level)
    return pool[rng.integers(0, len(pool), size=(count, 2))]


def sample_triples(f: Filling, count: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, f.n_vertices, size=(count, 3))


@dataclass
class ComparabilityReport:
    pairs_checked: int
    upper_bound: float
    ratio_min: float
    ratio_max: float
    comparability_constant: float
    degenerate_pairs: int = 0

    @property
    def spread(self) -> float:
        return self.ratio_max / self.ratio_min if self.ratio_min > 0 else math.inf

    def hyperbolicity_delta(self, s: float) -> float:
        """delta = log_s(2 D) with D the spread of the measured ratios"""
        return math.log(2.0 * self.spread, s)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['spread'] = self.spread
        return data


def union_diameter(f: Filling, v: int, w: int) -> float:
    points = np.union1d(f.ball_points(v), f.ball_points(w))
    return float(f.space.to_metric(euclidean_diameter(f.space.coords[points], hull_above=64)))


def check_gromov_comparability(f: Filling, sample: Iterable[Tuple[int, int]]) -> ComparabilityReport:
    """
    Check diam(B_v u B_w) <= 8s/(s-1) s^-(v,w) on every sampled pair and record
    the range of diam / s^-(v,w).
    """
    pairs = [tuple(int(x) for x in pair) for pair in sample]
    if not pairs:
        raise InvalidArgumentError("Comparability check needs a nonempty pair sample")
    bound = 8.0 * f.s / (f.s - 1.0)
    ratio_min, ratio_max, degenerate = math.inf, 0.0, 0
    for v, w in dict.fromkeys(pairs):
        scale = f.s ** (-gromov_product(f, v, w))
        ratio = union_diameter(f, v, w) / scale
        if ratio > bound * (1 + 1e-9):
            raise ComparabilityViolation(
                f"diam(B_{v} u B_{w}) / s^-(v,w) = {ratio:.6g} exceeds {bound:.6g}", pair=(v, w))
        ratio_max = max(ratio_max, ratio)
        if ratio > 0:
            ratio_min = min(ratio_min, ratio)
        else:
            degenerate += 1
    if ratio_min == math.inf:
        ratio_min = 0.0
    constant = max(ratio_max, 1.0 / ratio_min) if ratio_min > 0 else math.inf
    report = ComparabilityReport(len(pairs), bound, ratio_min, ratio_max, constant, degenerate)
    logger.info(f"Gromov comparability over {len(pairs)} pairs: ratios in "
                f"[{ratio_min:.4g}, {ratio_max:.4g}], bound {bound:.4g}")
    return report


def hyperbolicity_witness(f: Filling, triples: Iterable[Sequence[int]],
                          delta: float) -> Optional[Tuple[int, int, int]]:
    """First triple (v, w, x) with (v,w) < min((v,x), (x,w)) - delta, or None"""
    if delta < 0:
        raise InvalidArgumentError(f"delta must be nonnegative, got {delta}")
    for v, w, x in triples:
        v, w, x = int(v), int(w), int(x)
        lhs = gromov_product(f, v, w)
        rhs = min(gromov_product(f, v, x), gromov_product(f, x, w)) - delta
        if lhs < rhs - 1e-12:
            return v, w, x
    return None


def check_hyperbolicity(f: Filling, triples: Iterable[Sequence[int]], delta: float) -> bool:
    witness = hyperbolicity_witness(f, triples, delta)
    if witness is not None:
        logger.debug(f"Hyperbolicity fails at delta={delta:.4g} on triple {witness}")
    return witness is None


def max_valence(f: Filling) -> int:
    if f.n_edges == 0:
        return 0
    return int(f.degrees().max())


def anchor_vertices(f: Filling, target: Union[Region, np.ndarray], level: int,
                    mode: str = 'open') -> np.ndarray:
    """
    Level-`level` vertices attached to a boundary set.

    mode='open' keeps v with B_v inside the target; mode='continuum' keeps v
    whose half ball (1/2) B_v meets the target.
    """
    mask = target.mask(f.space) if isinstance(target, Region) else np.asarray(target, dtype=bool)
    if level > f.max_level:
        raise DepthError(f"Anchor level {level} exceeds the filling depth {f.max_level}")
    ids = f.level_vertices(level)
    if mode == 'open':
        keep = [v for v, ball in zip(ids, f.level_balls(level)) if mask[ball].all()]
    elif mode == 'continuum':
        keep = [v for v, ball in zip(ids, f.level_balls(level, 0.5)) if mask[ball].any()]
    else:
        raise InvalidArgumentError(f"Unknown anchor mode '{mode}'")
    if not keep:
        raise EmptyAnchorError(f"No level-{level} anchors for the target in {mode} mode")
    return np.array(keep, dtype=int)


def descending_chain(f: Filling, point: int, to_level: Optional[int] = None) -> List[int]:
    """
    Nontangential witness: for each level the vertex whose center is nearest
    to `point`; consecutive members are adjacent since centers lie within the
    covering radius.
    """
    to_level = f.max_level if to_level is None else to_level
    chain = []
    for level in range(to_level + 1):
        ids = f.level_vertices(level)
        d = f.space.distances_from(point, f.vertex_center[ids])
        chain.append(int(ids[int(np.argmin(d))]))
    return chain


def level_ball_sum(f: Filling, values: np.ndarray, level: int, factor: float = 1.0,
                   coords: Optional[np.ndarray] = None) -> np.ndarray:
    """
    sum_{v in V_level} values[v] * chi_{factor B_v}, evaluated at the space
    points or at arbitrary coordinates.
    """
    ids = f.level_vertices(level)
    weights = np.asarray(values, dtype=float)[ids]
    live = np.flatnonzero(weights != 0)
    targets = f.space.coords if coords is None else np.atleast_2d(np.asarray(coords, dtype=float))
    total = np.zeros(len(targets))
    if live.size == 0:
        return total
    centers = f.space.coords[f.vertex_center[ids[live]]]
    radius = f.space.query_radius(factor * f.radius_at(level))
    found = KDTree(targets).query_radius(centers, r=radius)
    for w, hit in zip(weights[live], found):
        total[hit] += w
    return total
