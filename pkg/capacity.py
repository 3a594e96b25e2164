"""
Weak p-capacity between boundary sets at finite depth, binary path
structures with the positivity lower bound, and the critical-exponent scan.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import Config
from errors import (DepthError, DomainError, InvalidArgumentError,
                    PreconditionViolation, ResolutionError)
from filling import Filling, anchor_vertices, graph_distance
from metric_core import MetricSpace, Region, is_continuum, regularity_constants, set_distance
from path_solver import (ArcGraph, GraphPathOracle, PathConstraint, SolverSettings,
                         minimize_lp_subject_to_paths, polish_certificate)
from reports import CapacityReport
from weak_norm import weak_lp_power

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CapacityQuery:
    A: Region
    B: Region
    mode: str = 'open'
    p: float = 2.0
    depth: Optional[int] = None
    label: str = ''

    def name(self) -> str:
        return self.label or f"{self.A.describe()}|{self.B.describe()}"

    def masks(self, space: MetricSpace) -> Tuple[np.ndarray, np.ndarray]:
        return self.A.mask(space), self.B.mask(space)

    def validate(self, space: MetricSpace) -> float:
        """Check the query against the space; returns dist(A, B)"""
        if self.p < 1:
            raise InvalidArgumentError(f"Capacity exponent must be >= 1, got {self.p}")
        if self.mode not in ('open', 'continuum'):
            raise InvalidArgumentError(f"Unknown query mode '{self.mode}'")
        mask_a, mask_b = self.masks(space)
        if not mask_a.any() or not mask_b.any():
            raise InvalidArgumentError(f"Query {self.name()} has an empty boundary set")
        if np.any(mask_a & mask_b):
            raise PreconditionViolation(f"Boundary sets of {self.name()} overlap")
        distance = set_distance(space, mask_a, mask_b)
        if self.mode == 'open' and distance <= 0:
            raise PreconditionViolation(f"Open sets of {self.name()} are at distance 0")
        if self.mode == 'continuum':
            for label, mask in (('A', mask_a), ('B', mask_b)):
                if not is_continuum(space, mask):
                    raise PreconditionViolation(f"Set {label} of {self.name()} is not a continuum")
        return distance


def filling_graph(f: Filling) -> ArcGraph:
    return ArcGraph.from_edges(f.n_vertices, f.edges)


def query_anchors(f: Filling, q: CapacityQuery, level: int) -> Tuple[np.ndarray, np.ndarray]:
    mask_a, mask_b = q.masks(f.space)
    anchors_a = anchor_vertices(f, mask_a, level, q.mode)
    anchors_b = anchor_vertices(f, mask_b, level, q.mode)
    shared = np.intersect1d(anchors_a, anchors_b)
    if shared.size:
        raise PreconditionViolation(
            f"Level-{level} anchors of {q.name()} overlap ({shared.size} shared vertices)")
    return anchors_a, anchors_b


def _solve_wcap(f: Filling, q: CapacityQuery, settings: SolverSettings, polish: bool,
                seed_constraints: Optional[List[PathConstraint]]):
    if q.p <= 1:
        raise DomainError("Capacity solves need p > 1; p = 1 is only covered by the explicit bounds")
    anchors_a, anchors_b = query_anchors(f, q, f.max_level)
    graph = filling_graph(f)
    result = minimize_lp_subject_to_paths(graph, anchors_a, anchors_b, q.p, settings,
                                          seed_constraints=seed_constraints)
    if polish:
        result = polish_certificate(result, GraphPathOracle(graph, anchors_a, anchors_b), q.p, settings)
    return result, anchors_a, anchors_b


def wcap_upper(f: Filling, q: CapacityQuery, settings: Optional[SolverSettings] = None,
               sweep_depths: Optional[Sequence[int]] = None, polish: bool = True,
               seed_constraints: Optional[List[PathConstraint]] = None) -> CapacityReport:
    """
    Finite-depth upper bound for wcap_p(A, B): the weak value of an admissible
    edge certificate between deepest-level anchors.
    """
    settings = settings or SolverSettings()
    q.validate(f.space)
    depth = f.max_level if q.depth is None else q.depth
    target = f.truncated(depth) if depth < f.max_level else f
    if depth > f.max_level:
        raise DepthError(f"Query depth {depth} exceeds the filling depth {f.max_level}")

    trace = []
    for d in sorted(set(sweep_depths or [])):
        if d == depth:
            continue
        sub, _, _ = _solve_wcap(f.truncated(d), q, settings, polish, None)
        trace.append({'depth': d, 'weak_value': sub.weak_value, 'lp_value': sub.lp_value,
                      'status': sub.status})

    result, anchors_a, anchors_b = _solve_wcap(target, q, settings, polish, seed_constraints)
    trace.append({'depth': depth, 'weak_value': result.weak_value, 'lp_value': result.lp_value,
                  'status': result.status})
    trace.sort(key=lambda row: row['depth'])
    for prev, row in zip(trace[:-1], trace[1:]):
        row['ratio'] = row['weak_value'] / prev['weak_value'] if prev['weak_value'] > 0 else math.inf
    report = CapacityReport(kind='wcap', space=f.space.name, s=f.s, depth=depth, p=q.p,
                            mode=q.mode, lp_value=result.lp_value, weak_value=result.weak_value,
                            status=result.status, query=q.name(), certificate=result.weights,
                            constraints_used=result.constraints_used,
                            iterations=result.iterations, trace=trace,
                            extras={'anchors_a': len(anchors_a), 'anchors_b': len(anchors_b),
                                    'min_length': result.min_length},
                            constraints=result.constraints)
    logger.info(f"wcap {q.name()} depth {depth} p={q.p:g}: weak {result.weak_value:.6g} ({result.status})")
    return report


def certificate_min_length(f: Filling, q: CapacityQuery, tau: np.ndarray,
                           level: Optional[int] = None) -> float:
    """Shortest tau-length between the query's anchors; >= 1 means admissible"""
    level = f.max_level if level is None else level
    anchors_a, anchors_b = query_anchors(f, q, level)
    return GraphPathOracle(filling_graph(f), anchors_a, anchors_b).min_length(np.asarray(tau, dtype=float))


def vertex_certificate_min_length(f: Filling, q: CapacityQuery, fv: np.ndarray,
                                  level: Optional[int] = None) -> float:
    """
    Shortest vertex path between the anchors, each vertex counted once,
    through the node-split filling graph.
    """
    fv = np.asarray(fv, dtype=float)
    if fv.shape != (f.n_vertices,):
        raise InvalidArgumentError(f"Expected {f.n_vertices} vertex values, got shape {fv.shape}")
    level = f.max_level if level is None else level
    anchors_a, anchors_b = query_anchors(f, q, level)
    graph = ArcGraph.split_nodes(f.n_vertices, f.edges)
    return GraphPathOracle(graph, anchors_a, anchors_b + f.n_vertices).min_length(fv)


# ---- binary path structures ---------------------------------------------

@dataclass
class BinaryStructure:
    """
    Dyadic tree of nested balls: nodes['' ] is the root, nodes[g + '0'] and
    nodes[g + '1'] the children of nodes[g]. arcs[g] is the ascending vertex
    path of M edges from the parent of g down to nodes[g].
    """

    root: int
    offset: int
    gens: int
    nodes: Dict[str, int] = field(default_factory=dict)
    arcs: Dict[str, List[int]] = field(default_factory=dict)

    def strings(self, length: int) -> List[str]:
        return [g for g in self.nodes if len(g) == length]

    def leaves(self) -> List[str]:
        return self.strings(self.gens)

    def arc_edges(self, f: Filling, g: str) -> List[int]:
        path = self.arcs[g]
        return [f.edge_id(a, b) for a, b in zip(path[:-1], path[1:])]

    def leaf_path_edges(self, f: Filling, leaf: str) -> List[int]:
        edges = []
        for k in range(1, len(leaf) + 1):
            edges.extend(self.arc_edges(f, leaf[:k]))
        return edges


def split_offset_bound(s: float, c_q: float, big_c_q: float, q_exponent: float) -> int:
    """
    Smallest M with s^-M < k / 16, where k = 0.95 (3/4) (c/C)^(1/Q) satisfies
    ((3/4) / k)^Q > C / c.
    """
    if not (0 < c_q <= big_c_q):
        raise InvalidArgumentError(f"Need 0 < c <= C, got c={c_q}, C={big_c_q}")
    k = 0.95 * 0.75 * (c_q / big_c_q) ** (1.0 / q_exponent)
    return max(1, int(math.floor(math.log(16.0 / k, s))) + 1)


def _pick_children(f: Filling, parent: int, offset: int,
                   region: Optional[np.ndarray]) -> Tuple[int, int]:
    level = int(f.vertex_level[parent]) + offset
    z = int(f.vertex_center[parent])
    r = float(f.vertex_radius[parent])
    r_child = f.radius_at(level)
    parent_ball = np.zeros(len(f.space), dtype=bool)
    parent_ball[f.ball_points(parent)] = True
    allowed = parent_ball if region is None else parent_ball & region

    ids = f.level_vertices(level)
    balls = f.level_balls(level)
    inside = np.array([allowed[ball].all() for ball in balls])
    candidates = ids[inside]
    if candidates.size == 0:
        raise ResolutionError(f"No level-{level} ball fits inside vertex {parent}")
    centers = f.vertex_center[candidates]
    d_z = f.space.distances_from(z, centers)

    # first child: the contained ball nearest to the parent center
    first = int(candidates[np.lexsort((candidates, d_z))[0]])
    d_first = f.space.distances_from(int(f.vertex_center[first]), centers)
    separated = d_first > 4.0 * r_child + Config.BALL_SLACK
    if not separated.any():
        raise ResolutionError(
            f"No level-{level} ball inside vertex {parent} has a double disjoint from vertex {first}")
    outside_core = (d_z > 0.75 * r).astype(int)
    order = np.lexsort((candidates, d_z, outside_core))
    second = next(int(candidates[i]) for i in order if separated[i])
    return first, second


def _connector(f: Filling, parent: int, child: int) -> List[int]:
    """Descend from parent to child through the balls nearest the child center"""
    x = int(f.vertex_center[child])
    path = [parent]
    for level in range(int(f.vertex_level[parent]) + 1, int(f.vertex_level[child])):
        ids = f.level_vertices(level)
        d = f.space.distances_from(x, f.vertex_center[ids])
        path.append(int(ids[np.lexsort((ids, d))[0]]))
    path.append(child)
    for a, b in zip(path[:-1], path[1:]):
        if (min(a, b), max(a, b)) not in f.edge_index:
            raise ResolutionError(f"Connector from {parent} to {child} breaks between {a} and {b}")
    return path


def build_binary_structure(f: Filling, root: int, gens: int, offset: Optional[int] = None,
                           region: Optional[np.ndarray] = None,
                           constants: Optional[Tuple[float, float]] = None) -> BinaryStructure:
    """
    Binary path structure of `gens` generations below `root`.

    Without an explicit offset, M comes from the measured regularity
    constants. With a region mask every child ball must also lie inside it.
    """
    if gens < 0:
        raise InvalidArgumentError(f"gens must be nonnegative, got {gens}")
    if offset is None:
        c_q, big_c_q = constants or regularity_constants(f.space)
        offset = split_offset_bound(f.s, c_q, big_c_q, f.space.q_exponent)
    structure = BinaryStructure(root=int(root), offset=int(offset), gens=int(gens), nodes={'': int(root)})
    if gens == 0:
        return structure
    if int(f.vertex_level[root]) + gens * offset > f.max_level:
        raise DepthError(f"Root level {f.vertex_level[root]} + {gens} x {offset} exceeds depth {f.max_level}")
    frontier = ['']
    for _ in range(gens):
        next_frontier = []
        for g in frontier:
            first, second = _pick_children(f, structure.nodes[g], offset, region)
            for bit, child in (('0', first), ('1', second)):
                structure.nodes[g + bit] = child
                structure.arcs[g + bit] = _connector(f, structure.nodes[g], child)
                next_frontier.append(g + bit)
        frontier = next_frontier
    logger.debug(f"Binary structure at vertex {root}: M={offset}, {gens} generations")
    return structure


def smallest_feasible_offset(f: Filling, root: int, gens: int, max_offset: Optional[int] = None,
                             region: Optional[np.ndarray] = None) -> BinaryStructure:
    """Try M = 1, 2, ... until a structure builds"""
    level = int(f.vertex_level[root])
    limit = (f.max_level - level) // max(gens, 1) if max_offset is None else max_offset
    for offset in range(1, limit + 1):
        try:
            return build_binary_structure(f, root, gens, offset=offset, region=region)
        except ResolutionError as e:
            logger.debug(f"Offset {offset} fails at vertex {root}: {e}")
    raise DepthError(f"No offset up to {limit} yields {gens} generations below vertex {root}")


def check_structure(f: Filling, structure: BinaryStructure) -> List[str]:
    """Invariant violations of a built structure (empty when sound)"""
    problems = []
    for g, v in structure.nodes.items():
        if int(f.vertex_level[v]) != int(f.vertex_level[structure.root]) + structure.offset * len(g):
            problems.append(f"level of node '{g}'")
        if len(g) == 0 or g[-1] != '0':
            continue
        parent = structure.nodes[g[:-1]]
        sibling = structure.nodes[g[:-1] + '1']
        parent_ball = set(f.ball_points(parent).tolist())
        for child in (v, sibling):
            if not set(f.ball_points(child).tolist()) <= parent_ball:
                problems.append(f"ball of node {child} leaves its parent {parent}")
        gap = f.space.dist(int(f.vertex_center[v]), int(f.vertex_center[sibling]))
        if gap <= 2 * (f.vertex_radius[v] + f.vertex_radius[sibling]):
            problems.append(f"doubled balls of '{g}' and its sibling meet")
    for g, path in structure.arcs.items():
        levels = f.vertex_level[path]
        if len(path) != structure.offset + 1 or np.any(np.diff(levels) != 1):
            problems.append(f"arc '{g}' is not ascending of length {structure.offset}")
    return problems


def structure_path_average(f: Filling, structure: BinaryStructure, tau: np.ndarray,
                           generation: Optional[int] = None) -> float:
    """Average tau-length of the root-to-leaf paths of a generation"""
    generation = structure.gens if generation is None else generation
    leaves = structure.strings(generation)
    if not leaves:
        return 0.0
    tau = np.asarray(tau, dtype=float)
    return float(np.mean([tau[structure.leaf_path_edges(f, g)].sum() for g in leaves]))


def structure_roots(f: Filling, q: CapacityQuery, gens: int, offset: int) -> Tuple[int, int]:
    """Roots at level depth - gens*M nearest to the centroids of A and B"""
    level = f.max_level - gens * offset
    if level < 0:
        raise DepthError(f"{gens} generations of offset {offset} need depth >= {gens * offset}")
    ids = f.level_vertices(level)
    roots = []
    for mask in q.masks(f.space):
        centroid = f.space.coords[mask].mean(axis=0)
        d = np.linalg.norm(f.space.coords[f.vertex_center[ids]] - centroid, axis=1)
        roots.append(int(ids[np.lexsort((ids, d))[0]]))
    return roots[0], roots[1]


# ---- explicit bounds ----------------------------------------------------

def _check_unit(p: float, allow_unit: Optional[bool]):
    allow_unit = Config.ALLOW_UNIT_EXPONENT if allow_unit is None else allow_unit
    if p < 1 or (p == 1 and not allow_unit):
        raise DomainError(f"Exponent {p} is outside the supported range"
                          + ("" if p < 1 else " (enable ALLOW_UNIT_EXPONENT for p = 1)"))


def s_constant(p: float, M: int, tail_tol: Optional[float] = None,
               allow_unit: Optional[bool] = None) -> float:
    """
    S(p) = M + sum_{k>=2} M / ((2^(k-1) - 1) M)^(1/p), summed until the
    geometric tail bound M^(1-1/p) 2^-(K-1)/p / (1 - 2^-1/p) drops below
    tail_tol; the bound is added, so the result overestimates by <= tail_tol.
    """
    tail_tol = Config.SERIES_TAIL_TOL if tail_tol is None else tail_tol
    if p <= 1:
        _check_unit(p, allow_unit)
    if M < 1:
        raise InvalidArgumentError(f"Offset M must be >= 1, got {M}")
    lead = M ** (1.0 - 1.0 / p)
    ratio = 2.0 ** (-1.0 / p)
    total = float(M)
    k = 1
    while True:
        tail = lead * 2.0 ** (-(k - 1) / p) / (1.0 - ratio)
        if k >= 2 and tail <= tail_tol:
            return total + tail
        k += 1
        total += lead * (2.0 ** (k - 1) - 1.0) ** (-1.0 / p)


def line_weak_bound(p: float, L: int, b: float) -> float:
    """Largest tau-length of an L-edge path when ||tau||_{p,inf} <= b"""
    if p < 1:
        raise DomainError(f"Exponent must be >= 1, got {p}")
    if L < 1 or b < 0:
        raise InvalidArgumentError(f"Need L >= 1 and b >= 0, got L={L}, b={b}")
    if p == 1:
        return b * (1.0 + math.log(L))
    return b * L ** (1.0 - 1.0 / p) / (1.0 - 1.0 / p)


def line_weak_sum(p: float, L: int, b: float) -> float:
    """The exact extremal sum b * sum_{k<=L} k^(-1/p) the integral bound dominates"""
    return float(b * np.sum(np.arange(1, L + 1, dtype=float) ** (-1.0 / p)))


def positivity_lower_bound(p: float, L: int, M: int, tail_tol: Optional[float] = None,
                           allow_unit: Optional[bool] = None) -> float:
    """
    (1 / (2 S(p) + L^(1-1/p) / (1-1/p)))^p, and 1 / (2 S(1) + 1 + log L) at
    p = 1 when unit exponents are enabled.
    """
    _check_unit(p, allow_unit)
    if L < 1:
        raise InvalidArgumentError(f"Connecting path length must be >= 1, got {L}")
    series = s_constant(p, M, tail_tol, allow_unit=True)
    denominator = 2.0 * series + line_weak_bound(p, L, 1.0)
    return (1.0 / denominator) ** p


def _structure_pair(f: Filling, q: CapacityQuery, gens: int, offset: int):
    mask_a, mask_b = q.masks(f.space)
    root_a, root_b = structure_roots(f, q, gens, offset)
    return (build_binary_structure(f, root_a, gens, offset=offset, region=mask_a),
            build_binary_structure(f, root_b, gens, offset=offset, region=mask_b))


def positivity_certificate(f: Filling, q: CapacityQuery, gens: int = 1,
                           constants: Optional[Tuple[float, float]] = None) -> Dict:
    """
    Binary structures for A and B with leaves inside the sets, the measured
    root distance L and the implied lower bound.

    The offset is the one split_offset_bound derives from the regularity
    constants when structures fit at that offset, otherwise the smallest
    offset that builds; both are reported.
    """
    c_q, big_c_q = constants or regularity_constants(f.space)
    regular = split_offset_bound(f.s, c_q, big_c_q, f.space.q_exponent)
    pairs, last_error = {}, None
    for offset in range(1, f.max_level // max(gens, 1) + 1):
        try:
            pairs[offset] = _structure_pair(f, q, gens, offset)
            break
        except (ResolutionError, DepthError) as e:
            last_error = e
    if not pairs:
        raise DepthError(f"No binary structures inside {q.name()} at depth {f.max_level}: {last_error}")
    smallest = min(pairs)
    if regular not in pairs:
        try:
            pairs[regular] = _structure_pair(f, q, gens, regular)
        except (ResolutionError, DepthError) as e:
            logger.info(f"Regularity offset {regular} does not fit depth {f.max_level} ({e}); "
                        f"using offset {smallest}")
    offset = regular if regular in pairs else smallest
    tree_a, tree_b = pairs[offset]
    root_a, root_b = tree_a.root, tree_b.root
    # connect the roots without leaving levels 0..l(root)
    shallow = f.truncated(int(f.vertex_level[root_a]))
    length = max(1, graph_distance(shallow, root_a, root_b))
    bound = positivity_lower_bound(q.p, length, offset)
    problems = check_structure(f, tree_a) + check_structure(f, tree_b)
    return {'offset': offset, 'offset_source': 'regularity' if offset == regular else 'smallest',
            'regularity_offset': regular, 'smallest_offset': smallest,
            'L': length, 'lower_bound': bound, 'structures': (tree_a, tree_b), 'problems': problems}


# ---- critical exponent scan ---------------------------------------------

def witness_tau(f: Filling, distance: float) -> np.ndarray:
    """tau(e) = f(e+) + f(e-) with f(v) = 4 r(B_v) / dist(A, B)"""
    if distance <= 0:
        raise InvalidArgumentError(f"Witness needs dist(A, B) > 0, got {distance}")
    vertex_values = 4.0 * f.vertex_radius / distance
    return vertex_values[f.edges[:, 0]] + vertex_values[f.edges[:, 1]]


def witness_chain_bound(f: Filling, q: CapacityQuery, distance: float) -> float:
    """
    Lower bound on the witness length of every anchor-to-anchor path.

    Consecutive centers on a path are at most r_v + r_w apart, so the length
    is at least 4 d(c_0, c_N) / dist(A, B). Open anchors have centers in the
    sets; continuum anchors have centers within r_N / 2 of them.
    """
    slack = 0.0 if q.mode == 'open' else f.radius_at(f.max_level)
    return 4.0 * max(0.0, distance - slack) / distance


def qw_scan(f_builder: Callable[[int], Filling], space: MetricSpace, p_grid: Sequence[float],
            depth_grid: Sequence[int], q: CapacityQuery,
            settings: Optional[SolverSettings] = None) -> pd.DataFrame:
    """
    wcap upper bounds and the explicit witness over a (p, depth) grid, with
    successive-depth growth ratios for both.
    """
    if not p_grid or not depth_grid:
        raise InvalidArgumentError("qw_scan needs nonempty p and depth grids")
    distance = q.validate(space)
    rows = []
    for depth in sorted(depth_grid):
        f = f_builder(depth)
        tau = witness_tau(f, distance)
        witness_length = certificate_min_length(f, q, tau)
        for p in p_grid:
            query = CapacityQuery(q.A, q.B, q.mode, p, depth, q.label)
            report = wcap_upper(f, query, settings)
            rows.append({'p': p, 'depth': depth, 'wcap_weak': report.weak_value,
                         'wcap_lp': report.lp_value, 'status': report.status,
                         'witness_weak': weak_lp_power(tau, p),
                         'witness_min_length': witness_length,
                         'witness_chain_bound': witness_chain_bound(f, query, distance),
                         'witness_admissible': witness_length >= 1.0 - Config.OUTER_TOL})
    table = pd.DataFrame(rows).sort_values(['p', 'depth'], kind='stable').reset_index(drop=True)
    for column in ('wcap_weak', 'witness_weak'):
        table[f"{column}_ratio"] = table.groupby('p')[column].transform(lambda s: s / s.shift(1))
    for p, group in table.groupby('p'):
        logger.info(f"Q_w scan p={p:g}: wcap growth {group['wcap_weak_ratio'].tolist()[1:]}, "
                    f"witness growth {group['witness_weak_ratio'].tolist()[1:]}")
    return table
