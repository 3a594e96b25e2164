"""
Weak covering p-capacity of sampled path families.

A curve is projected onto a cover S of filling vertices by cutting it into
consecutive sub-arcs, each inside one ball of S; the projected length is the
sum of tau over the chosen balls. Breakpoints are restricted to curve
samples and a run of samples counts as inside B_v only when every sample is
within r_v - margin of the center, so the sub-arc between samples stays in
the ball as long as margin >= the sampling mesh.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from sklearn.neighbors import KDTree

from boundary_modulus import BoundaryDensity
from config import Config
from errors import DepthError, InvalidArgumentError, MarginError
from filling import Filling, level_ball_sum
from metric_core import MetricSpace, Region
from path_solver import (ZERO_FLOOR, ArcGraph, CompositeOracle, GraphPathOracle, PathConstraint,
                         PathOracle, SolverSettings, polish_certificate, solve_with_oracle)
from reports import CapacityReport

logger = logging.getLogger(__name__)

CURVE_FORMAT = '# hyperfill-curves v1'


# ---- curves --------------------------------------------------------------

@dataclass
class SampledCurve:
    """Curve sampled in the space's coordinates with metric arclength parameters"""

    coords: np.ndarray
    cum_length: np.ndarray
    mesh: float
    name: str = ''

    def __post_init__(self):
        self.coords = np.atleast_2d(np.asarray(self.coords, dtype=float))
        self.cum_length = np.asarray(self.cum_length, dtype=float)
        if len(self.coords) == 0:
            raise InvalidArgumentError("A curve needs at least one sample")
        if self.cum_length.shape != (len(self.coords),) or self.cum_length[0] != 0:
            raise InvalidArgumentError("cum_length must start at 0 with one entry per sample")
        if np.any(np.diff(self.cum_length) < 0):
            raise InvalidArgumentError("cum_length must be nondecreasing")

    def __len__(self):
        return len(self.coords)

    @property
    def total_length(self) -> float:
        return float(self.cum_length[-1])

    @classmethod
    def from_polyline(cls, space: MetricSpace, vertices, mesh: float, name: str = '') -> 'SampledCurve':
        """
        Resample a polyline so consecutive samples are at metric distance <= mesh.
        Every polyline vertex is kept as a sample.
        """
        if mesh <= 0:
            raise InvalidArgumentError(f"Sampling mesh must be positive, got {mesh}")
        vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
        if vertices.shape[1] != space.dim:
            raise InvalidArgumentError(
                f"Curve has dimension {vertices.shape[1]}, the space has {space.dim}")
        step = float(space.to_euclidean(mesh))
        pieces = [vertices[:1]]
        for a, b in zip(vertices[:-1], vertices[1:]):
            n = max(1, int(math.ceil(np.linalg.norm(b - a) / step * (1 + 1e-12))))
            t = np.arange(1, n + 1, dtype=float)[:, None] / n
            pieces.append(a + t * (b - a))
        coords = np.concatenate(pieces)
        # drop repeated samples so the parameters increase strictly
        keep = np.concatenate([[True], np.any(np.diff(coords, axis=0) != 0, axis=1)])
        coords = coords[keep]
        steps = space.to_metric(np.linalg.norm(np.diff(coords, axis=0), axis=1))
        return cls(coords, np.concatenate([[0.0], np.cumsum(steps)]), mesh, name)

    def resampled(self, space: MetricSpace, factor: int = 2) -> 'SampledCurve':
        """Same polyline at `factor` times the sampling density"""
        return SampledCurve.from_polyline(space, self.coords, self.mesh / factor, self.name)

    def integrate(self, values: np.ndarray) -> float:
        """Trapezoidal line integral of per-sample density values"""
        values = np.asarray(values, dtype=float)
        if len(self) < 2:
            return 0.0
        return float(np.sum(0.5 * (values[:-1] + values[1:]) * np.diff(self.cum_length)))


def back_and_forth(space: MetricSpace, start, end, length: float, mesh: float,
                   name: str = '') -> SampledCurve:
    """Polyline bouncing between two points until its length reaches `length`"""
    start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    span = float(space.dist_coords(start, end)[0, 0])
    if span <= 0:
        raise InvalidArgumentError("back_and_forth needs two distinct points")
    passes = int(math.ceil(length / span))
    vertices = [start if k % 2 == 0 else end for k in range(passes + 1)]
    return SampledCurve.from_polyline(space, vertices, mesh, name or f"bounce{passes}")


def random_polylines(space: MetricSpace, count: int, mesh: float, n_vertices: int = 4,
                     seed: int = 0) -> List[SampledCurve]:
    """Polylines through random space points, for sampled path families"""
    rng = np.random.default_rng(seed)
    curves = []
    for k in range(count):
        ids = rng.choice(len(space), size=n_vertices, replace=False)
        curves.append(SampledCurve.from_polyline(space, space.coords[ids], mesh, f"random{k}"))
    return curves


def save_curves(curves: Sequence[SampledCurve], path: str) -> str:
    """One curve per line: the flattened sample coordinates"""
    with open(path, 'w') as fh:
        fh.write(CURVE_FORMAT + '\n')
        for curve in curves:
            fh.write(' '.join(f"{v:.17g}" for v in curve.coords.ravel()) + '\n')
    return path


def load_curves(path: str, space: MetricSpace, mesh: float) -> List[SampledCurve]:
    """
    Read curves written by save_curves (or by hand). Each record is a polyline
    in the space's coordinates and is resampled at `mesh`, so records with
    parameter jumps come back evenly sampled.
    """
    curves = []
    with open(path) as fh:
        for number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            try:
                values = np.array([float(v) for v in line.split()])
            except ValueError as e:
                raise InvalidArgumentError(f"{path}:{number}: {e}")
            if values.size % space.dim:
                raise InvalidArgumentError(
                    f"{path}:{number}: {values.size} values do not split into {space.dim}-d points")
            curves.append(SampledCurve.from_polyline(space, values.reshape(-1, space.dim), mesh,
                                                     f"{path}:{number}"))
    return curves


# ---- covers --------------------------------------------------------------

@dataclass
class Cover:
    vertices: np.ndarray
    label: str

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=int)

    def __len__(self):
        return len(self.vertices)


def level_covers(f: Filling, n_list: Iterable[int]) -> List[Cover]:
    covers = []
    for n in n_list:
        if not (0 <= n <= f.max_level):
            raise DepthError(f"Cover level {n} is outside 0..{f.max_level}")
        covers.append(Cover(f.level_vertices(n), f"level-{n}"))
    return covers


def band_cover(f: Filling, j: int) -> Cover:
    """S_j = vertices with j <= level <= 2j"""
    if j < 0 or 2 * j > f.max_level:
        raise DepthError(f"Band cover j={j} needs depth {2 * j}, the filling has {f.max_level}")
    ids = np.flatnonzero((f.vertex_level >= j) & (f.vertex_level <= 2 * j))
    return Cover(ids, f"band-{j}-{2 * j}")


def cover_is_complete(f: Filling, cover: Cover) -> bool:
    """Every space point lies in some ball of the cover"""
    covered = np.zeros(len(f.space), dtype=bool)
    for level in np.unique(f.vertex_level[cover.vertices]):
        ids = f.level_vertices(int(level))
        chosen = np.isin(ids, cover.vertices)
        for ball, keep in zip(f.level_balls(int(level)), chosen):
            if keep:
                covered[ball] = True
    return bool(covered.all())


def default_covers(f: Filling) -> Tuple[List[Cover], List[Cover]]:
    """(level family, band family) used by the capacity solve and its re-check"""
    deepest = f.max_level
    levels = level_covers(f, [max(0, deepest - 1), deepest] if deepest > 0 else [0])
    return levels, [band_cover(f, deepest // 2)]


# ---- projections ---------------------------------------------------------

@dataclass
class Projection:
    breakpoints: List[int]
    balls: List[int]
    value: float

    def constraint(self) -> PathConstraint:
        return PathConstraint.from_ids(self.balls, nodes=self.balls)


class ProjectionTable:
    """
    Transitions of one (curve, cover) pair, independent of tau: from sample i
    a ball v containing the run a..b (a <= i < b) jumps straight to b. Taking
    the farthest reach is enough because the cost-to-go never increases along
    the curve.
    """

    def __init__(self, f: Filling, curve: SampledCurve, cover: Cover, margin: Optional[float] = None):
        self.curve = curve
        self.cover = cover
        self.margin = curve.mesh if margin is None else float(margin)
        self.n_samples = len(curve)
        space = f.space
        tree = KDTree(curve.coords)
        covered = np.zeros(self.n_samples, dtype=bool)
        first_balls = []
        src, dst, verts = [], [], []
        for level in np.unique(f.vertex_level[cover.vertices]):
            radius = f.radius_at(int(level)) - self.margin
            if radius <= 0:
                continue
            ids = cover.vertices[f.vertex_level[cover.vertices] == level]
            found = tree.query_radius(space.coords[f.vertex_center[ids]], r=space.query_radius(radius))
            for v, hits in zip(ids, found):
                if hits.size == 0:
                    continue
                hits = np.sort(hits)
                covered[hits] = True
                if hits[0] == 0:
                    first_balls.append(int(v))
                cuts = np.flatnonzero(np.diff(hits) > 1) + 1
                for run in np.split(hits, cuts):
                    if run.size < 2:
                        continue
                    src.append(run[:-1])
                    dst.append(np.full(run.size - 1, run[-1]))
                    verts.append(np.full(run.size - 1, v))
        if not covered.all():
            i = int(np.flatnonzero(~covered)[0])
            raise MarginError(
                f"Sample {i} of {curve.name or 'curve'} lies in no ball of {cover.label} "
                f"shrunk by {self.margin:.3g}")
        self.first_balls = np.array(sorted(first_balls), dtype=int)
        if src:
            self.src = np.concatenate(src).astype(int)
            self.dst = np.concatenate(dst).astype(int)
            self.vertices = np.concatenate(verts).astype(int)
        else:
            self.src = self.dst = self.vertices = np.zeros(0, dtype=int)

    def solve(self, tau: np.ndarray) -> Projection:
        tau = np.asarray(tau, dtype=float)
        m = self.n_samples
        if m == 1:
            values = tau[self.first_balls]
            k = int(np.argmin(values))
            return Projection([0, 0], [int(self.first_balls[k])], float(values[k]))
        costs = tau[self.vertices]
        # cheapest ball per (src, dst) transition
        order = np.lexsort((self.vertices, costs, self.dst, self.src))
        keys = self.src[order] * m + self.dst[order]
        first = np.concatenate([[True], keys[1:] != keys[:-1]])
        chosen = order[first]
        src, dst, weight = self.src[chosen], self.dst[chosen], costs[chosen]
        graph = csr_matrix((weight + ZERO_FLOOR, (src, dst)), shape=(m, m))
        dist, pred = dijkstra(graph, directed=True, indices=0, return_predecessors=True)
        if not np.isfinite(dist[m - 1]):
            stuck = int(np.max(np.flatnonzero(np.isfinite(dist))))
            raise MarginError(
                f"{self.curve.name or 'curve'} cannot be projected onto {self.cover.label}: "
                f"no shrunken ball holds samples {stuck} and {stuck + 1}")
        path = [m - 1]
        while pred[path[-1]] >= 0:
            path.append(int(pred[path[-1]]))
        path = path[::-1]
        lookup = {int(k): int(c) for k, c in zip(src * m + dst, chosen)}
        balls = [int(self.vertices[lookup[a * m + b]]) for a, b in zip(path[:-1], path[1:])]
        return Projection(path, balls, float(tau[balls].sum()))


def min_projection_length(f: Filling, curve: SampledCurve, cover: Cover, tau: np.ndarray,
                          margin: Optional[float] = None) -> Projection:
    """Cheapest projection of the curve onto the cover; .value is the minimum"""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau[cover.vertices] < 0):
        raise InvalidArgumentError("tau must be nonnegative on the cover")
    return ProjectionTable(f, curve, cover, margin).solve(tau)


def stable_from(values: Sequence[float], tol: float) -> bool:
    """
    Finite liminf surrogate: from the first index where two consecutive
    values reach 1 - tol, every later value must too. One value decides alone.
    """
    passed = [v >= 1.0 - tol for v in values]
    if len(passed) == 1:
        return passed[0]
    for k in range(len(passed) - 1):
        if passed[k] and passed[k + 1]:
            return all(passed[k:])
    return False


def is_admissible_covering(f: Filling, tau: np.ndarray, curve: SampledCurve, covers: Sequence[Cover],
                           tol: Optional[float] = None, margin: Optional[float] = None) -> bool:
    tol = Config.OUTER_TOL if tol is None else tol
    if not covers:
        raise InvalidArgumentError("Admissibility needs at least one cover")
    values = [min_projection_length(f, curve, cover, tau, margin).value for cover in covers]
    return stable_from(values, tol)


def tau_epsilon(f: Filling, epsilon: float) -> np.ndarray:
    """v -> r(B_v) * epsilon"""
    if not epsilon > 0:
        raise InvalidArgumentError(f"epsilon must be positive, got {epsilon}")
    return f.vertex_radius * epsilon


# ---- oracles -------------------------------------------------------------

class CoveringOracle(PathOracle):
    """Cheapest projections of every (curve, cover) pair, one row per violating pair"""

    def __init__(self, f: Filling, curves: Sequence[SampledCurve], covers: Sequence[Cover],
                 margin: Optional[float] = None, n_jobs: Optional[int] = None):
        if not curves or not covers:
            raise InvalidArgumentError("CoveringOracle needs curves and covers")
        self.n_vars = f.n_vertices
        self.n_jobs = Config.N_JOBS if n_jobs is None else n_jobs
        margin = max(c.mesh for c in curves) if margin is None else margin
        pairs = [(curve, cover) for curve in curves for cover in covers]
        self.tables: List[ProjectionTable] = Parallel(n_jobs=self.n_jobs, prefer='threads')(
            delayed(ProjectionTable)(f, curve, cover, margin) for curve, cover in pairs)

    def _solve_all(self, x) -> List[Projection]:
        if self.n_jobs == 1:
            return [table.solve(x) for table in self.tables]
        return Parallel(n_jobs=self.n_jobs, prefer='threads')(
            delayed(table.solve)(x) for table in self.tables)

    def violations(self, x, threshold, limit):
        projections = self._solve_all(x)
        shortest = min(proj.value for proj in projections)
        found = sorted((proj for proj in projections if proj.value < threshold), key=lambda pr: pr.value)
        return shortest, [proj.constraint() for proj in found]

    def min_length(self, x) -> float:
        return min(proj.value for proj in self._solve_all(x))


@dataclass(frozen=True)
class CrossingFamily:
    """Every curve in the space joining region A to region B"""

    A: Region
    B: Region
    label: str = ''

    def name(self) -> str:
        return self.label or f"crossings {self.A.describe()}|{self.B.describe()}"


def crossing_oracle(f: Filling, family: CrossingFamily, cover: Cover, margin: float) -> GraphPathOracle:
    """
    Cheapest projection over all crossing curves onto one cover: a chain of
    shrunken balls, consecutive ones overlapping, from a ball meeting A to a
    ball meeting B. Solved on the node-split overlap graph of the cover.
    """
    space = f.space
    ids = cover.vertices
    radii = f.vertex_radius[ids] - margin
    live = radii > 0
    ids, radii = ids[live], radii[live]
    if ids.size == 0:
        raise MarginError(f"Every ball of {cover.label} vanishes under margin {margin:.3g}")
    centers = f.vertex_center[ids]
    gaps = space.pairwise(centers)
    reach = radii[:, None] + radii[None, :]
    a, b = np.nonzero(np.triu(gaps <= reach * (1 + 1e-12), k=1))
    edges = np.column_stack([a, b])

    hits = []
    for region in (family.A, family.B):
        mask = region.mask(space)
        members = np.flatnonzero(mask)
        d = space.pairwise(centers, members).min(axis=1)
        hits.append(np.flatnonzero(d <= radii * (1 + 1e-12)))
    if hits[0].size == 0 or hits[1].size == 0:
        raise MarginError(f"No shrunken ball of {cover.label} meets both ends of {family.name()}")
    graph = ArcGraph.split_nodes(len(ids), edges, var_ids=ids, n_vars=f.n_vertices)
    return GraphPathOracle(graph, hits[0], hits[1] + len(ids))


def family_oracle(f: Filling, family: Union[CrossingFamily, Sequence[SampledCurve]],
                  covers: Sequence[Cover], margin: Optional[float] = None) -> PathOracle:
    if isinstance(family, CrossingFamily):
        margin = 2.0 * f.space.mesh if margin is None else margin
        return CompositeOracle([crossing_oracle(f, family, cover, margin) for cover in covers])
    return CoveringOracle(f, family, covers, margin)


# ---- capacity ------------------------------------------------------------

def _finite_curves(curves: Sequence[SampledCurve]) -> List[SampledCurve]:
    kept = [c for c in curves if np.isfinite(c.total_length)]
    if len(kept) < len(curves):
        logger.warning(f"Dropped {len(curves) - len(kept)} curves of infinite length")
    if not kept:
        raise InvalidArgumentError("The path family is empty")
    return kept


def wccap_upper(f: Filling, family: Union[CrossingFamily, Sequence[SampledCurve]], p: float,
                settings: Optional[SolverSettings] = None, covers: Optional[Sequence[Cover]] = None,
                margin: Optional[float] = None, polish: bool = True) -> CapacityReport:
    """
    Upper bound for wccap_p of a path family: a vertex certificate admissible
    on every default cover (two deepest levels and the widest band), then
    re-checked per curve against the level and band cover families.
    """
    settings = settings or SolverSettings()
    level_family, band_family = default_covers(f)
    covers = list(covers) if covers is not None else level_family + band_family
    if not isinstance(family, CrossingFamily):
        family = _finite_curves(family)
    oracle = family_oracle(f, family, covers, margin)
    result = solve_with_oracle(oracle, p, settings)
    if polish:
        result = polish_certificate(result, oracle, p, settings)
    tau = result.weights

    threshold = 1.0 - settings.outer_tol
    checks: Dict = {}
    if isinstance(family, CrossingFamily):
        name = family.name()
        for label, fam in (('level', level_family), ('band', band_family)):
            lengths = [family_oracle(f, family, [c], margin).min_length(tau) for c in fam]
            checks[f"{label}_admissible"] = stable_from(lengths, settings.outer_tol)
        disagreement = [] if checks['level_admissible'] == checks['band_admissible'] else [0]
    else:
        name = f"{len(family)} curves"
        level_ok = [is_admissible_covering(f, tau, c, level_family, settings.outer_tol, margin) for c in family]
        band_ok = [is_admissible_covering(f, tau, c, band_family, settings.outer_tol, margin) for c in family]
        checks = {'level_admissible': all(level_ok), 'band_admissible': all(band_ok)}
        disagreement = [i for i, (a, b) in enumerate(zip(level_ok, band_ok)) if a != b]
    if disagreement:
        logger.warning(f"wccap certificate for {name} passes one cover family but not the other "
                       f"(curves {disagreement})")
    report = CapacityReport(kind='wccap', space=f.space.name, s=f.s, depth=f.max_level, p=p,
                            lp_value=result.lp_value, weak_value=result.weak_value,
                            status=result.status, query=name, certificate=tau,
                            constraints_used=result.constraints_used, iterations=result.iterations,
                            extras={**checks, 'family_disagreement': disagreement,
                                    'covers': [c.label for c in covers],
                                    'min_length': result.min_length,
                                    'admissible': result.min_length >= threshold},
                            constraints=result.constraints)
    logger.info(f"wccap {name} depth {f.max_level} p={p:g}: weak {result.weak_value:.6g} ({result.status})")
    return report


# ---- boundary densities from vertex functions ----------------------------

def sigma_n_projection(tau: np.ndarray, f: Filling, n: int, coords: Optional[np.ndarray] = None):
    """
    sigma_n = 2 sum_{v in V_n} tau(v) / r(B_v) chi_{2 B_v}; a BoundaryDensity on
    the space points, or raw values at `coords` when given.
    """
    if not (0 <= n <= f.max_level):
        raise DepthError(f"Level {n} is outside 0..{f.max_level}")
    values = 2.0 * np.asarray(tau, dtype=float) / f.vertex_radius
    density = level_ball_sum(f, values, n, factor=2.0, coords=coords)
    return density if coords is not None else BoundaryDensity(density)


def sigma_n_line_integral(tau: np.ndarray, f: Filling, n: int, curve: SampledCurve) -> float:
    return curve.integrate(sigma_n_projection(tau, f, n, coords=curve.coords))
