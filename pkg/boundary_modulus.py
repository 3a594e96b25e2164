"""
Discrete p-modulus of connecting path families on the boundary space, and
the operators moving weight between boundary densities and filling weight
functions in both directions.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from scipy.sparse.csgraph import dijkstra

from errors import InvalidArgumentError, PreconditionViolation, ResolutionError, UnreachableError
from filling import Filling, level_ball_sum, max_valence
from metric_core import MetricSpace, Region, neighbor_links, set_distance
from path_solver import ArcGraph, GraphPathOracle, SolverSettings, solve_with_oracle
from reports import CapacityReport
from weak_norm import check_bounded_multiplicity_transfer, lp_power, weak_lp_power, TransferReport

logger = logging.getLogger(__name__)


@dataclass
class BoundaryDensity:
    """Nonnegative density per space point (inverse length units)"""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(~np.isfinite(self.values)) or np.any(self.values < 0):
            raise InvalidArgumentError("Densities must be finite and nonnegative")

    def __len__(self):
        return len(self.values)

    def scaled(self, c: float) -> 'BoundaryDensity':
        return BoundaryDensity(c * self.values)

    def power(self, space: MetricSpace, p: float) -> float:
        """sum rho^p over the cell volumes, the discrete integral of rho^p"""
        return lp_power(self.values, p, space.cell_volumes())


@dataclass
class NeighborGraph:
    """Links between space points within link_radius; the discrete curve universe"""

    n_nodes: int
    links: np.ndarray
    lengths: np.ndarray
    link_radius: float

    @classmethod
    def from_space(cls, space: MetricSpace, link_radius: Optional[float] = None) -> 'NeighborGraph':
        radius = 2.0 * space.mesh if link_radius is None else float(link_radius)
        links, lengths = neighbor_links(space, radius)
        return cls(len(space), links, lengths, radius)

    def arc_graph(self) -> ArcGraph:
        return ArcGraph.from_links(self.n_nodes, self.links, self.lengths)


def _end_sets(space: MetricSpace, A: Region, B: Region):
    mask_a, mask_b = A.mask(space), B.mask(space)
    if not mask_a.any() or not mask_b.any():
        raise InvalidArgumentError("Modulus needs nonempty sets A and B")
    if np.any(mask_a & mask_b) or set_distance(space, mask_a, mask_b) <= 0:
        raise PreconditionViolation("Sets A and B must be disjoint")
    return np.flatnonzero(mask_a), np.flatnonzero(mask_b)


def modulus_oracle(space: MetricSpace, A: Region, B: Region,
                   graph: Optional[NeighborGraph] = None) -> GraphPathOracle:
    sources, targets = _end_sets(space, A, B)
    graph = graph or NeighborGraph.from_space(space)
    return GraphPathOracle(graph.arc_graph(), sources, targets)


def modulus(space: MetricSpace, A: Region, B: Region, p: float,
            settings: Optional[SolverSettings] = None,
            link_radius: Optional[float] = None) -> CapacityReport:
    """
    Minimize sum rho(x)^p vol(x) over densities giving every neighbor-graph
    path from A to B trapezoidal rho-length >= 1.
    """
    graph = NeighborGraph.from_space(space, link_radius)
    oracle = modulus_oracle(space, A, B, graph)
    reach = dijkstra(oracle.graph.matrix(np.ones(len(space))), directed=True,
                     indices=oracle.sources, min_only=True)
    if not np.isfinite(reach[oracle.targets]).any():
        raise UnreachableError(f"No neighbor-graph path joins {A.describe()} and {B.describe()}")
    result = solve_with_oracle(oracle, p, settings, sigma=space.cell_volumes())
    name = f"{A.describe()}|{B.describe()}"
    report = CapacityReport(kind='modulus', space=space.name, s=float('nan'), depth=0, p=p,
                            lp_value=result.lp_value, weak_value=result.weak_value,
                            status=result.status, query=name, certificate=result.weights,
                            constraints_used=result.constraints_used, iterations=result.iterations,
                            extras={'links': len(graph.links), 'link_radius': graph.link_radius,
                                    'min_length': result.min_length},
                            constraints=result.constraints)
    logger.info(f"mod_{p:g} {name} on {space.name}: {result.lp_value:.6g} ({result.status})")
    return report


def density_min_length(space: MetricSpace, density, A: Region, B: Region,
                       link_radius: Optional[float] = None) -> float:
    values = density.values if isinstance(density, BoundaryDensity) else np.asarray(density, dtype=float)
    graph = NeighborGraph.from_space(space, link_radius)
    return modulus_oracle(space, A, B, graph).min_length(values)


def is_admissible_density(space: MetricSpace, density, A: Region, B: Region,
                          tol: float = 1e-6, link_radius: Optional[float] = None) -> bool:
    return density_min_length(space, density, A, B, link_radius) >= 1.0 - tol


# ---- filling -> boundary -------------------------------------------------

def edge_to_vertex_sum(tau: np.ndarray, f: Filling) -> np.ndarray:
    """f(v) = sum of tau over the edges at v"""
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (f.n_edges,):
        raise InvalidArgumentError(f"Expected {f.n_edges} edge values, got shape {tau.shape}")
    return (np.bincount(f.edges[:, 0], weights=tau, minlength=f.n_vertices)
            + np.bincount(f.edges[:, 1], weights=tau, minlength=f.n_vertices))


def vertex_sum_transfer(tau: np.ndarray, f: Filling, p: float) -> TransferReport:
    """Weak-norm transfer from tau to its vertex sums; multiplicity is the valence"""
    fv = edge_to_vertex_sum(tau, f)
    edge_ids = np.arange(f.n_edges)
    relation = np.concatenate([np.column_stack([f.edges[:, 0], edge_ids]),
                               np.column_stack([f.edges[:, 1], edge_ids])])
    return check_bounded_multiplicity_transfer(fv, tau, relation, p, max_multiplicity=max_valence(f))


def project_to_un(fv: np.ndarray, f: Filling, n: int) -> BoundaryDensity:
    """u_n = sum_{v in V_n} f(v) / r(B_v) chi_{2 B_v} on the space points"""
    fv = np.asarray(fv, dtype=float)
    if fv.shape != (f.n_vertices,):
        raise InvalidArgumentError(f"Expected {f.n_vertices} vertex values, got shape {fv.shape}")
    u = BoundaryDensity(level_ball_sum(f, fv / f.vertex_radius, n, factor=2.0))
    chain = un_norm_chain(u, fv, f, n)
    logger.info(f"u_{n}: |u|_Q^Q = {chain['un_power']:.4g}, sum_Vn f^Q = {chain['vertex_power']:.4g}, "
                f"ratio {chain['ratio']:.4g}")
    return u


def un_norm_chain(u: BoundaryDensity, fv: np.ndarray, f: Filling, n: int) -> Dict:
    q = f.space.q_exponent
    un_power = u.power(f.space, q)
    vertex_power = lp_power(np.asarray(fv)[f.level_vertices(n)], q)
    ratio = un_power / vertex_power if vertex_power > 0 else float('nan')
    return {'un_power': un_power, 'vertex_power': vertex_power, 'ratio': ratio}


# ---- boundary -> filling -------------------------------------------------

def _ball_averages(rho: np.ndarray, f: Filling, p: float, K: float) -> np.ndarray:
    """(mean over K B_v of rho^p)^(1/p) per vertex, against the point weights"""
    if K < 1:
        raise InvalidArgumentError(f"Dilation K must be >= 1, got {K}")
    weights = f.space.weights
    averages = np.zeros(f.n_vertices)
    clamped = 0
    for level in range(f.max_level + 1):
        r = f.radius_at(level)
        factor = K
        if K * r > f.space.diameter:
            factor = f.space.diameter / r
            clamped += len(f.level_vertices(level))
        ids = f.level_vertices(level)
        for v, ball in zip(ids, f.level_balls(level, factor)):
            mass = weights[ball].sum()
            if ball.size == 0 or mass <= 0:
                raise ResolutionError(f"Dilated ball of vertex {v} holds no mass")
            averages[v] = (np.sum(weights[ball] * rho[ball] ** p) / mass) ** (1.0 / p)
    if clamped:
        logger.warning(f"K={K:g} dilated balls clamped to the space diameter for {clamped} vertices")
    return averages


def _check_lift(rho, f: Filling, p: float) -> np.ndarray:
    values = rho.values if isinstance(rho, BoundaryDensity) else np.asarray(rho, dtype=float)
    if values.shape != (len(f.space),):
        raise InvalidArgumentError(f"Expected {len(f.space)} density values, got shape {values.shape}")
    if not (1 < p < f.space.q_exponent):
        raise InvalidArgumentError(f"Lift exponent must lie in (1, {f.space.q_exponent:g}), got {p}")
    return values


def lift_to_tau(rho, f: Filling, p: float, K: float = 2.0) -> np.ndarray:
    """
    tau(e) = r(e+) (avg_{K e+} rho^p)^(1/p) + r(e-) (avg_{K e-} rho^p)^(1/p).
    """
    values = _check_lift(rho, f, p)
    scaled = f.vertex_radius * _ball_averages(values, f, p, K)
    tau = scaled[f.edges[:, 0]] + scaled[f.edges[:, 1]]
    _log_lift(tau, values, f)
    return tau


def lift_to_vertex_tau(rho, f: Filling, p: float, K: float = 2.0) -> np.ndarray:
    """Vertex form of the lift: tau(v) = r(B_v) (avg_{K B_v} rho^p)^(1/p)"""
    values = _check_lift(rho, f, p)
    tau = f.vertex_radius * _ball_averages(values, f, p, K)
    _log_lift(tau, values, f)
    return tau


def _log_lift(tau: np.ndarray, rho: np.ndarray, f: Filling):
    q = f.space.q_exponent
    rho_power = lp_power(rho, q, f.space.cell_volumes())
    if rho_power > 0:
        logger.info(f"Lift: |tau|_(Q,inf)^Q / |rho|_Q^Q = {weak_lp_power(tau, q) / rho_power:.4g}")


def admissibility_scale(min_length: float) -> float:
    """Measured c making c * certificate admissible"""
    if not min_length > 0:
        raise PreconditionViolation(f"Lifted certificate has shortest length {min_length}; no scale helps")
    return 1.0 / min_length
