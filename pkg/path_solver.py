"""
Constraint generation for l^p-minimal admissible weight functions.

A weight function x lives on a set of variables (edges, vertices or boundary
points). Every arc of an ArcGraph carries a sparse coefficient row, so the
arc weight is A[arc] @ x and a path's length is a linear form in x. The
engine alternates a shortest-path oracle with a restricted convex solve of

    min sum sigma_i x_i^p   s.t.  R x >= 1, x >= 0

over the generated path rows R. The restricted problem is solved in the dual:
for multipliers lam >= 0 the minimizing x is (R^T lam / (p sigma))^(1/(p-1)),
which makes the dual smooth and box constrained. Any lam >= 0 gives a lower
bound on the full problem, and the current x scaled by its oracle length
gives an upper bound; the loop stops once the two meet.
"""

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.optimize import minimize
from scipy.sparse import csr_matrix, coo_matrix
from scipy.sparse.csgraph import dijkstra

from config import Config
from errors import InvalidArgumentError, IterationLimitError, UnreachableError
from weak_norm import lp_power, weak_lp_power

logger = logging.getLogger(__name__)

# Dijkstra in scipy drops explicit zeros, so every arc carries at least this much
ZERO_FLOOR = 1e-15


@dataclass(frozen=True)
class SolverSettings:
    inner_tol: float = field(default_factory=lambda: Config.INNER_TOL)
    outer_tol: float = field(default_factory=lambda: Config.OUTER_TOL)
    gap_tol: float = field(default_factory=lambda: Config.GAP_TOL)
    max_constraints: int = field(default_factory=lambda: Config.MAX_CONSTRAINTS)
    max_rounds: int = field(default_factory=lambda: Config.MAX_ROUNDS)
    inner_max_iter: int = field(default_factory=lambda: Config.INNER_MAX_ITER)
    paths_per_round: int = field(default_factory=lambda: Config.PATHS_PER_ROUND)
    polish_passes: int = field(default_factory=lambda: Config.POLISH_PASSES)
    polish_coordinates: int = field(default_factory=lambda: Config.POLISH_COORDINATES)
    trace_path: Optional[str] = None

    def with_overrides(self, **kwargs) -> 'SolverSettings':
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


@dataclass
class PathConstraint:
    """Unit-length requirement sum_i coef_i x_i >= bound along one path"""

    support: np.ndarray
    coefficients: np.ndarray
    bound: float = 1.0
    nodes: Tuple[int, ...] = ()

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=int)
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.support.size == 0:
            raise InvalidArgumentError("A path constraint needs a nonempty support")

    @classmethod
    def from_ids(cls, ids: Sequence[int], nodes: Sequence[int] = ()) -> 'PathConstraint':
        """Unit coefficients; repeated ids count with multiplicity"""
        support, counts = np.unique(np.asarray(ids, dtype=int), return_counts=True)
        return cls(support, counts.astype(float), nodes=tuple(int(n) for n in nodes))

    def length(self, x: np.ndarray) -> float:
        return float(self.coefficients @ x[self.support])

    def key(self) -> Tuple:
        return tuple(self.support.tolist()), tuple(np.round(self.coefficients, 12).tolist())


@dataclass
class SolveResult:
    weights: np.ndarray
    lp_value: float
    weak_value: float
    constraints_used: int
    iterations: int
    status: str
    min_length: float = 0.0
    lower_bound: float = 0.0
    constraints: List[PathConstraint] = field(default_factory=list, repr=False)
    history: List[Dict] = field(default_factory=list, repr=False)

    def summary(self) -> Dict:
        return {'lp_value': self.lp_value, 'weak_value': self.weak_value,
                'constraints_used': self.constraints_used, 'iterations': self.iterations,
                'status': self.status, 'min_length': self.min_length,
                'lower_bound': self.lower_bound}


@dataclass
class RestrictedSolution:
    """Restricted solve output; converged is False when the dual stalled at zero"""

    weights: np.ndarray
    multipliers: np.ndarray
    dual_value: float
    converged: bool = True


class ArcGraph:
    """
    Directed arcs (tail -> head) whose weights are linear forms in the variables.

    Parallel arcs are allowed. Shortest paths always use the cheapest arc
    between two nodes under the current weights, the lowest arc id on ties.
    """

    def __init__(self, n_nodes: int, tails, heads, coefficients: csr_matrix,
                 node_labels: Optional[np.ndarray] = None):
        self.n_nodes = int(n_nodes)
        self.tails = np.asarray(tails, dtype=int)
        self.heads = np.asarray(heads, dtype=int)
        self.coefficients = csr_matrix(coefficients)
        self.n_vars = self.coefficients.shape[1]
        # maps graph nodes back to caller ids (node splitting doubles the nodes)
        self.node_labels = np.arange(self.n_nodes) if node_labels is None else np.asarray(node_labels)
        self._pairs = self.tails * self.n_nodes + self.heads
        order = np.argsort(self._pairs, kind='stable')
        firsts = np.flatnonzero(np.r_[True, np.diff(self._pairs[order]) != 0])
        groups = np.split(order, firsts[1:])
        self.has_parallel = len(groups) < len(self._pairs)
        self.arc_lookup: Dict[Tuple[int, int], np.ndarray] = {
            (int(self.tails[g[0]]), int(self.heads[g[0]])): g for g in groups}
        self._var_arcs = self.coefficients.tocsc()

    @classmethod
    def from_edges(cls, n_nodes: int, edges: np.ndarray) -> 'ArcGraph':
        """Edge-weighted undirected graph: variable e sits on both arcs of edge e"""
        edges = np.asarray(edges, dtype=int).reshape(-1, 2)
        m = len(edges)
        tails = np.concatenate([edges[:, 0], edges[:, 1]])
        heads = np.concatenate([edges[:, 1], edges[:, 0]])
        rows = np.arange(2 * m)
        cols = np.concatenate([np.arange(m), np.arange(m)])
        coef = coo_matrix((np.ones(2 * m), (rows, cols)), shape=(2 * m, m))
        return cls(n_nodes, tails, heads, coef)

    @classmethod
    def split_nodes(cls, n_nodes: int, edges: np.ndarray, var_ids: Optional[np.ndarray] = None,
                    n_vars: Optional[int] = None) -> 'ArcGraph':
        """
        Vertex-weighted graph reduced by node splitting: node v becomes v_in = v
        and v_out = v + n joined by an arc carrying variable var_ids[v]; edges
        become free arcs out -> in. Paths run from the sources' in-copies to
        the targets' out-copies.
        """
        edges = np.asarray(edges, dtype=int).reshape(-1, 2)
        n = int(n_nodes)
        var_ids = np.arange(n) if var_ids is None else np.asarray(var_ids, dtype=int)
        n_vars = n if n_vars is None else int(n_vars)
        tails = np.concatenate([np.arange(n), edges[:, 0] + n, edges[:, 1] + n])
        heads = np.concatenate([np.arange(n) + n, edges[:, 1], edges[:, 0]])
        coef = coo_matrix((np.ones(n), (np.arange(n), var_ids)), shape=(len(tails), n_vars))
        labels = np.concatenate([np.arange(n), np.arange(n)])
        return cls(2 * n, tails, heads, coef, node_labels=labels)

    @classmethod
    def from_links(cls, n_nodes: int, links: np.ndarray, lengths: np.ndarray) -> 'ArcGraph':
        """Point-density graph: link (a, b) of length L costs (x_a + x_b) L / 2"""
        links = np.asarray(links, dtype=int).reshape(-1, 2)
        lengths = np.asarray(lengths, dtype=float)
        m = len(links)
        tails = np.concatenate([links[:, 0], links[:, 1]])
        heads = np.concatenate([links[:, 1], links[:, 0]])
        half = np.concatenate([lengths, lengths]) / 2.0
        rows = np.concatenate([np.arange(2 * m), np.arange(2 * m)])
        cols = np.concatenate([tails, heads])
        coef = coo_matrix((np.concatenate([half, half]), (rows, cols)), shape=(2 * m, n_nodes))
        return cls(n_nodes, tails, heads, coef)

    def reversed(self) -> 'ArcGraph':
        return ArcGraph(self.n_nodes, self.heads, self.tails, self.coefficients, self.node_labels)

    def arc_weights(self, x: np.ndarray) -> np.ndarray:
        return self.coefficients @ np.asarray(x, dtype=float)

    def cheapest_arcs(self, weights: np.ndarray) -> np.ndarray:
        """One arc per (tail, head) pair: the lightest, lowest id first"""
        if not self.has_parallel:
            return np.arange(len(self.tails))
        order = np.lexsort((np.arange(len(weights)), weights, self._pairs))
        pairs = self._pairs[order]
        return order[np.r_[True, pairs[1:] != pairs[:-1]]]

    def matrix(self, x: np.ndarray) -> csr_matrix:
        weights = np.maximum(self.arc_weights(x), 0.0) + ZERO_FLOOR
        arcs = self.cheapest_arcs(weights)
        return csr_matrix((weights[arcs], (self.tails[arcs], self.heads[arcs])),
                          shape=(self.n_nodes, self.n_nodes))

    def arcs_of_var(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        col = self._var_arcs
        return col.indices[col.indptr[i]:col.indptr[i + 1]], col.data[col.indptr[i]:col.indptr[i + 1]]

    def arc_between(self, a: int, b: int, weights: Optional[np.ndarray] = None) -> int:
        group = self.arc_lookup[(int(a), int(b))]
        if weights is None or group.size == 1:
            return int(group[0])
        return int(group[np.argmin(weights[group])])

    def path_constraint(self, nodes: Sequence[int], x: Optional[np.ndarray] = None) -> PathConstraint:
        """Row of the node path, taking the cheapest parallel arc under x"""
        weights = None if x is None or not self.has_parallel else self.arc_weights(x)
        arcs = [self.arc_between(a, b, weights) for a, b in zip(nodes[:-1], nodes[1:])]
        return self.arcs_constraint(arcs, nodes)

    def arcs_constraint(self, arcs: Sequence[int], nodes: Sequence[int] = ()) -> PathConstraint:
        row = self.coefficients[list(arcs)].sum(axis=0).A1 if len(arcs) else np.zeros(self.n_vars)
        support = np.flatnonzero(row)
        if support.size == 0:
            raise InvalidArgumentError(f"Path {list(nodes)} carries no variables")
        return PathConstraint(support, row[support], nodes=tuple(int(n) for n in nodes))

    def to_networkx(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.n_nodes))
        graph.add_edges_from(zip(self.tails.tolist(), self.heads.tolist()))
        return graph


def _trace_back(predecessors: np.ndarray, target: int) -> List[int]:
    path = [int(target)]
    while predecessors[path[-1]] >= 0:
        path.append(int(predecessors[path[-1]]))
    return path[::-1]


def shortest_weighted_path(graph: ArcGraph, sources: Sequence[int], targets: Sequence[int],
                           x: np.ndarray) -> Tuple[float, List[int]]:
    """
    Minimal path length from any source to any target and one minimizing path.

    Equal lengths are broken toward the smaller target id, then by Dijkstra's
    deterministic predecessor order.
    """
    lengths, paths = _shortest_to_targets(graph, sources, targets, x, limit=1)
    return lengths[0], paths[0]


def _shortest_to_targets(graph: ArcGraph, sources, targets, x, limit: int):
    sources = np.asarray(sources, dtype=int)
    targets = np.asarray(targets, dtype=int)
    if sources.size == 0 or targets.size == 0:
        raise InvalidArgumentError("Shortest path needs nonempty source and target sets")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise InvalidArgumentError("Weights must be nonnegative")
    # min_only with predecessors also hands back the source each node was reached from
    dist, pred, _ = dijkstra(graph.matrix(x), directed=True, indices=sources,
                             return_predecessors=True, min_only=True)
    reached = targets[np.isfinite(dist[targets])]
    if reached.size == 0:
        raise UnreachableError("No path joins the source and target sets")
    order = reached[np.lexsort((reached, dist[reached]))][:limit]
    weights = graph.arc_weights(x)
    lengths, paths = [], []
    for t in order:
        nodes = _trace_back(pred, t)
        arcs = [graph.arc_between(a, b, weights) for a, b in zip(nodes[:-1], nodes[1:])]
        lengths.append(float(weights[arcs].sum()) if arcs else 0.0)
        paths.append(nodes)
    return lengths, paths


class PathOracle:
    """Admissibility oracle interface shared by graph, covering and modulus problems"""

    n_vars: int = 0

    def violations(self, x: np.ndarray, threshold: float, limit: int) -> Tuple[float, List[PathConstraint]]:
        raise NotImplementedError

    def min_length(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def reduction_bound(self, x: np.ndarray, i: int, threshold: float) -> Optional[float]:
        return None


class GraphPathOracle(PathOracle):
    """Shortest paths between two node sets of an ArcGraph"""

    def __init__(self, graph: ArcGraph, sources: Sequence[int], targets: Sequence[int]):
        self.graph = graph
        self.sources = np.unique(np.asarray(sources, dtype=int))
        self.targets = np.unique(np.asarray(targets, dtype=int))
        if self.sources.size == 0 or self.targets.size == 0:
            raise InvalidArgumentError("Source and target sets must be nonempty")
        if np.intersect1d(self.sources, self.targets).size:
            raise InvalidArgumentError("Source and target sets must be disjoint")
        self.n_vars = graph.n_vars
        self._reverse = graph.reversed()

    def violations(self, x, threshold, limit):
        """
        Shortest violated paths ending at distinct targets, then those
        starting at distinct sources (searched on the reversed graph).
        """
        lengths, paths = _shortest_to_targets(self.graph, self.sources, self.targets, x, limit)
        found = [self.graph.path_constraint(nodes, x) for length, nodes in zip(lengths, paths)
                 if length < threshold]
        if found and limit > 1:
            back_lengths, back_paths = _shortest_to_targets(self._reverse, self.targets, self.sources, x, limit)
            found += [self.graph.path_constraint(nodes[::-1], x)
                      for length, nodes in zip(back_lengths, back_paths) if length < threshold]
        return lengths[0], found

    def min_length(self, x) -> float:
        return shortest_weighted_path(self.graph, self.sources, self.targets, x)[0]

    def through_lengths(self, x) -> np.ndarray:
        """Length of the shortest source-target path forced through each arc"""
        matrix = self.graph.matrix(x)
        forward = dijkstra(matrix, directed=True, indices=self.sources, min_only=True)
        backward = dijkstra(matrix.T.tocsr(), directed=True, indices=self.targets, min_only=True)
        weights = self.graph.arc_weights(x)
        return forward[self.graph.tails] + weights + backward[self.graph.heads]

    def reduction_bound(self, x, i, threshold):
        arcs, coefs = self.graph.arcs_of_var(i)
        if arcs.size == 0:
            return float(x[i])
        through = self.through_lengths(x)[arcs]
        slack = np.min(through) - threshold
        if not np.isfinite(slack):
            return float(x[i])
        # a simple path meets variable i on at most two arcs
        top = np.sort(coefs)[::-1][:2].sum()
        return max(0.0, float(slack / top))


class CompositeOracle(PathOracle):
    """Union of path families over a shared variable set"""

    def __init__(self, oracles: Sequence[PathOracle]):
        self.oracles = list(oracles)
        if not self.oracles:
            raise InvalidArgumentError("CompositeOracle needs at least one oracle")
        sizes = {o.n_vars for o in self.oracles}
        if len(sizes) != 1:
            raise InvalidArgumentError(f"Oracles disagree on the variable count: {sorted(sizes)}")
        self.n_vars = sizes.pop()

    def violations(self, x, threshold, limit):
        shortest, found = np.inf, []
        for oracle in self.oracles:
            length, rows = oracle.violations(x, threshold, limit)
            shortest = min(shortest, length)
            found.extend(rows)
        return shortest, found

    def min_length(self, x) -> float:
        return min(oracle.min_length(x) for oracle in self.oracles)


# ---- restricted solve ---------------------------------------------------

def _rows_matrix(constraints: List[PathConstraint], n_vars: int) -> csr_matrix:
    rows = np.concatenate([np.full(c.support.size, k) for k, c in enumerate(constraints)])
    cols = np.concatenate([c.support for c in constraints])
    vals = np.concatenate([c.coefficients for c in constraints])
    return csr_matrix((vals, (rows, cols)), shape=(len(constraints), n_vars))


def _primal_from_dual(lam, rows_t, sigma, p):
    y = rows_t @ lam
    return np.power(np.maximum(y, 0.0) / (p * sigma), 1.0 / (p - 1.0))


def spread_weights(constraints: List[PathConstraint], n_vars: int) -> np.ndarray:
    """A point meeting every row: each support entry gets 1 / (row coefficient sum)"""
    x = np.zeros(n_vars)
    for c in constraints:
        x[c.support] = np.maximum(x[c.support], 1.0 / c.coefficients.sum())
    return x


def solve_restricted(constraints: List[PathConstraint], n_vars: int, p: float,
                     sigma: Optional[np.ndarray] = None, settings: Optional[SolverSettings] = None,
                     warm_start: Optional[np.ndarray] = None) -> RestrictedSolution:
    """
    min sum sigma x^p over x >= 0 meeting every constraint.

    Solved as the smooth dual max_{lam >= 0} sum lam - (p-1) sum sigma x(lam)^p
    with L-BFGS-B. The returned x is scaled up to meet every row exactly and
    dual_value is a lower bound in the caller's sigma units. When the dual
    leaves some row at zero length the solve is marked unconverged and x is
    the spread point of spread_weights.
    """
    settings = settings or SolverSettings()
    if not constraints:
        return RestrictedSolution(np.zeros(n_vars), np.zeros(0), 0.0)
    sigma = np.ones(n_vars) if sigma is None else np.asarray(sigma, dtype=float)
    # the minimizer does not depend on a global rescaling of sigma
    unit = float(sigma.mean())
    sigma = sigma / unit
    rows = _rows_matrix(constraints, n_vars)
    rows_t = rows.T.tocsr()
    m = rows.shape[0]

    def dual(lam):
        x = _primal_from_dual(lam, rows_t, sigma, p)
        return lam.sum() - (p - 1.0) * np.sum(sigma * x ** p), x

    def negative_dual(lam):
        value, x = dual(lam)
        return -value, -(1.0 - rows @ x)

    lam0 = np.zeros(m)
    if warm_start is not None:
        lam0[:len(warm_start)] = warm_start[:m]
    if not lam0.any():
        lam0[:] = 1.0 / max(1.0, float(rows.sum(axis=1).max()))
    result = minimize(negative_dual, lam0, jac=True, method='L-BFGS-B',
                      bounds=[(0.0, None)] * m,
                      options={'maxiter': settings.inner_max_iter, 'gtol': settings.inner_tol,
                               'ftol': 1e-4 * settings.inner_tol, 'maxcor': 30})
    lam = np.maximum(result.x, 0.0)
    value, x = dual(lam)
    lower = max(0.0, unit * float(value))
    shortest = float((rows @ x).min())
    if shortest <= 0:
        logger.warning(f"Restricted dual stalled on {m} rows ({result.message}); using spread weights")
        x = spread_weights(constraints, n_vars)
        return RestrictedSolution(x, lam, lower, converged=False)
    if shortest < 1.0:
        x = x / shortest
    return RestrictedSolution(x, lam, lower)


def enumerate_path_constraints(graph: ArcGraph, sources: Sequence[int], targets: Sequence[int],
                               max_paths: int = 200000) -> List[PathConstraint]:
    """Every simple source-target path as a constraint (small graphs only)"""
    digraph = graph.to_networkx()
    targets = set(int(t) for t in targets)
    found, seen = [], set()
    for source in sources:
        for nodes in nx.all_simple_paths(digraph, int(source), targets):
            if any(n in targets for n in nodes[:-1]) or any(n in sources for n in nodes[1:]):
                continue
            # each choice among parallel arcs is its own path
            choices = [graph.arc_lookup[(a, b)] for a, b in zip(nodes[:-1], nodes[1:])]
            for arcs in itertools.product(*choices):
                if len(found) >= max_paths:
                    raise InvalidArgumentError(f"More than {max_paths} simple paths")
                constraint = graph.arcs_constraint(arcs, nodes)
                if constraint.key() not in seen:
                    seen.add(constraint.key())
                    found.append(constraint)
    return found


# ---- constraint generation ----------------------------------------------

def _check_exponent(p: float):
    if not (1 < p <= Config.MAX_EXPONENT):
        raise InvalidArgumentError(f"Exponent must lie in (1, {Config.MAX_EXPONENT:g}], got {p}")


def solve_with_oracle(oracle: PathOracle, p: float, settings: Optional[SolverSettings] = None,
                      sigma: Optional[np.ndarray] = None,
                      seed_constraints: Optional[List[PathConstraint]] = None) -> SolveResult:
    """
    Constraint generation loop against an arbitrary admissibility oracle.

    Stops as optimal when the restricted optimum is admissible or when the
    best scaled certificate is within gap_tol of the dual lower bound; as
    feasible when the oracle only returns known rows or the last restricted
    solve stalled; as iteration-limit at max_rounds or max_constraints. The
    returned certificate is the best admissible one seen, so lp_value never
    exceeds an earlier round's scaled value.
    """
    _check_exponent(p)
    settings = settings or SolverSettings()
    n = oracle.n_vars
    threshold = 1.0 - settings.outer_tol
    constraints: List[PathConstraint] = list(seed_constraints or [])
    keys = {c.key() for c in constraints}
    solution = solve_restricted(constraints, n, p, sigma, settings)
    best_x, best_value, lower = None, np.inf, solution.dual_value
    history, status, iterations = [], 'optimal', 0
    trace = open(settings.trace_path, 'w') if settings.trace_path else None
    try:
        while True:
            iterations += 1
            x = solution.weights
            shortest, found = oracle.violations(x, threshold, settings.paths_per_round)
            lower = max(lower, solution.dual_value)
            if shortest > 0:
                scaled = x / min(1.0, shortest)
                value = lp_power(scaled, p, sigma)
                if value < best_value:
                    best_x, best_value = scaled, value
            history.append({'iteration': iterations, 'constraints': len(constraints),
                            'min_length': shortest, 'lp_value': best_value if best_x is not None else None,
                            'lower_bound': lower})
            if shortest >= threshold:
                status = 'optimal'
                break
            if best_value <= lower * (1.0 + settings.gap_tol):
                status = 'optimal'
                logger.debug(f"Gap closed: {best_value:.6g} against lower bound {lower:.6g}")
                break
            fresh = []
            for c in found:
                if c.key() not in keys:
                    keys.add(c.key())
                    fresh.append(c)
            if not fresh:
                # oracle keeps returning rows we already enforce
                status = 'feasible'
                logger.warning(f"Oracle returned only known constraints (min length {shortest:.3g})")
                break
            if len(constraints) + len(fresh) > settings.max_constraints or iterations >= settings.max_rounds:
                status = 'iteration-limit'
                logger.warning(f"Constraint generation stopped after {iterations} rounds and "
                               f"{len(constraints)} rows; gap {best_value:.6g} vs {lower:.6g}")
                break
            for c in fresh:
                constraints.append(c)
                if trace:
                    trace.write(' '.join(str(v) for v in (c.nodes or c.support.tolist())) + '\n')
            solution = solve_restricted(constraints, n, p, sigma, settings, warm_start=solution.multipliers)
            if iterations % 25 == 0:
                logger.debug(f"Constraint generation: {len(constraints)} rows, min length {shortest:.4f}")
    finally:
        if trace:
            trace.close()

    if not solution.converged and status == 'optimal':
        status = 'feasible'
    if best_x is None:
        raise IterationLimitError(f"No admissible certificate after {len(constraints)} constraints")
    shortest = oracle.min_length(best_x)
    if shortest < threshold:
        # rounding in the scaled copy
        best_x = best_x / shortest
        shortest = oracle.min_length(best_x)
    result = SolveResult(weights=best_x, lp_value=lp_power(best_x, p, sigma),
                         weak_value=weak_lp_power(best_x, p, sigma),
                         constraints_used=len(constraints), iterations=iterations,
                         status=status, min_length=shortest, lower_bound=lower,
                         constraints=constraints, history=history)
    logger.info(f"Solve finished ({status}): lp={result.lp_value:.6g}, weak={result.weak_value:.6g}, "
                f"{len(constraints)} constraints, {iterations} rounds")
    return result


def minimize_lp_subject_to_paths(graph: ArcGraph, sources: Sequence[int], targets: Sequence[int],
                                 p: float, settings: Optional[SolverSettings] = None,
                                 sigma: Optional[np.ndarray] = None,
                                 seed_constraints: Optional[List[PathConstraint]] = None) -> SolveResult:
    oracle = GraphPathOracle(graph, sources, targets)
    return solve_with_oracle(oracle, p, settings, sigma, seed_constraints)


def polish_certificate(result: SolveResult, oracle: PathOracle, p: float,
                       settings: Optional[SolverSettings] = None,
                       sigma: Optional[np.ndarray] = None) -> SolveResult:
    """
    Coordinate reductions of the largest entries, each re-verified by the
    oracle. Entries only ever decrease, so neither norm can grow.
    """
    settings = settings or SolverSettings()
    threshold = 1.0 - settings.outer_tol
    x = np.array(result.weights, dtype=float)
    weak = weak_lp_power(x, p, sigma)
    accepted = 0
    for sweep in range(settings.polish_passes):
        candidates = np.argsort(-x, kind='stable')[:settings.polish_coordinates]
        for i in candidates:
            if x[i] <= 0:
                continue
            hint = oracle.reduction_bound(x, int(i), threshold)
            step = min(x[i], x[i] if hint is None else hint)
            for _ in range(20):
                if step <= 1e-12 * max(1.0, x[i]):
                    break
                trial = x.copy()
                trial[i] = max(0.0, x[i] - step)
                if oracle.min_length(trial) >= threshold:
                    x = trial
                    accepted += 1
                    break
                step /= 2.0
        new_weak = weak_lp_power(x, p, sigma)
        logger.debug(f"Polish pass {sweep + 1}: weak value {weak:.6g} -> {new_weak:.6g}")
        weak = new_weak
    if accepted == 0:
        return result
    shortest = oracle.min_length(x)
    return replace(result, weights=x, lp_value=lp_power(x, p, sigma), weak_value=weak,
                   min_length=shortest)


def weak_norm_polish(result: SolveResult, graph: ArcGraph, sources: Sequence[int],
                     targets: Sequence[int], p: float,
                     settings: Optional[SolverSettings] = None) -> SolveResult:
    return polish_certificate(result, GraphPathOracle(graph, sources, targets), p, settings)
