import types

import networkx as nx
import numpy as np
import pytest

import path_solver
from errors import InvalidArgumentError, IterationLimitError, UnreachableError
from path_solver import (ArcGraph, CompositeOracle, GraphPathOracle, PathConstraint, SolveResult,
                         SolverSettings, enumerate_path_constraints, minimize_lp_subject_to_paths,
                         polish_certificate, shortest_weighted_path, solve_restricted,
                         solve_with_oracle, weak_norm_polish)
from weak_norm import lp_power, weak_lp_power

SERIES = np.array([[0, 1], [1, 2], [2, 3]])
# a bridge 0-1 followed by two disjoint routes to 4
BRIDGED = np.array([[0, 1], [1, 2], [2, 4], [1, 3], [3, 4]])
# two parallel edges 0-1, then 1-2
DOUBLED = np.array([[0, 1], [0, 1], [1, 2]])
# two disjoint two-edge routes from 0 to 3
PARALLEL = np.array([[0, 1], [1, 3], [0, 2], [2, 3]])


def grid_edges(n):
    edges = []
    for i in range(n):
        for j in range(n):
            v = i * n + j
            if j + 1 < n:
                edges.append((v, v + 1))
            if i + 1 < n:
                edges.append((v, v + n))
    return np.array(edges)


def test_path_constraint_from_ids():
    c = PathConstraint.from_ids([3, 1, 3])
    assert c.support.tolist() == [1, 3]
    assert c.coefficients.tolist() == [1.0, 2.0]
    assert c.length(np.array([0.0, 1.0, 0.0, 0.5])) == pytest.approx(2.0)
    with pytest.raises(InvalidArgumentError):
        PathConstraint.from_ids([])


def test_settings_overrides():
    settings = SolverSettings()
    assert settings.with_overrides(outer_tol=None) == settings
    assert settings.with_overrides(outer_tol=0.1).outer_tol == 0.1


class TestShortestPaths:

    def test_ties_break_toward_smaller_target(self):
        graph = ArcGraph.from_edges(3, np.array([[0, 2], [0, 1]]))
        length, nodes = shortest_weighted_path(graph, [0], [1, 2], np.ones(2))
        assert length == pytest.approx(1.0)
        assert nodes == [0, 1]

    def test_weighted_route(self):
        graph = ArcGraph.from_edges(4, PARALLEL)
        length, nodes = shortest_weighted_path(graph, [0], [3], np.array([5.0, 5.0, 1.0, 2.0]))
        assert length == pytest.approx(3.0)
        assert nodes == [0, 2, 3]

    def test_unreachable_and_negative(self):
        graph = ArcGraph.from_edges(4, np.array([[0, 1], [2, 3]]))
        with pytest.raises(UnreachableError):
            shortest_weighted_path(graph, [0], [3], np.ones(2))
        with pytest.raises(InvalidArgumentError):
            shortest_weighted_path(graph, [0], [1], np.array([-1.0, 1.0]))

    def test_node_split_graph_carries_vertex_weights(self):
        graph = ArcGraph.split_nodes(3, np.array([[0, 1], [1, 2]]))
        length, nodes = shortest_weighted_path(graph, [0], [2 + 3], np.array([1.0, 2.0, 3.0]))
        assert length == pytest.approx(6.0)
        assert graph.node_labels[nodes].tolist() == [0, 0, 1, 1, 2, 2]

    def test_point_links_use_trapezoidal_costs(self):
        graph = ArcGraph.from_links(3, np.array([[0, 1], [1, 2]]), np.array([2.0, 1.0]))
        length, _ = shortest_weighted_path(graph, [0], [2], np.array([1.0, 3.0, 5.0]))
        assert length == pytest.approx(2.0 * 2.0 + 1.0 * 4.0)


class TestOracles:

    def test_graph_oracle_rejects_bad_sets(self):
        graph = ArcGraph.from_edges(4, SERIES)
        with pytest.raises(InvalidArgumentError):
            GraphPathOracle(graph, [], [3])
        with pytest.raises(InvalidArgumentError):
            GraphPathOracle(graph, [0, 3], [3])

    def test_composite_oracle_takes_the_minimum(self):
        graph = ArcGraph.from_edges(4, SERIES)
        first = GraphPathOracle(graph, [0], [3])
        second = GraphPathOracle(graph, [0], [1])
        both = CompositeOracle([first, second])
        assert both.min_length(np.ones(3)) == pytest.approx(1.0)
        with pytest.raises(InvalidArgumentError):
            CompositeOracle([first, GraphPathOracle(ArcGraph.from_edges(2, np.array([[0, 1]])), [0], [1])])


class TestMinimization:

    def test_series_edges_share_the_unit_length(self):
        graph = ArcGraph.from_edges(4, SERIES)
        result = minimize_lp_subject_to_paths(graph, [0], [3], 2.0)
        assert result.status == 'optimal'
        np.testing.assert_allclose(result.weights, 1.0 / 3.0, rtol=1e-4)
        assert result.lp_value == pytest.approx(1.0 / 3.0, rel=1e-4)
        assert result.min_length >= 1.0 - 1e-6

    def test_parallel_routes_add(self):
        graph = ArcGraph.from_edges(4, PARALLEL)
        result = minimize_lp_subject_to_paths(graph, [0], [3], 2.0)
        assert result.lp_value == pytest.approx(1.0, rel=1e-4)

    def test_grid_matches_effective_conductance(self):
        # corner-to-corner resistance of the 3 x 3 unit grid is 3/2
        graph = ArcGraph.from_edges(9, grid_edges(3))
        result = minimize_lp_subject_to_paths(graph, [0], [8], 2.0)
        assert result.lp_value == pytest.approx(2.0 / 3.0, rel=1e-3)

    def test_exhaustive_constraints_agree_with_generation(self):
        graph = ArcGraph.from_edges(9, grid_edges(3))
        constraints = enumerate_path_constraints(graph, [0], [8])
        assert len(constraints) == 12
        x = solve_restricted(constraints, graph.n_vars, 2.0).weights
        assert min(c.length(x) for c in constraints) >= 1.0 - 1e-9
        generated = minimize_lp_subject_to_paths(graph, [0], [8], 2.0)
        assert lp_power(x, 2.0) == pytest.approx(generated.lp_value, rel=1e-3)

    def test_weighted_measure_shifts_weight(self):
        graph = ArcGraph.from_edges(4, SERIES)
        sigma = np.array([1.0, 1.0, 8.0])
        result = minimize_lp_subject_to_paths(graph, [0], [3], 2.0, sigma=sigma)
        # x_i proportional to 1 / sigma_i
        assert result.weights[0] == pytest.approx(8.0 * result.weights[2], rel=1e-3)

    def test_exponent_range(self):
        graph = ArcGraph.from_edges(4, SERIES)
        with pytest.raises(InvalidArgumentError):
            minimize_lp_subject_to_paths(graph, [0], [3], 1.0)

    def test_constraint_trace(self, tmp_path):
        graph = ArcGraph.from_edges(9, grid_edges(3))
        path = tmp_path / 'trace.txt'
        settings = SolverSettings().with_overrides(trace_path=str(path))
        result = minimize_lp_subject_to_paths(graph, [0], [8], 2.0, settings)
        lines = path.read_text().splitlines()
        assert len(lines) == result.constraints_used

    def test_iteration_cap(self):
        graph = ArcGraph.from_edges(9, grid_edges(3))
        settings = SolverSettings().with_overrides(max_constraints=1, paths_per_round=1)
        # one enforced path leaves a disjoint route at length zero
        with pytest.raises(IterationLimitError):
            minimize_lp_subject_to_paths(graph, [0], [8], 2.0, settings)


def test_polish_never_increases_the_weak_value():
    graph = ArcGraph.from_edges(4, PARALLEL)
    oracle = GraphPathOracle(graph, [0], [3])
    x = np.array([1.0, 1.0, 0.6, 0.7])
    start = SolveResult(weights=x, lp_value=lp_power(x, 2), weak_value=weak_lp_power(x, 2),
                        constraints_used=0, iterations=0, status='feasible')
    polished = polish_certificate(start, oracle, 2.0)
    assert polished.weak_value <= start.weak_value
    assert np.all(polished.weights <= x)
    assert oracle.min_length(polished.weights) >= 1.0 - 1e-6


def test_solve_with_seed_constraints():
    graph = ArcGraph.from_edges(4, SERIES)
    oracle = GraphPathOracle(graph, [0], [3])
    seed = [PathConstraint.from_ids([0, 1, 2])]
    result = solve_with_oracle(oracle, 2.0, seed_constraints=seed)
    assert result.constraints_used == 1
    assert result.lp_value == pytest.approx(1.0 / 3.0, rel=1e-4)


def test_weak_norm_polish_on_graph():
    graph = ArcGraph.from_edges(4, PARALLEL)
    x = np.array([1.0, 1.0, 0.6, 0.7])
    start = SolveResult(weights=x, lp_value=lp_power(x, 2), weak_value=weak_lp_power(x, 2),
                        constraints_used=0, iterations=0, status='feasible')
    polished = weak_norm_polish(start, graph, [0], [3], 2.0)
    expected = polish_certificate(start, GraphPathOracle(graph, [0], [3]), 2.0)
    np.testing.assert_allclose(polished.weights, expected.weights)
    # the longer route has slack to give up
    assert polished.weights[:2].sum() < 2.0


class TestBridgeAndParallelArcs:

    def test_single_bridge_edge(self):
        graph = ArcGraph.from_edges(2, np.array([[0, 1]]))
        oracle = GraphPathOracle(graph, [0], [1])
        shortest, found = oracle.violations(np.zeros(1), 1.0 - 1e-6, 4)
        assert shortest == 0.0
        assert {c.key() for c in found} == {((0,), (1.0,))}
        result = minimize_lp_subject_to_paths(graph, [0], [1], 2.0)
        assert result.status == 'optimal'
        np.testing.assert_allclose(result.weights, [1.0], rtol=1e-6)
        assert result.lp_value == pytest.approx(1.0, rel=1e-6)
        assert result.weak_value == pytest.approx(1.0, rel=1e-6)

    def test_parallel_edges_take_the_lighter_arc(self):
        graph = ArcGraph.from_edges(3, DOUBLED)
        x = np.array([5.0, 1.0, 2.0])
        length, nodes = shortest_weighted_path(graph, [0], [2], x)
        assert length == pytest.approx(3.0)
        assert nodes == [0, 1, 2]
        assert graph.path_constraint(nodes, x).support.tolist() == [1, 2]
        assert GraphPathOracle(graph, [0], [2]).through_lengths(x).min() == pytest.approx(3.0)

    def test_parallel_edges_are_separate_paths(self):
        graph = ArcGraph.from_edges(3, DOUBLED)
        constraints = enumerate_path_constraints(graph, [0], [2])
        assert sorted(c.support.tolist() for c in constraints) == [[0, 2], [1, 2]]
        # a = b = 1/3 on the doubled edge, 2/3 on the last one
        result = minimize_lp_subject_to_paths(graph, [0], [2], 2.0)
        assert result.lp_value == pytest.approx(2.0 / 3.0, rel=1e-5)
        np.testing.assert_allclose(result.weights, [1 / 3, 1 / 3, 2 / 3], rtol=1e-4)


class TestStoppingRules:

    def test_bridged_routes(self):
        # bridge 1/2 and 1/4 on each route edge
        graph = ArcGraph.from_edges(5, BRIDGED)
        result = minimize_lp_subject_to_paths(graph, [0], [4], 2.0)
        assert result.status == 'optimal'
        assert result.lp_value == pytest.approx(0.5, rel=1e-5)
        assert result.lower_bound <= result.lp_value * (1 + 1e-9)
        assert result.lower_bound == pytest.approx(0.5, rel=1e-4)

    def test_round_cap_returns_a_scaled_certificate(self):
        graph = ArcGraph.from_edges(5, BRIDGED)
        settings = SolverSettings().with_overrides(max_rounds=2, paths_per_round=1)
        result = minimize_lp_subject_to_paths(graph, [0], [4], 2.0, settings)
        assert result.status == 'iteration-limit'
        assert result.iterations == 2
        assert result.constraints_used == 1
        # one route at 1/3 per edge, scaled by the other route's length 1/3
        assert result.min_length >= 1.0 - 1e-6
        assert result.weights[0] == pytest.approx(1.0, rel=1e-5)
        assert result.lp_value == pytest.approx(3.0, rel=1e-5)

    def test_reported_value_never_rises(self):
        graph = ArcGraph.from_edges(16, grid_edges(4))
        settings = SolverSettings().with_overrides(paths_per_round=1)
        result = minimize_lp_subject_to_paths(graph, [0], [15], 2.0, settings)
        values = [h['lp_value'] for h in result.history if h['lp_value'] is not None]
        assert values
        assert all(b <= a for a, b in zip(values, values[1:]))
        assert result.lp_value <= values[-1] * (1 + 1e-9)

    def test_loose_gap_stops_early(self):
        graph = ArcGraph.from_edges(25, grid_edges(5))
        tight = minimize_lp_subject_to_paths(graph, [0], [24], 2.0)
        loose = minimize_lp_subject_to_paths(graph, [0], [24], 2.0,
                                             SolverSettings().with_overrides(gap_tol=0.05))
        assert loose.iterations <= tight.iterations
        assert loose.min_length >= 1.0 - 1e-6
        assert tight.lp_value <= loose.lp_value * (1 + 1e-5)
        assert loose.lp_value <= 1.05 * loose.lower_bound * (1 + 1e-9)


class TestStalledDual:

    @pytest.fixture
    def stalled(self, monkeypatch):
        def fake_minimize(fun, x0, **kwargs):
            return types.SimpleNamespace(x=np.zeros_like(x0), message='ABNORMAL')
        monkeypatch.setattr(path_solver, 'minimize', fake_minimize)

    def test_restricted_solve_reports_the_stall(self, stalled):
        constraints = [PathConstraint.from_ids([0, 1]), PathConstraint.from_ids([2])]
        solution = solve_restricted(constraints, 3, 2.0)
        assert not solution.converged
        assert min(c.length(solution.weights) for c in constraints) >= 1.0
        np.testing.assert_allclose(solution.weights, [0.5, 0.5, 1.0])
        assert solution.dual_value == 0.0

    def test_stalled_loop_is_only_feasible(self, stalled):
        graph = ArcGraph.from_edges(4, SERIES)
        result = minimize_lp_subject_to_paths(graph, [0], [3], 2.0)
        assert result.status == 'feasible'
        assert result.min_length >= 1.0 - 1e-6
        assert result.lp_value == pytest.approx(1.0 / 3.0)


def random_sub_filling(f, size, rng):
    """A connected induced subgraph of the filling on `size` vertices, relabelled 0..size-1"""
    chosen = [int(rng.integers(f.n_vertices))]
    while len(chosen) < size:
        frontier = sorted({int(w) for v in chosen for w in f.neighbors(v)} - set(chosen))
        chosen.append(int(rng.choice(frontier)))
    index = {v: k for k, v in enumerate(chosen)}
    edges = np.array([(index[a], index[b]) for a, b in f.edges.tolist() if a in index and b in index])
    return edges


@pytest.mark.parametrize('seed', range(25))
def test_generation_matches_exhaustive_paths_on_sub_fillings(filling16, seed):
    rng = np.random.default_rng(seed)
    edges = random_sub_filling(filling16, 8, rng)
    assert len(edges) <= 200
    graph = ArcGraph.from_edges(8, edges)
    assert nx.is_weakly_connected(graph.to_networkx())
    ends = rng.permutation(8)
    sources, targets = ends[:1], ends[1:1 + int(rng.integers(1, 3))]
    p = float(rng.choice([1.5, 2.0, 3.0]))
    sigma = rng.uniform(0.5, 2.0, size=len(edges))

    settings = SolverSettings().with_overrides(inner_tol=1e-11, outer_tol=1e-9, gap_tol=1e-9)
    constraints = enumerate_path_constraints(graph, sources, targets)
    exact = lp_power(solve_restricted(constraints, graph.n_vars, p, sigma, settings).weights, p, sigma)
    generated = minimize_lp_subject_to_paths(graph, sources, targets, p, settings, sigma=sigma)
    assert generated.min_length >= 1.0 - 1e-9
    assert abs(generated.lp_value - exact) <= 1e-6 * max(1.0, exact)
