import numpy as np
import pytest

from errors import InvalidArgumentError, PreconditionViolation
from filling import build_filling
from metric_core import build_square
from qs_maps import (QuasiSymmetry, from_pair_table, hop_distances, load_pair_table, qi_extension,
                     qi_sandwich, save_pair_table, snowflake_map, transport_edge_function,
                     transport_vertex_function)


@pytest.fixture(scope='module')
def identity_qi(filling12):
    space = filling12.space
    ids = np.arange(len(space))
    phi = QuasiSymmetry(space, space, ids, ids)
    return qi_extension(phi, filling12, filling12, pair_count=200)


class TestQuasiSymmetries:

    def test_snowflake_gauge_holds(self, square12):
        target, phi = snowflake_map(square12, 0.6)
        assert target.q_exponent == pytest.approx(2.0 / 0.6)
        result = phi.eta_test(count=800, seed=1)
        assert result['violations'] == 0
        assert result['triples'] > 0
        assert phi.inverse().eta_test(count=800, seed=2)['violations'] == 0

    def test_gauges(self, square12):
        _, phi = snowflake_map(square12, 0.5)
        assert phi.eta(4.0) == pytest.approx(2.0)
        assert phi.inverse().eta(2.0) == pytest.approx(4.0)

    def test_bijection_is_checked(self, square12):
        ids = np.arange(len(square12))
        with pytest.raises(InvalidArgumentError):
            QuasiSymmetry(square12, square12, ids, np.roll(ids, 1))
        with pytest.raises(InvalidArgumentError):
            QuasiSymmetry(square12, square12, ids, ids, kind='linear')

    def test_pair_table(self, tmp_path, square12):
        pairs = np.column_stack([np.arange(len(square12))] * 2)
        phi = from_pair_table(square12, square12, pairs, 1.0, 1.0)
        path = str(tmp_path / 'map.txt')
        save_pair_table(phi, path)
        np.testing.assert_array_equal(load_pair_table(path), pairs)

    def test_scrambled_table_is_rejected(self, square12):
        rng = np.random.default_rng(0)
        pairs = np.column_stack([np.arange(len(square12)), rng.permutation(len(square12))])
        with pytest.raises(PreconditionViolation):
            from_pair_table(square12, square12, pairs, 1.0, 1.0)

    def test_incomplete_table(self, square12):
        with pytest.raises(InvalidArgumentError):
            from_pair_table(square12, square12, np.array([[0, 0]]), 1.0, 1.0)


class TestQuasiIsometry:

    def test_identity_extends_to_the_identity(self, filling12, identity_qi):
        # shallow balls all cover the square; each still maps to itself
        assert identity_qi.vertex_map[filling12.root] == filling12.root
        np.testing.assert_array_equal(identity_qi.vertex_map, np.arange(filling12.n_vertices))
        levels = filling12.vertex_level
        assert np.all(levels[identity_qi.vertex_map] <= levels)
        constants = identity_qi.constants()
        assert constants['C'] == 1
        assert constants['D'] == 1
        assert constants['c'] == 0

    def test_sandwich(self, identity_qi):
        bound = qi_sandwich(identity_qi, identity_qi)
        assert bound == 0
        assert identity_qi.extras['sandwich'] == bound

    def test_hop_distances_match_bfs(self, filling12):
        last = filling12.n_vertices - 1
        sources = np.array([0, 3, 3, last // 2])
        targets = np.array([5, 0, last, last // 2])
        expected = [filling12.bfs(int(a))[b] for a, b in zip(sources, targets)]
        np.testing.assert_array_equal(hop_distances(filling12, sources, targets), expected)

    def test_snowflake_extension(self, filling12):
        target, phi = snowflake_map(filling12.space, 0.7)
        Y = build_filling(target, 2.0, 3)
        qi = qi_extension(phi, filling12, Y, pair_count=100)
        assert qi.vertex_map.max() < Y.n_vertices
        assert qi.vertex_map[filling12.root] == Y.root
        assert qi.root_fallbacks == 0
        with pytest.raises(InvalidArgumentError):
            qi_extension(phi, build_filling(build_square(10), 2.0, 2), Y)


class TestTransport:

    def test_vertex_transport(self, filling12, identity_qi, rng):
        tau = rng.uniform(size=filling12.n_vertices)
        np.testing.assert_array_equal(transport_vertex_function(tau, identity_qi),
                                      tau[identity_qi.vertex_map])
        with pytest.raises(InvalidArgumentError):
            transport_vertex_function(np.ones(3), identity_qi)

    def test_edge_transport(self, filling12, identity_qi, rng):
        tau = rng.uniform(size=filling12.n_edges)
        sigma = transport_edge_function(tau, identity_qi)
        assert sigma.shape == (filling12.n_edges,)
        assert np.all(sigma >= 0)
        with pytest.raises(InvalidArgumentError):
            transport_edge_function(tau, identity_qi, D=-1)
