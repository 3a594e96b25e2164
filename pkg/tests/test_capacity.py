import math

import numpy as np
import pytest

from boundary_modulus import edge_to_vertex_sum
from capacity import (CapacityQuery, build_binary_structure, certificate_min_length, check_structure,
                      line_weak_bound, line_weak_sum, positivity_certificate, positivity_lower_bound,
                      qw_scan, s_constant, smallest_feasible_offset, split_offset_bound,
                      structure_path_average, vertex_certificate_min_length, wcap_upper,
                      witness_chain_bound, witness_tau)
from errors import DepthError, DomainError, InvalidArgumentError, PreconditionViolation
from filling import build_filling
from metric_core import Region, build_square, regularity_constants
from path_solver import SolverSettings


@pytest.fixture
def query(strips):
    A, B = strips
    return CapacityQuery(A, B, 'continuum', 2.0)


class TestQueryValidation:

    def test_overlapping_sets(self, square12):
        q = CapacityQuery(Region.strip(0, 0.6), Region.strip(0.4, 1.0))
        with pytest.raises(PreconditionViolation):
            q.validate(square12)

    def test_empty_set(self, square12):
        q = CapacityQuery(Region.parse('box:2,3,0,1'), Region.strip(0.75, 1.0))
        with pytest.raises(InvalidArgumentError):
            q.validate(square12)

    def test_unknown_mode_and_exponent(self, square12, strips):
        A, B = strips
        with pytest.raises(InvalidArgumentError):
            CapacityQuery(A, B, mode='closed').validate(square12)
        with pytest.raises(InvalidArgumentError):
            CapacityQuery(A, B, p=0.5).validate(square12)

    def test_continuum_sets_must_be_connected(self, square12, strips):
        _, B = strips
        q = CapacityQuery(Region.parse('points:0,5'), B, 'continuum')
        with pytest.raises(PreconditionViolation):
            q.validate(square12)

    def test_validate_returns_the_set_distance(self, square12, query):
        assert query.validate(square12) == pytest.approx(7 * square12.mesh)


class TestWeakCapacity:

    def test_certificate_is_admissible(self, filling16, query):
        report = wcap_upper(filling16, query)
        assert report.kind == 'wcap'
        assert report.status in ('optimal', 'feasible')
        assert report.weak_value > 0
        assert report.weak_value <= report.lp_value * (1 + 1e-9)
        assert certificate_min_length(filling16, query, report.certificate) >= 1.0 - 1e-6
        assert report.extras['anchors_a'] > 0

    def test_depth_sweep_trace(self, filling16):
        # narrow strips keep the level-3 anchors of A and B apart
        q = CapacityQuery(Region.strip(0.0, 0.1), Region.strip(0.9, 1.0), 'continuum', 2.0)
        report = wcap_upper(filling16, q, sweep_depths=[3])
        assert [row['depth'] for row in report.trace] == [3, 4]
        assert 'ratio' in report.trace[1]

    def test_query_depth_above_filling(self, filling16, strips):
        A, B = strips
        with pytest.raises(DepthError):
            wcap_upper(filling16, CapacityQuery(A, B, 'continuum', 2.0, depth=9))

    def test_unit_exponent_needs_the_explicit_bounds(self, filling16, strips):
        A, B = strips
        with pytest.raises(DomainError):
            wcap_upper(filling16, CapacityQuery(A, B, 'continuum', 1.0))

    def test_vertex_sums_stay_admissible(self, filling16, query):
        report = wcap_upper(filling16, query, SolverSettings().with_overrides(gap_tol=1e-3))
        fv = edge_to_vertex_sum(report.certificate, filling16)
        assert vertex_certificate_min_length(filling16, query, fv) >= 1 - 1e-6
        zero = np.zeros(filling16.n_vertices)
        assert vertex_certificate_min_length(filling16, query, zero) == pytest.approx(0.0, abs=1e-6)
        with pytest.raises(InvalidArgumentError):
            vertex_certificate_min_length(filling16, query, np.ones(filling16.n_edges))


class TestWitness:

    def test_witness_beats_the_chain_bound(self, filling16, query):
        distance = query.validate(filling16.space)
        tau = witness_tau(filling16, distance)
        length = certificate_min_length(filling16, query, tau)
        bound = witness_chain_bound(filling16, query, distance)
        assert length >= bound * (1 - 1e-9)
        assert bound > 1.0

    def test_witness_needs_positive_distance(self, filling16):
        with pytest.raises(InvalidArgumentError):
            witness_tau(filling16, 0.0)

    def test_scan_table(self):
        space = build_square(16)
        full = build_filling(space, 2.0, 5)
        q = CapacityQuery(Region.strip(0.0, 0.1), Region.strip(0.9, 1.0), 'continuum', 2.0)

        def builder(depth):
            return full if depth == 5 else full.truncated(depth)
        table = qw_scan(builder, space, [2.5], [4, 5], q, SolverSettings().with_overrides(gap_tol=1e-3))
        assert list(table['depth']) == [4, 5]
        assert table['witness_admissible'].all()
        assert (table['witness_min_length'] >= table['witness_chain_bound'] * (1 - 1e-9)).all()
        assert math.isnan(table['wcap_weak_ratio'].iloc[0])
        assert table['wcap_weak_ratio'].iloc[1] > 0
        with pytest.raises(InvalidArgumentError):
            qw_scan(builder, space, [], [4], q)


class TestExplicitBounds:

    def test_line_bound_dominates_the_sum(self):
        assert line_weak_bound(2.0, 4, 1.0) == pytest.approx(4.0)
        for p in (1.5, 2.0, 3.0):
            for L in (1, 5, 40):
                assert line_weak_sum(p, L, 1.0) <= line_weak_bound(p, L, 1.0)
        assert line_weak_bound(1.0, 3, 2.0) == pytest.approx(2.0 * (1 + math.log(3)))

    def test_series_constant(self):
        coarse = s_constant(2.0, 1, tail_tol=1e-4)
        fine = s_constant(2.0, 1, tail_tol=1e-9)
        # the k = 2 term alone is 1
        assert fine > 2.0
        assert fine <= coarse
        assert coarse - fine <= 1e-4
        assert s_constant(2.0, 3) > s_constant(2.0, 1)
        with pytest.raises(InvalidArgumentError):
            s_constant(2.0, 0)

    def test_lower_bound(self):
        bound = positivity_lower_bound(2.0, 3, 1)
        series = s_constant(2.0, 1)
        assert bound == pytest.approx((1.0 / (2 * series + 2 * math.sqrt(3))) ** 2)
        assert 0 < bound < 1
        assert positivity_lower_bound(2.0, 10, 1) < bound

    def test_unit_exponent_gate(self):
        with pytest.raises(DomainError):
            positivity_lower_bound(1.0, 3, 1, allow_unit=False)
        assert positivity_lower_bound(1.0, 3, 1, allow_unit=True) > 0
        with pytest.raises(DomainError):
            positivity_lower_bound(0.5, 3, 1, allow_unit=True)

    def test_split_offset(self):
        assert split_offset_bound(2.0, 1.0, 1.0, 2.0) >= 1
        assert split_offset_bound(2.0, 0.1, 1.0, 2.0) >= split_offset_bound(2.0, 1.0, 1.0, 2.0)
        with pytest.raises(InvalidArgumentError):
            split_offset_bound(2.0, 2.0, 1.0, 2.0)


@pytest.mark.slow
class TestBinaryStructures:

    @pytest.fixture(scope='class')
    def deep(self):
        return build_filling(build_square(40), 2.0, 6)

    def test_structure_below_a_central_vertex(self, deep):
        ids = deep.level_vertices(2)
        gaps = np.linalg.norm(deep.space.coords[deep.vertex_center[ids]] - 0.5, axis=1)
        root = int(ids[np.argmin(gaps)])
        structure = build_binary_structure(deep, root, 1, offset=4)
        assert sorted(structure.leaves()) == ['0', '1']
        assert check_structure(deep, structure) == []
        # each leaf hangs four edges below the root
        average = structure_path_average(deep, structure, np.ones(deep.n_edges))
        assert average == pytest.approx(4.0)
        with pytest.raises(DepthError):
            build_binary_structure(deep, root, 2, offset=4)

    def test_smallest_feasible_offset(self, deep):
        ids = deep.level_vertices(2)
        gaps = np.linalg.norm(deep.space.coords[deep.vertex_center[ids]] - 0.5, axis=1)
        root = int(ids[np.argmin(gaps)])
        structure = smallest_feasible_offset(deep, root, 1)
        assert 1 <= structure.offset <= 4
        assert check_structure(deep, structure) == []
        with pytest.raises(DepthError):
            smallest_feasible_offset(deep, root, 1, max_offset=0)

    def test_positivity_certificate(self, deep, query):
        certificate = positivity_certificate(deep, query, gens=1)
        assert certificate['problems'] == []
        assert certificate['L'] >= 1
        assert certificate['lower_bound'] > 0
        report = wcap_upper(deep, query)
        assert report.weak_value >= certificate['lower_bound']

    def test_positivity_offset_choice(self, deep, query):
        c_q, big_c_q = regularity_constants(deep.space)
        certificate = positivity_certificate(deep, query, gens=1)
        regular = split_offset_bound(deep.s, c_q, big_c_q, deep.space.q_exponent)
        assert certificate['regularity_offset'] == regular
        assert 1 <= certificate['smallest_offset'] <= certificate['offset']
        expected = regular if certificate['offset_source'] == 'regularity' else certificate['smallest_offset']
        assert certificate['offset'] == expected
        assert certificate['lower_bound'] == pytest.approx(
            positivity_lower_bound(2.0, certificate['L'], certificate['offset']))

    def test_unit_constants_give_offset_five(self, deep, query):
        certificate = positivity_certificate(deep, query, gens=1, constants=(1.0, 1.0))
        assert certificate['regularity_offset'] == 5
        if certificate['offset_source'] == 'regularity':
            assert certificate['offset'] == 5
        else:
            assert certificate['offset'] == certificate['smallest_offset'] != 5
