import numpy as np
import pytest

from boundary_modulus import (BoundaryDensity, NeighborGraph, admissibility_scale, density_min_length,
                              edge_to_vertex_sum, is_admissible_density, lift_to_tau,
                              lift_to_vertex_tau, modulus, modulus_oracle, project_to_un,
                              un_norm_chain, vertex_sum_transfer)
from errors import InvalidArgumentError, PreconditionViolation
from metric_core import Region, build_rectangle, build_square
from path_solver import enumerate_path_constraints, solve_restricted
from weak_norm import lp_power

LEFT = Region.parse('box:0,0,0,1')
RIGHT = Region.parse('box:1,1,0,1')


class TestModulus:

    def test_four_by_four_grid_is_exact(self):
        # with nearest-neighbor links only the rows carry the modulus: 4 / 2.5
        space = build_square(4)
        radius = 1.01 * space.mesh
        report = modulus(space, LEFT, RIGHT, 2.0, link_radius=radius)
        assert report.kind == 'modulus'
        assert report.lp_value == pytest.approx(1.6, rel=1e-3)
        assert report.extras['min_length'] >= 1.0 - 1e-6

    def test_enumerated_paths_agree(self):
        space = build_square(4)
        graph = NeighborGraph.from_space(space, 1.01 * space.mesh)
        oracle = modulus_oracle(space, LEFT, RIGHT, graph)
        constraints = enumerate_path_constraints(oracle.graph, oracle.sources, oracle.targets)
        sigma = space.cell_volumes()
        x = solve_restricted(constraints, len(space), 2.0, sigma).weights
        assert lp_power(x, 2.0, sigma) == pytest.approx(1.6, rel=1e-3)

    @pytest.mark.slow
    def test_rectangle_crossing(self):
        # row paths alone force at least ny / (nx - 1.5); the constant density costs nx ny / (nx - 1)^2
        space = build_rectangle(12)
        report = modulus(space, LEFT, RIGHT, 2.0)
        assert 12 / 21.5 * (1 - 1e-3) <= report.lp_value <= 12 * 23 / 22 ** 2 * (1 + 1e-3)

    def test_constant_density_admissibility(self):
        space = build_rectangle(6)
        width = space.dist(0, 10)
        assert is_admissible_density(space, np.full(len(space), 1.0 / width), LEFT, RIGHT)
        assert not is_admissible_density(space, np.full(len(space), 0.9 / width), LEFT, RIGHT)
        assert density_min_length(space, BoundaryDensity(np.full(len(space), 1.0 / width)),
                                  LEFT, RIGHT) == pytest.approx(1.0)

    def test_sets_must_be_disjoint(self):
        space = build_square(6)
        with pytest.raises(PreconditionViolation):
            modulus(space, Region.strip(0, 0.6), Region.strip(0.4, 1), 2.0)
        with pytest.raises(InvalidArgumentError):
            modulus(space, Region.parse('box:2,3,0,1'), RIGHT, 2.0)


def test_density_validation():
    with pytest.raises(InvalidArgumentError):
        BoundaryDensity([1.0, -1.0])
    density = BoundaryDensity([1.0, 2.0])
    np.testing.assert_allclose(density.scaled(2.0).values, [2.0, 4.0])


class TestFillingToBoundary:

    def test_vertex_sums(self, filling12):
        tau = np.ones(filling12.n_edges)
        fv = edge_to_vertex_sum(tau, filling12)
        np.testing.assert_array_equal(fv, filling12.degrees())
        assert fv.sum() == pytest.approx(2 * tau.sum())
        with pytest.raises(InvalidArgumentError):
            edge_to_vertex_sum(np.ones(3), filling12)

    def test_vertex_sum_transfer(self, filling12, rng):
        report = vertex_sum_transfer(rng.uniform(size=filling12.n_edges), filling12, 2.0)
        assert report.passed
        assert report.multiplicity == filling12.degrees().max()

    def test_projection(self, filling12):
        fv = np.zeros(filling12.n_vertices)
        assert not project_to_un(fv, filling12, 2).values.any()
        fv[filling12.level_vertices(2)] = 1.0
        u = project_to_un(fv, filling12, 2)
        assert np.all(u.values > 0)
        chain = un_norm_chain(u, fv, filling12, 2)
        assert chain['vertex_power'] == pytest.approx(len(filling12.level_vertices(2)))
        assert chain['ratio'] > 0


class TestBoundaryToFilling:

    def test_lift_of_a_constant(self, filling12):
        rho = np.ones(len(filling12.space))
        tau = lift_to_tau(rho, filling12, 1.5)
        r = filling12.vertex_radius
        np.testing.assert_allclose(tau, r[filling12.edges[:, 0]] + r[filling12.edges[:, 1]])
        np.testing.assert_allclose(lift_to_vertex_tau(rho, filling12, 1.5), r)

    def test_lift_exponent_must_be_subcritical(self, filling12):
        rho = np.ones(len(filling12.space))
        with pytest.raises(InvalidArgumentError):
            lift_to_tau(rho, filling12, 2.0)
        with pytest.raises(InvalidArgumentError):
            lift_to_tau(rho, filling12, 1.5, K=0.5)
        with pytest.raises(InvalidArgumentError):
            lift_to_tau(np.ones(3), filling12, 1.5)

    def test_admissibility_scale(self):
        assert admissibility_scale(0.5) == pytest.approx(2.0)
        with pytest.raises(PreconditionViolation):
            admissibility_scale(0.0)
