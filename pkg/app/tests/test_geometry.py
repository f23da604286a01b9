"""Tests for domains, densities, cloud sampling and neighbor queries."""
import math

import numpy as np
import pytest

from app.core.errors import ConfigurationError, EmptyStripError, InputError
from app.services.geometry import (
    DataCloud,
    Density,
    Domain,
    ball_query,
    boundary_strip,
    default_cell,
    interior_vertices,
    lebesgue_ball,
    mu_ball,
    sample_cloud,
)


class TestDomain:
    def test_contains_matches_positive_distance(self, rng):
        for domain in (
            Domain.box([0.0, -1.0], [2.0, 1.0]),
            Domain.ball([0.0, 0.0, 0.0], 1.0),
            Domain.annulus([0.0, 0.0], 0.25, 1.0),
        ):
            lo, hi = domain.bounding_box()
            pts = rng.uniform(lo - 0.2, hi + 0.2, size=(500, domain.dim))
            assert np.array_equal(domain.contains(pts), domain.distance_to_boundary(pts) > 0)

    def test_annulus_exterior_ball_radius_is_inner_radius(self):
        assert Domain.annulus([0.0, 0.0], 0.25, 1.0).exterior_ball_radius == 0.25
        assert Domain.ball([0.0, 0.0], 1.0).exterior_ball_radius > 0

    def test_rejects_unsupported_dimension(self):
        with pytest.raises(ConfigurationError):
            Domain.box([0.0] * 4, [1.0] * 4)

    def test_rejects_bad_annulus(self):
        with pytest.raises(ConfigurationError):
            Domain.annulus([0.0, 0.0], 1.0, 0.5)

    def test_volume(self):
        assert Domain.box([0.0, 0.0], [2.0, 3.0]).volume == pytest.approx(6.0)
        assert Domain.ball([0.0, 0.0], 1.0).volume == pytest.approx(math.pi)
        assert Domain.annulus([0.0, 0.0], 0.5, 1.0).volume == pytest.approx(0.75 * math.pi)

    def test_nearest_boundary_point_of_box(self):
        domain = Domain.box([0.0, 0.0], [1.0, 1.0])
        anchor = domain.nearest_boundary_point([[0.1, 0.5]])
        np.testing.assert_allclose(anchor, [[0.0, 0.5]])

    def test_exterior_pole_distance(self):
        domain = Domain.box([0.0, 0.0], [1.0, 1.0])
        pole = domain.exterior_pole(1.0)
        assert domain.distance_from_outside(pole) == pytest.approx(1.0)
        assert domain.farthest_distance(pole) == pytest.approx(math.hypot(2.0, 0.5))


class TestDensity:
    def test_uniform_is_normalized(self, unit_square):
        density = Density.uniform(unit_square)
        assert density.is_normalized()
        assert density.phi0 == pytest.approx(1.0)
        assert density.phi1 == pytest.approx(1.0)
        assert density.lipschitz == 0.0

    def test_affine_bounds_and_lipschitz(self, unit_square):
        density = Density.affine(unit_square, offset=1.0, gradient=[1.0, 0.0])
        assert density.mass == pytest.approx(1.0)
        assert density.phi0 == pytest.approx(1.0 / 1.5)
        assert density.phi1 == pytest.approx(2.0 / 1.5)
        assert density.lipschitz == pytest.approx(1.0 / 1.5)

    def test_negative_density_rejected(self, unit_interval):
        with pytest.raises(ConfigurationError):
            Density.affine(unit_interval, offset=-1.0, gradient=[4.0])


class TestSampleCloud:
    def test_points_inside_and_reproducible(self, unit_interval):
        density = Density.uniform(unit_interval)
        first = sample_cloud(unit_interval, density, 4, seed=7)
        second = sample_cloud(unit_interval, density, 4, seed=7)
        assert first.n == 4
        assert np.all((first.points > 0) & (first.points < 1))
        assert np.array_equal(first.points, second.points)

    def test_different_seeds_differ(self, unit_interval):
        density = Density.uniform(unit_interval)
        assert not np.array_equal(
            sample_cloud(unit_interval, density, 10, seed=1).points,
            sample_cloud(unit_interval, density, 10, seed=2).points,
        )

    def test_uniform_mean(self, unit_interval):
        cloud = sample_cloud(unit_interval, Density.uniform(unit_interval), 100_000, seed=3)
        assert abs(cloud.points.mean() - 0.5) < 0.004

    def test_affine_density_fraction(self, unit_square):
        density = Density.affine(unit_square, offset=1.0, gradient=[1.0, 0.0])
        cloud = sample_cloud(unit_square, density, 200_000, seed=4)
        fraction = float(np.mean(cloud.points[:, 0] > 0.5))
        assert abs(fraction - 0.875 / 1.5) < 0.005

    def test_annulus_cloud_inside(self):
        domain = Domain.annulus([0.0, 0.0], 0.25, 1.0)
        cloud = sample_cloud(domain, Density.uniform(domain), 2000, seed=9)
        radii = np.linalg.norm(cloud.points, axis=1)
        assert np.all((radii > 0.25) & (radii < 1.0))

    def test_unnormalized_density_rejected(self, unit_interval):
        density = Density.affine(unit_interval, offset=2.0, normalize=False)
        with pytest.raises(ConfigurationError):
            sample_cloud(unit_interval, density, 10, seed=0)

    def test_empty_cloud_rejected(self, unit_interval):
        with pytest.raises(ConfigurationError):
            sample_cloud(unit_interval, Density.uniform(unit_interval), 0, seed=0)

    def test_points_outside_rejected(self, unit_interval):
        with pytest.raises(InputError):
            DataCloud.from_points([0.5, 1.5], unit_interval)


class TestBallQuery:
    def test_five_point_example(self, five_point_cloud):
        assert ball_query(five_point_cloud, 0.5, 0.15).tolist() == [1, 2, 3]

    def test_vertex_is_in_its_own_ball(self, five_point_cloud):
        for i in range(five_point_cloud.n):
            assert i in ball_query(five_point_cloud, five_point_cloud.points[i], 1e-6)

    def test_small_radius_off_cloud_is_empty(self, five_point_cloud):
        assert len(ball_query(five_point_cloud, 0.55, 0.01)) == 0

    def test_matches_brute_force(self, square_cloud, rng):
        centers = rng.uniform(0.0, 1.0, size=(1000, 2))
        radii = rng.uniform(0.01, 0.3, size=1000)
        for x, r in zip(centers, radii):
            expected = np.flatnonzero(np.linalg.norm(square_cloud.points - x, axis=1) < r)
            assert np.array_equal(ball_query(square_cloud, x, r), expected)

    def test_batched_neighbors_match_single_queries(self, square_cloud):
        index = square_cloud.index_for(0.1)
        ptr, idx = index.neighbors(square_cloud.points[:50], 0.1)
        for row in range(50):
            single = ball_query(square_cloud, square_cloud.points[row], 0.1)
            assert np.array_equal(idx[ptr[row]:ptr[row + 1]], single)

    def test_nearest_tie_goes_to_lowest_index(self, unit_interval):
        cloud = DataCloud.from_points([0.2, 0.4, 0.5, 0.7], unit_interval)
        assert cloud.index.nearest(np.array([[2 * 0.4 - 0.2]])).tolist() == [2]

    def test_registered_radius_sets_primary_cell(self, unit_square):
        cloud = sample_cloud(unit_square, Density.uniform(unit_square), 500, seed=1, index_radius=0.15)
        assert cloud.index.cell == 0.15
        plain = DataCloud.from_points(cloud.points, unit_square)
        assert plain.index.cell == pytest.approx(default_cell(unit_square, 500))
        assert plain.index.cell == pytest.approx(2.0 * math.sqrt(1.0 / 500))
        for x in ([0.5, 0.5], [0.02, 0.9]):
            assert np.array_equal(ball_query(cloud, x, 0.2), ball_query(plain, x, 0.2))

    def test_per_radius_grids_are_cached(self, square_cloud):
        grid = square_cloud.index_for(0.05)
        assert grid.cell == 0.05
        assert square_cloud.index_for(0.05) is grid
        assert square_cloud.index_for(0.1) is not grid

    def test_nonpositive_radius_rejected(self, five_point_cloud):
        with pytest.raises(InputError):
            ball_query(five_point_cloud, 0.5, 0.0)


class TestMuBall:
    def test_uniform_unclipped(self, unit_interval):
        assert mu_ball(Density.uniform(unit_interval), unit_interval, 0.5, 0.1) == pytest.approx(0.2, rel=1e-12)

    def test_uniform_clipped(self, unit_interval):
        assert mu_ball(Density.uniform(unit_interval), unit_interval, 0.05, 0.1) == pytest.approx(0.15, rel=1e-12)

    def test_linear_density(self, unit_interval):
        density = Density.affine(unit_interval, offset=0.0, gradient=[2.0])
        assert mu_ball(density, unit_interval, 0.5, 0.1) == pytest.approx(0.2, rel=1e-12)

    def test_disc_area(self, unit_square):
        value = mu_ball(Density.uniform(unit_square), unit_square, [0.5, 0.5], 0.1)
        assert value == pytest.approx(math.pi * 0.01, rel=1e-4)

    def test_clipped_disc_at_corner(self, unit_square):
        value = lebesgue_ball(unit_square, [0.0, 0.0], 0.2)
        assert value == pytest.approx(math.pi * 0.04 / 4.0, rel=1e-4)

    def test_three_dimensional_ball(self):
        domain = Domain.box([0.0] * 3, [1.0] * 3)
        value = lebesgue_ball(domain, [0.5, 0.5, 0.5], 0.2)
        assert value == pytest.approx(4.0 / 3.0 * math.pi * 0.008, rel=1e-4)

    def test_three_dimensional_corner_octant(self):
        domain = Domain.box([0.0] * 3, [1.0] * 3)
        value = lebesgue_ball(domain, [0.0, 0.0, 0.0], 0.2)
        assert value == pytest.approx(4.0 / 3.0 * math.pi * 0.008 / 8.0, rel=1e-4)

    def test_default_resolution_is_64_nodes(self, unit_square):
        density = Density.affine(unit_square, offset=1.0, gradient=[1.0, 0.5])
        default = mu_ball(density, unit_square, [0.1, 0.3], 0.2)
        assert default == mu_ball(density, unit_square, [0.1, 0.3], 0.2, resolution=64)

    def test_monotone_and_bounded(self, unit_square):
        density = Density.affine(unit_square, offset=1.0, gradient=[1.0, 0.5])
        x = [0.1, 0.3]
        previous = 0.0
        for r in (0.05, 0.1, 0.2, 0.4):
            mu = mu_ball(density, unit_square, x, r)
            area = lebesgue_ball(unit_square, x, r)
            assert mu >= previous
            assert density.phi0 * area - 1e-12 <= mu <= density.phi1 * area + 1e-12
            previous = mu


class TestBoundaryStrip:
    def test_interval_example(self, unit_interval):
        cloud = DataCloud.from_points([0.05, 0.3, 0.5, 0.95], unit_interval)
        assert boundary_strip(cloud, 0.1).tolist() == [0, 3]
        assert interior_vertices(cloud, boundary_strip(cloud, 0.1)).tolist() == [1, 2]

    def test_wide_strip_takes_everything(self, five_point_cloud):
        assert boundary_strip(five_point_cloud, 1.0).tolist() == list(range(5))

    def test_annulus_strip(self):
        domain = Domain.annulus([0.0, 0.0], 0.25, 1.0)
        cloud = sample_cloud(domain, Density.uniform(domain), 3000, seed=12)
        radii = np.linalg.norm(cloud.points, axis=1)
        expected = np.flatnonzero((radii <= 0.35) | (radii >= 0.9))
        assert np.array_equal(boundary_strip(cloud, 0.1), expected)

    def test_empty_strip_raises(self, unit_interval):
        cloud = DataCloud.from_points([0.5], unit_interval)
        with pytest.raises(EmptyStripError):
            boundary_strip(cloud, 0.1)
