"""Tests for the discrete extremal, weighted-reflection and tug-of-war operators."""
from fractions import Fraction

import numpy as np
import pytest

from app.core.errors import ConfigurationError, ReflectedNeighborhoodError
from app.core.parallel import set_workers
from app.services.geometry import DataCloud, Density, sample_cloud
from app.services.graph_operators import (
    FallbackCounter,
    GraphFunction,
    OperatorParams,
    OperatorSpec,
    TugOfWarParams,
    build_stencil,
    eval_example1,
    eval_field,
    eval_pucci,
    eval_tugofwar,
    reflected_ball,
)


@pytest.fixture
def gap_cloud(unit_interval):
    """{0.2, 0.4, 0.5, 0.7}: the reflection of 0.2 through 0.4 is 0.6, equidistant from 0.5 and 0.7."""
    return DataCloud.from_points([0.2, 0.4, 0.5, 0.7], unit_interval)


@pytest.fixture
def disc_params():
    return OperatorParams(alpha=0.6, beta=0.4, lam=1.5, tau=2.0, epsilon=0.12)


class TestOperatorParams:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ConfigurationError):
            OperatorParams(alpha=0.5, beta=0.6, lam=1.0, tau=1.0, epsilon=0.1)

    def test_beta_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            OperatorParams(alpha=1.0, beta=0.0, lam=1.0, tau=1.0, epsilon=0.1)

    def test_epsilon_below_max(self):
        with pytest.raises(ConfigurationError):
            OperatorParams.from_beta(0.5, epsilon=0.3, epsilon_max=0.2)

    def test_scales_at_least_one(self):
        with pytest.raises(ConfigurationError):
            OperatorParams.from_beta(0.5, epsilon=0.1, lam=0.5)

    def test_tug_of_war_weights(self):
        assert TugOfWarParams(p=2.0, epsilon=0.1, dim=1).alpha == 0.0
        assert TugOfWarParams(p=4.0, epsilon=0.1, dim=1).beta == pytest.approx(0.6)
        with pytest.raises(ConfigurationError):
            TugOfWarParams(p=1.5, epsilon=0.1, dim=1)


class TestReflectedBall:
    def test_five_point_example(self, five_point_cloud):
        assert reflected_ball(five_point_cloud, 2, 0, 0.1575).tolist() == [3, 4]

    def test_self_reflection_contains_center(self, five_point_cloud):
        for i in range(five_point_cloud.n):
            assert i in reflected_ball(five_point_cloud, i, i, 0.01)

    def test_empty_ball_falls_back_to_lowest_nearest(self, gap_cloud):
        counter = FallbackCounter()
        assert reflected_ball(gap_cloud, 1, 0, 0.0625, counter=counter).tolist() == [2]
        assert counter.count == 1

    def test_empty_ball_strict(self, gap_cloud):
        with pytest.raises(ReflectedNeighborhoodError) as info:
            reflected_ball(gap_cloud, 1, 0, 0.0625, policy="strict")
        assert info.value.triples == [(1, 0, 0.0625)]


class TestOracleValues:
    def test_pucci_max(self, five_point_cloud, oracle_params, squared):
        value = eval_pucci(five_point_cloud, oracle_params, squared, 2, "max")
        assert value == pytest.approx(float(Fraction(49, 27)), abs=1e-9)

    def test_pucci_min(self, five_point_cloud, oracle_params, squared):
        value = eval_pucci(five_point_cloud, oracle_params, squared, 2, "min")
        assert value == pytest.approx(float(Fraction(-23, 27)), abs=1e-9)

    def test_tug_of_war_p2(self, five_point_cloud, squared):
        value = eval_tugofwar(five_point_cloud, TugOfWarParams(p=2.0, epsilon=0.15, dim=1), squared, 2)
        assert value == pytest.approx(float(Fraction(8, 27)), abs=1e-9)

    def test_tug_of_war_p4(self, five_point_cloud, squared):
        value = eval_tugofwar(five_point_cloud, TugOfWarParams(p=4.0, epsilon=0.15, dim=1), squared, 2)
        assert value == pytest.approx(float(Fraction(16, 45)), abs=1e-9)

    def test_example1_single_pair(self, five_point_cloud, oracle_params, squared):
        def on_left_neighbor(cloud, i, js):
            return (js == 1).astype(float)

        value = eval_example1(five_point_cloud, oracle_params, on_left_neighbor, squared, 2)
        assert value == pytest.approx(float(Fraction(10, 27)), abs=1e-9)

    def test_graph_function_input(self, five_point_cloud, oracle_params, squared):
        u = GraphFunction(values=squared, cloud=five_point_cloud)
        assert eval_pucci(five_point_cloud, oracle_params, u, 2, "max") == pytest.approx(49.0 / 27.0, abs=1e-9)


class TestInvariances:
    def test_constants_vanish(self, square_cloud, disc_params):
        u = np.full(square_cloud.n, 1.75)
        for spec in (
            OperatorSpec("pucci_max", disc_params),
            OperatorSpec("pucci_min", disc_params),
            OperatorSpec("example1", disc_params),
            OperatorSpec("tug_of_war", TugOfWarParams(p=3.0, epsilon=0.12, dim=2)),
        ):
            values = eval_field(square_cloud, spec, u)
            assert np.max(np.abs(values)) <= 1e-12 * 1.75 / 0.12 ** 2

    def test_translation(self, square_cloud, disc_params, rng):
        u = rng.normal(size=square_cloud.n)
        for kind in ("pucci_max", "pucci_min"):
            spec = OperatorSpec(kind, disc_params)
            np.testing.assert_allclose(eval_field(square_cloud, spec, u + 4.0), eval_field(square_cloud, spec, u), atol=1e-9)

    def test_positive_homogeneity(self, square_cloud, disc_params, rng):
        u = rng.normal(size=square_cloud.n)
        for kind in ("pucci_max", "pucci_min"):
            spec = OperatorSpec(kind, disc_params)
            np.testing.assert_allclose(
                eval_field(square_cloud, spec, 2.5 * u), 2.5 * eval_field(square_cloud, spec, u), rtol=1e-12, atol=1e-9
            )

    def test_min_below_max(self, square_cloud, disc_params, rng):
        u = np.sin(3.0 * square_cloud.points[:, 0]) + rng.normal(scale=0.01, size=square_cloud.n)
        upper = eval_field(square_cloud, OperatorSpec("pucci_max", disc_params), u)
        lower = eval_field(square_cloud, OperatorSpec("pucci_min", disc_params), u)
        assert np.all(lower <= upper + 1e-12)

    def test_monotone_in_neighbors(self, square_cloud, disc_params, rng):
        u = rng.normal(size=square_cloud.n)
        bump = np.abs(rng.normal(size=square_cloud.n))
        bump[::2] = 0.0
        touching = np.arange(0, square_cloud.n, 2)
        spec = OperatorSpec("pucci_max", disc_params)
        assert np.all(eval_field(square_cloud, spec, u, touching) <= eval_field(square_cloud, spec, u + bump, touching) + 1e-12)


class TestExample1:
    def test_sandwich(self, disc_params, unit_square):
        for seed in range(5):
            cloud = sample_cloud(unit_square, Density.uniform(unit_square), 400, seed=seed)
            u = np.random.default_rng(seed).normal(size=cloud.n)

            def weights(c, i, js, s=seed):
                w = np.random.default_rng(s * 100_000 + i).uniform(size=len(js))
                return w / w.sum()

            middle = eval_field(cloud, OperatorSpec("example1", disc_params, weights), u)
            upper = eval_field(cloud, OperatorSpec("pucci_max", disc_params), u)
            lower = eval_field(cloud, OperatorSpec("pucci_min", disc_params), u)
            assert np.all(lower <= middle + 1e-9)
            assert np.all(middle <= upper + 1e-9)

    def test_bad_weights_rejected(self, five_point_cloud, oracle_params, squared):
        def doubled(cloud, i, js):
            return np.full(len(js), 2.0 / len(js))

        with pytest.raises(ConfigurationError):
            eval_example1(five_point_cloud, oracle_params, doubled, squared, 2)


class TestFieldEvaluation:
    def test_field_matches_single_vertex_calls(self, interval_cloud):
        params = OperatorParams.from_beta(0.5, epsilon=0.1, lam=1.0, tau=2.0)
        u = np.cos(5.0 * interval_cloud.points[:, 0])
        field = eval_field(interval_cloud, OperatorSpec("pucci_max", params), u)
        for i in range(0, interval_cloud.n, 17):
            assert field[i] == pytest.approx(eval_pucci(interval_cloud, params, u, i, "max"), rel=1e-12, abs=1e-9)

    def test_strict_policy_raises_with_vertex_ids(self, gap_cloud):
        params = OperatorParams.from_beta(0.5, epsilon=0.25, fallback="strict")
        u = np.zeros(gap_cloud.n)
        with pytest.raises(ReflectedNeighborhoodError) as info:
            eval_pucci(gap_cloud, params, u, 1, "max")
        assert (1, 0, 0.0625) in info.value.triples

    def test_fallbacks_are_counted(self, gap_cloud):
        params = OperatorParams.from_beta(0.5, epsilon=0.25)
        stencil = build_stencil(gap_cloud, OperatorSpec("pucci_max", params), [1])
        assert stencil.fallback_count >= 1

    def test_independent_of_worker_count(self, unit_square, disc_params, restore_workers):
        cloud = sample_cloud(unit_square, Density.uniform(unit_square), 5000, seed=14)
        u = np.cos(4.0 * cloud.points[:, 0]) * cloud.points[:, 1]
        spec = OperatorSpec("pucci_min", disc_params)
        set_workers(1)
        single = eval_field(cloud, spec, u)
        set_workers(4)
        threaded = eval_field(cloud, spec, u)
        assert np.array_equal(single, threaded)
