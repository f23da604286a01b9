"""Tests for the experiment building blocks and the experiment service."""
import json
import math

import numpy as np
import pytest

from app.core.errors import ConfigurationError, InputError
from app.core.schemas import RunConfig
from app.services.experiments import (
    BaselineStore,
    boundary_continuity_probe,
    cardinality_expectation,
    check_discrete_to_nonlocal,
    convergence_study,
    evaluation_grid,
    expansion_scan,
    experiment_service,
    fit_loglog_slope,
    holder_fit,
)
from app.services.functions import make_function
from app.services.geometry import Density, Domain, sample_cloud
from app.services.graph_operators import OperatorParams, OperatorSpec, TugOfWarParams
from app.services.partition import build_transport
from app.services.solver import ProblemSpec


class TestSlopeFit:
    def test_exact_power_law(self):
        fit = fit_loglog_slope([1.0, 2.0, 4.0], [1.0, 4.0, 16.0])
        assert fit.slope == pytest.approx(2.0)
        assert fit.r2 == pytest.approx(1.0)
        assert not fit.flagged

    def test_single_point_is_flagged(self):
        fit = fit_loglog_slope([1.0], [2.0])
        assert fit.flagged
        assert math.isnan(fit.slope)


class TestBaselineStore:
    def test_first_run_records(self, tmp_path):
        path = tmp_path / "baselines.json"
        store = BaselineStore(str(path), slack=1.5)
        check = store.check("d2n", 1.0)
        assert check["recorded"] and check["passed"]
        assert json.loads(path.read_text()) == {"d2n": 1.0}

    def test_later_runs_compare(self, tmp_path):
        path = str(tmp_path / "baselines.json")
        BaselineStore(path, slack=1.5).check("holder", 2.0)
        store = BaselineStore(path, slack=1.5)
        assert store.check("holder", 2.9)["passed"]
        assert not store.check("holder", 3.1)["passed"]


class TestHolderFit:
    def test_constant_function(self, interval_cloud):
        fit = holder_fit(interval_cloud, np.full(interval_cloud.n, 4.0), 0.1)
        assert all(q == 0.0 for q in fit.quotients)
        assert fit.gamma_star == pytest.approx(1.0)

    def test_lipschitz_function(self, interval_cloud):
        fit = holder_fit(interval_cloud, interval_cloud.points[:, 0], 0.1)
        assert fit.quotients[-1] <= 1.0
        assert fit.vertices == interval_cloud.n
        assert not fit.subsampled

    def test_subsampled_region(self, interval_cloud):
        fit = holder_fit(interval_cloud, interval_cloud.points[:, 0], 0.1, subsample_limit=50)
        assert fit.subsampled
        assert fit.vertices == 50

    def test_empty_region(self, interval_cloud):
        region = Domain.interval(2.0, 3.0)
        with pytest.raises(InputError):
            holder_fit(interval_cloud, interval_cloud.points[:, 0], 0.1, region)

    def test_exponents_checked(self, interval_cloud):
        with pytest.raises(ConfigurationError):
            holder_fit(interval_cloud, interval_cloud.points[:, 0], 0.1, gammas=[0.5, 1.5])

    def test_subsample_close_to_all_pairs(self, square_cloud):
        u = np.exp(-10.0 * np.sum((square_cloud.points - 0.5) ** 2, axis=1))
        gammas = [0.3, 0.6, 1.0]
        full = holder_fit(square_cloud, u, 0.1, gammas=gammas)
        sub = holder_fit(square_cloud, u, 0.1, gammas=gammas, seed=9, subsample_limit=500)
        assert not full.subsampled and sub.subsampled
        for q_full, q_sub in zip(full.quotients, sub.quotients):
            assert q_sub <= q_full + 1e-12
            assert q_sub >= 0.9 * q_full


class TestBoundaryProbe:
    def test_exact_boundary_data(self, interval_cloud):
        g = make_function("constant", 1, c=2.0)
        report = boundary_continuity_probe(interval_cloud, np.full(interval_cloud.n, 2.0), g, [0.05, 0.1])
        assert [row[1] for row in report.rows] == [0.0, 0.0]
        assert report.passed

    def test_modulus_grows_with_delta(self, interval_cloud):
        g = make_function("affine", 1, slope=[1.0])
        report = boundary_continuity_probe(interval_cloud, g(interval_cloud.points), g, [0.2, 0.05, 0.1])
        assert [row[0] for row in report.rows] == [0.05, 0.1, 0.2]
        assert all(row[1] < row[0] for row in report.rows)
        assert report.criteria["nondecreasing"]


class TestExpansionScan:
    def test_quadratic_expansion(self):
        domain = Domain.box([-1.0, -1.0], [1.0, 1.0])
        report = expansion_scan(
            make_function("quadratic", 2), [0.5, 0.0], Density.uniform(domain), [0.2, 0.1, 0.05, 0.025], 0.5, 0.5
        )
        assert report.rows[0][2] == pytest.approx(1.0)
        errors = [row[3] for row in report.rows]
        assert errors == sorted(errors, reverse=True)
        assert report.criteria["expansion_accurate"]

    def test_point_near_boundary(self, unit_square):
        with pytest.raises(InputError):
            expansion_scan(make_function("quadratic", 2), [0.05, 0.5], Density.uniform(unit_square), [0.1], 0.5, 0.5)


class TestConcentration:
    def test_expected_ball_fraction(self, unit_interval):
        result = cardinality_expectation(unit_interval, Density.uniform(unit_interval), [0.5], 0.1, 1000, range(20))
        assert result["mu"] == pytest.approx(0.2)
        assert abs(result["mean"] - result["mu"]) <= 5.0 * result["sigma"]

    def test_evaluation_grid_margin(self, unit_square):
        grid = evaluation_grid(unit_square, points_per_axis=11, margin=0.05)
        assert grid.shape == (81, 2)
        assert np.all(unit_square.distance_to_boundary(grid) > 0.05)


class TestConvergenceStudy:
    @staticmethod
    def tug_problem(boundary, strip_width=None):
        def make(eps):
            return ProblemSpec(
                operator=OperatorSpec("tug_of_war", TugOfWarParams(p=2.0, epsilon=eps, dim=1)),
                boundary=boundary,
                strip_width=strip_width,
                tolerance=1e-6,
            )

        return make

    def test_everything_in_the_strip_is_exact(self, unit_interval):
        report = convergence_study(
            unit_interval,
            Density.uniform(unit_interval),
            [(200, 0.2), (400, 0.1)],
            self.tug_problem(0.7, strip_width=1.0),
            make_function("constant", 1, c=0.7),
            seed=1,
            grid_points=21,
            target_error=1e-12,
        )
        assert [row[2] for row in report.rows] == [0.0, 0.0]
        assert [row[4] for row in report.rows] == [0, 0]
        assert report.criteria["final_within_target"]
        assert report.extras["grid_size"] == len(evaluation_grid(unit_interval, 21, 0.05))

    def test_two_level_ladder(self, unit_interval):
        report = convergence_study(
            unit_interval,
            Density.uniform(unit_interval),
            [(300, 0.2), (600, 0.1)],
            self.tug_problem(lambda pts: pts[:, 0]),
            make_function("affine", 1, slope=[1.0]),
            seed=2,
            grid_points=41,
            target_error=1e-9,
        )
        assert [row[:2] for row in report.rows] == [[300, 0.2], [600, 0.1]]
        errors = [row[2] for row in report.rows]
        assert all(0.0 < e < 0.5 for e in errors)
        assert all(row[5] for row in report.rows)
        for n, eps, _, compat, *_ in report.rows:
            assert compat == pytest.approx(n * eps ** 8.5)
        assert report.extras["fit"] == fit_loglog_slope([0.2, 0.1], errors).to_dict()
        assert "strictly_decreasing" in report.criteria
        assert not report.criteria["final_within_target"]

    def test_levels_must_shrink(self, unit_interval):
        with pytest.raises(ConfigurationError):
            convergence_study(
                unit_interval,
                Density.uniform(unit_interval),
                [(100, 0.1), (200, 0.2)],
                self.tug_problem(0.0),
                make_function("constant", 1),
            )


class TestDiscreteToNonlocal:
    def test_report_structure(self, unit_interval):
        cloud = sample_cloud(unit_interval, Density.uniform(unit_interval), 400, seed=4)
        params = OperatorParams.from_beta(0.5, epsilon=0.1)
        tmap = build_transport(cloud, 0.1 ** 1.5)
        u = np.cos(3.0 * cloud.points[:, 0])
        report = check_discrete_to_nonlocal(cloud, tmap, params, u, [[0.3], [0.5], [0.7]])
        assert len(report.rows) == 3
        assert all(len(row) == len(report.columns) for row in report.rows)
        assert report.extras["max_violation"] >= 0.0
        assert report.extras["max_beta_gap"] >= 0.0
        norm = float(np.max(np.abs(u)))
        for row in report.rows:
            split = row[-3] + row[-2] + row[-1]
            assert abs(split) / (norm * 0.1 ** 2) == pytest.approx(row[-4], rel=1e-9, abs=1e-9)

    def test_sample_points_keep_distance(self, interval_cloud):
        params = OperatorParams.from_beta(0.5, epsilon=0.1)
        tmap = build_transport(interval_cloud, 0.1 ** 1.5)
        with pytest.raises(InputError):
            check_discrete_to_nonlocal(interval_cloud, tmap, params, np.zeros(interval_cloud.n), [[0.05]])


class TestExperimentService:
    def test_experiment_block_required(self):
        with pytest.raises(ConfigurationError):
            experiment_service.run(RunConfig())

    def test_concentration_run(self):
        config = RunConfig.model_validate(
            {
                "seed": 3,
                "cloud": {"n": 5000},
                "experiment": {"name": "concentration", "epsilons": [0.2, 0.1, 0.05], "sample_points": [[0.5]]},
            }
        )
        report = experiment_service.run(config)
        assert [row[0] for row in report.rows] == [0.2, 0.1, 0.05]
        assert "fit" in report.extras

    def test_barrier_run(self, tmp_path):
        config = RunConfig.model_validate(
            {
                "operator": {"epsilon": 0.05},
                "experiment": {"name": "barrier", "sample_count": 5, "barrier": {"pole": [0.0]}},
            }
        )
        report = experiment_service.run(config, BaselineStore(str(tmp_path / "b.json")))
        assert report.criteria["no_violations"]
        assert report.extras["samples"] == 5

    def test_holder_region_takes_the_run_dimension(self):
        config = RunConfig.model_validate(
            {
                "seed": 5,
                "domain": {"dim": 2},
                "cloud": {"n": 800},
                "operator": {"kind": "tug_of_war", "p": 4.0, "epsilon": 0.2},
                "problem": {"boundary": {"name": "cos_x1"}},
                "experiment": {
                    "name": "holder",
                    "gammas": [0.3, 1.0],
                    "region": {"kind": "box", "lower": [0.3, 0.3], "upper": [0.7, 0.7]},
                },
            }
        )
        assert config.experiment.region.dim == 2
        report = experiment_service.run(config)
        assert report.extras["probe_gamma"] == 0.3
        assert 2 <= report.extras["fits"][0]["vertices"] < 800
        assert len(report.rows) == 2

    def test_region_dimension_defaults_to_one(self):
        config = RunConfig.model_validate(
            {"experiment": {"name": "holder", "region": {"kind": "box", "lower": [0.2], "upper": [0.8]}}}
        )
        assert config.experiment.region.dim == 1
