"""Tests for the dynamic-programming solver and the comparison-based verifiers."""
import math

import numpy as np
import pytest

from app.core.errors import ConfigurationError
from app.services.geometry import Density, boundary_strip, interior_vertices, sample_cloud
from app.services.graph_operators import OperatorParams, OperatorSpec, TugOfWarParams
from app.services.solver import (
    DPPSolver,
    ProblemSpec,
    barrier_constant,
    check_comparison,
    solve_dpp,
    uniform_bound_check,
    verify_pucci_bounds,
)


@pytest.fixture
def pucci_params():
    return OperatorParams.from_beta(0.5, epsilon=0.1, lam=1.0, tau=1.0)


@pytest.fixture
def pucci_problem(pucci_params):
    return ProblemSpec(
        operator=OperatorSpec("pucci_max", pucci_params),
        source=lambda pts: np.sin(6.0 * pts[:, 0]),
        boundary=lambda pts: pts[:, 0],
    )


class TestProblemSpec:
    def test_unknown_sweep(self, pucci_params):
        with pytest.raises(ConfigurationError):
            ProblemSpec(operator=OperatorSpec("pucci_max", pucci_params), sweep="random")

    def test_default_width_is_reach(self, pucci_params):
        spec = ProblemSpec(operator=OperatorSpec("pucci_max", pucci_params))
        assert spec.width == pytest.approx(0.11)
        tug = ProblemSpec(operator=OperatorSpec("tug_of_war", TugOfWarParams(p=2.0, epsilon=0.1, dim=1)))
        assert tug.width == pytest.approx(0.1)


class TestSolve:
    def test_constant_boundary_converges_in_one_sweep(self, interval_cloud, pucci_params):
        spec = ProblemSpec(operator=OperatorSpec("pucci_max", pucci_params), boundary=1.0)
        solution, report = solve_dpp(interval_cloud, spec)
        assert report.converged
        assert report.iterations == 1
        assert np.all(solution.values == 1.0)
        assert report.residual == 0.0

    def test_averaging_respects_boundary_range(self, interval_cloud):
        spec = ProblemSpec(
            operator=OperatorSpec("tug_of_war", TugOfWarParams(p=2.0, epsilon=0.1, dim=1)),
            boundary=lambda pts: 2.0 * pts[:, 0] - 0.5,
        )
        solution, report = solve_dpp(interval_cloud, spec)
        assert report.converged
        assert report.residual <= 1e-6
        strip = boundary_strip(interval_cloud, spec.width)
        g = solution.values[strip]
        assert np.all(solution.values >= g.min() - 1e-9)
        assert np.all(solution.values <= g.max() + 1e-9)

    def test_affine_boundary_data_is_reproduced(self, unit_interval):
        cloud = sample_cloud(unit_interval, Density.uniform(unit_interval), 2000, seed=7)
        spec = ProblemSpec(
            operator=OperatorSpec("tug_of_war", TugOfWarParams(p=2.0, epsilon=0.1, dim=1)),
            boundary=lambda pts: pts[:, 0],
            tolerance=1e-6,
        )
        solution, report = solve_dpp(cloud, spec)
        assert spec.operator.alpha == 0.0
        assert report.converged
        assert np.max(np.abs(solution.values - cloud.points[:, 0])) <= 0.05

    def test_residual_matches_tolerance(self, interval_cloud, pucci_problem):
        solution, report = solve_dpp(interval_cloud, pucci_problem)
        assert report.converged
        assert report.residual <= 1e-6
        assert report.fallback_count >= 0
        assert report.strip_size + report.interior_size == interval_cloud.n

    def test_gauss_seidel_agrees_with_jacobi(self, unit_interval, pucci_params):
        cloud = sample_cloud(unit_interval, Density.uniform(unit_interval), 80, seed=3)
        base = dict(
            operator=OperatorSpec("pucci_min", pucci_params),
            source=1.0,
            boundary=lambda pts: pts[:, 0] ** 2,
            tolerance=1e-10,
        )
        jacobi, _ = solve_dpp(cloud, ProblemSpec(**base))
        seidel, report = solve_dpp(cloud, ProblemSpec(sweep="gauss_seidel", **base))
        assert report.converged
        np.testing.assert_allclose(seidel.values, jacobi.values, atol=1e-6)

    def test_iteration_cap_is_reported(self, interval_cloud, pucci_problem):
        pucci_problem.max_iterations = 1
        _, report = solve_dpp(interval_cloud, pucci_problem)
        assert not report.converged
        assert report.iterations == 1
        assert report.to_dict()["converged"] is False


class TestSweep:
    def test_monotone(self, interval_cloud, pucci_problem, rng):
        solver = DPPSolver(interval_cloud, pucci_problem)
        u = rng.normal(size=interval_cloud.n)
        v = u + np.abs(rng.normal(size=interval_cloud.n))
        assert np.all(solver.sweep(u) <= solver.sweep(v) + 1e-12)

    def test_nonexpansive(self, interval_cloud, pucci_problem, rng):
        solver = DPPSolver(interval_cloud, pucci_problem)
        for _ in range(5):
            u = rng.normal(size=interval_cloud.n)
            v = rng.normal(size=interval_cloud.n)
            gap = np.max(np.abs(solver.sweep(u) - solver.sweep(v)))
            assert gap <= np.max(np.abs(u - v)) + 1e-12

    def test_strip_values_untouched(self, interval_cloud, pucci_problem, rng):
        solver = DPPSolver(interval_cloud, pucci_problem)
        u = rng.normal(size=interval_cloud.n)
        assert np.array_equal(solver.sweep(u)[solver.strip], u[solver.strip])


class TestPucciBounds:
    def test_spike_is_reported(self, interval_cloud, pucci_params):
        u = np.zeros(interval_cloud.n)
        strip = boundary_strip(interval_cloud, pucci_params.reach)
        interior = interior_vertices(interval_cloud, strip)
        spike = int(interior[len(interior) // 2])
        u[spike] = -1.0
        report = verify_pucci_bounds(interval_cloud, pucci_params, u, 1.0, interior)
        assert not report.ok
        assert any(v.vertex == spike and v.operator == "min" for v in report.violations)

    def test_zero_function_passes(self, interval_cloud, pucci_params):
        strip = boundary_strip(interval_cloud, pucci_params.reach)
        report = verify_pucci_bounds(
            interval_cloud, pucci_params, np.zeros(interval_cloud.n), 0.0, interior_vertices(interval_cloud, strip)
        )
        assert report.ok

    def test_solution_satisfies_its_bounds(self, interval_cloud, pucci_params):
        spec = ProblemSpec(
            operator=OperatorSpec("pucci_max", pucci_params),
            source=lambda pts: np.cos(5.0 * pts[:, 0]),
            boundary=0.0,
            tolerance=1e-10,
        )
        solver = DPPSolver(interval_cloud, spec)
        solution, _ = solver.solve()
        report = verify_pucci_bounds(interval_cloud, pucci_params, solution, 1.0, solver.interior)
        assert report.ok


class TestComparison:
    def test_shifted_function_dominates(self, interval_cloud, pucci_params, rng):
        u = rng.normal(size=interval_cloud.n)
        strip = boundary_strip(interval_cloud, pucci_params.reach)
        report = check_comparison(interval_cloud, pucci_params, u, u + 0.5, strip)
        assert report.ok
        assert report.preconditions_hold

    def test_violations_listed(self, interval_cloud, pucci_params, rng):
        v = rng.normal(size=interval_cloud.n)
        strip = boundary_strip(interval_cloud, pucci_params.reach)
        report = check_comparison(interval_cloud, pucci_params, v + 0.5, v, strip)
        assert len(report.violations) == interval_cloud.n
        assert report.max_excess == pytest.approx(0.5)
        assert not report.preconditions_hold
        assert "u > v on the strip" in report.precondition_failures


class TestUniformBound:
    def test_barrier_constant_overflow(self):
        assert barrier_constant(1.0, 1.0) == pytest.approx(4.0)
        assert math.isinf(barrier_constant(1e6, 3.0))

    def test_zero_source_bound_is_boundary_max(self, interval_cloud, pucci_params):
        spec = ProblemSpec(operator=OperatorSpec("pucci_max", pucci_params), boundary=0.5)
        solution, _ = solve_dpp(interval_cloud, spec)
        check = uniform_bound_check(
            interval_cloud, pucci_params, solution, 0.0, lambda pts: np.full(len(pts), 0.5), spec.width
        )
        assert check.status == "pass"
        assert check.bound == pytest.approx(0.5)
        assert check.sigma == pytest.approx(2.0 * check.sigma0)

    def test_broken_pucci_bounds_are_a_precondition_failure(self, interval_cloud, pucci_params):
        u = np.zeros(interval_cloud.n)
        strip = boundary_strip(interval_cloud, pucci_params.reach)
        u[interior_vertices(interval_cloud, strip)[0]] = -5.0
        check = uniform_bound_check(interval_cloud, pucci_params, u, 0.0, lambda pts: np.zeros(len(pts)))
        assert check.status == "precondition_failed"
        assert not check.passed
