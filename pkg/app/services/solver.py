"""
Fixed-point solver for L u = f on the interior vertices with u = g on the
boundary strip, and the verifiers built on the discrete comparison
principle.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import ConfigurationError, InputError
from app.core.parallel import map_chunks
from app.services.geometry import DataCloud, GridIndex, boundary_strip, default_cell, interior_vertices
from app.services.graph_operators import (
    GraphFunction,
    OperatorParams,
    OperatorSpec,
    Stencil,
    apply_stencil,
    build_stencil,
    eval_field,
    update_rows,
)
from app.services.nonlocal_operators import BarrierConstants

logger = logging.getLogger(__name__)

SWEEPS = ("jacobi", "gauss_seidel")
BOUND_TOLERANCE = 1e-8
# exp() overflows above this
LOG_FLOAT_MAX = math.log(np.finfo(float).max)

FunctionLike = Union[Callable[[np.ndarray], np.ndarray], float]


def _as_callable(func: FunctionLike) -> Callable[[np.ndarray], np.ndarray]:
    if callable(func):
        return func
    value = float(func)
    return lambda pts: np.full(len(pts), value)


@dataclass
class ProblemSpec:
    """Operator, data and iteration controls of a Dirichlet problem on the cloud."""

    operator: OperatorSpec
    source: FunctionLike = 0.0
    boundary: FunctionLike = 0.0
    strip_width: Optional[float] = None
    tolerance: float = 1e-8
    max_iterations: int = 100_000
    sweep: str = "jacobi"

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ConfigurationError("Solver tolerance must be positive")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be at least 1")
        if self.sweep not in SWEEPS:
            raise ConfigurationError(f"Unknown sweep order '{self.sweep}', choose from {SWEEPS}")
        if self.operator.beta <= 0:
            raise ConfigurationError("The solver needs beta > 0")
        if self.strip_width is not None and self.strip_width <= 0:
            raise ConfigurationError("Strip width must be positive")

    @property
    def width(self) -> float:
        """Boundary strip width; defaults to the operator's reach."""
        return self.strip_width if self.strip_width is not None else self.operator.params.reach


@dataclass
class SolveReport:
    iterations: int
    residual: float
    last_change: float
    fallback_count: int
    wall_ms: float
    converged: bool
    strip_size: int = 0
    interior_size: int = 0

    def to_dict(self) -> Dict:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "last_change": self.last_change,
            "fallbacks": self.fallback_count,
            "wall_ms": self.wall_ms,
            "converged": self.converged,
            "strip_size": self.strip_size,
            "interior_size": self.interior_size,
        }


class DPPSolver:
    """Monotone value iteration u <- alpha * pair term + beta * mean - eps**2 f."""

    def __init__(self, cloud: DataCloud, spec: ProblemSpec):
        self.cloud = cloud
        self.spec = spec
        self.strip = boundary_strip(cloud, spec.width)
        self.interior = interior_vertices(cloud, self.strip)
        self.eps2 = spec.operator.epsilon ** 2
        self.boundary_values = np.asarray(_as_callable(spec.boundary)(cloud.points[self.strip]), dtype=float)
        self.source_values = np.asarray(_as_callable(spec.source)(cloud.points[self.interior]), dtype=float)
        if not np.all(np.isfinite(self.boundary_values)) or not np.all(np.isfinite(self.source_values)):
            raise InputError("Boundary data and source must be finite at the vertices")
        self.stencil: Stencil = build_stencil(cloud, spec.operator, self.interior)
        logger.info(
            f"Solver ready: {len(self.strip)} strip and {len(self.interior)} interior vertices, "
            f"operator={spec.operator.kind}, sweep={spec.sweep}"
        )

    def initial_guess(self) -> np.ndarray:
        """g on the strip, g of the nearest strip vertex elsewhere."""
        u = np.empty(self.cloud.n)
        u[self.strip] = self.boundary_values
        if len(self.interior):
            strip_points = self.cloud.points[self.strip]
            index = GridIndex(strip_points, default_cell(self.cloud.domain, len(strip_points)))
            nearest = index.nearest(self.cloud.points[self.interior])
            u[self.interior] = self.boundary_values[nearest]
        return u

    def sweep(self, u: np.ndarray) -> np.ndarray:
        """One sweep of the fixed-point map; strip values are left untouched."""
        new = np.array(u, dtype=float, copy=True)
        rows = len(self.interior)
        if rows == 0:
            return new
        if self.spec.sweep == "jacobi":
            parts = map_chunks(lambda s, e: update_rows(self.stencil, u, s, e), rows, 2048)
            new[self.interior] = np.concatenate(parts) - self.eps2 * self.source_values
            return new
        for row, vertex in enumerate(self.interior):
            new[vertex] = update_rows(self.stencil, new, row, row + 1)[0] - self.eps2 * self.source_values[row]
        return new

    def residual(self, u: np.ndarray) -> float:
        """sup |L u - f| over the interior vertices."""
        if len(self.interior) == 0:
            return 0.0
        return float(np.max(np.abs(apply_stencil(self.stencil, u) - self.source_values)))

    def solve(self, initial: Optional[np.ndarray] = None) -> Tuple[GraphFunction, SolveReport]:
        started = time.perf_counter()
        u = self.initial_guess() if initial is None else np.array(initial, dtype=float)
        u[self.strip] = self.boundary_values
        threshold = self.spec.tolerance * self.eps2
        change = 0.0
        iterations = 0
        converged = len(self.interior) == 0
        while not converged and iterations < self.spec.max_iterations:
            new = self.sweep(u)
            change = float(np.max(np.abs(new - u)))
            u = new
            iterations += 1
            converged = change <= threshold

        residual = self.residual(u)
        report = SolveReport(
            iterations=iterations,
            residual=residual,
            last_change=change,
            fallback_count=self.stencil.fallback_count,
            wall_ms=1000.0 * (time.perf_counter() - started),
            converged=converged,
            strip_size=len(self.strip),
            interior_size=len(self.interior),
        )
        if converged:
            logger.info(f"Converged after {iterations} sweeps, residual {residual:.3e}")
        else:
            logger.warning(
                f"No convergence after {iterations} sweeps: last change {change:.3e} > {threshold:.3e}"
            )
        return GraphFunction(values=u, cloud=self.cloud), report


def solve_dpp(cloud: DataCloud, spec: ProblemSpec) -> Tuple[GraphFunction, SolveReport]:
    """Solve L u = f in the interior with u = g on the boundary strip."""
    return DPPSolver(cloud, spec).solve()


@dataclass
class BoundViolation:
    vertex: int
    operator: str
    value: float
    bound: float


@dataclass
class PucciBoundReport:
    rho: float
    checked: int
    violations: List[BoundViolation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_pucci_bounds(
    cloud: DataCloud,
    params: OperatorParams,
    u,
    rho: float,
    interior: Sequence[int],
) -> PucciBoundReport:
    """Lists interior vertices with L+ u < -rho or L- u > rho beyond 1e-8 / eps**2."""
    vertices = np.asarray(interior, dtype=np.int64)
    report = PucciBoundReport(rho=float(rho), checked=len(vertices))
    if len(vertices) == 0:
        return report
    slack = BOUND_TOLERANCE / params.epsilon ** 2
    upper = eval_field(cloud, OperatorSpec("pucci_max", params), u, vertices)
    lower = eval_field(cloud, OperatorSpec("pucci_min", params), u, vertices)
    for row in np.flatnonzero(upper < -rho - slack):
        report.violations.append(BoundViolation(int(vertices[row]), "max", float(upper[row]), -rho))
    for row in np.flatnonzero(lower > rho + slack):
        report.violations.append(BoundViolation(int(vertices[row]), "min", float(lower[row]), rho))
    if report.violations:
        logger.warning(f"{len(report.violations)} Pucci bound violations with rho={rho}")
    return report


@dataclass
class ComparisonReport:
    violations: List[int]
    max_excess: float
    preconditions_hold: bool
    precondition_failures: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_comparison(
    cloud: DataCloud,
    params: OperatorParams,
    u,
    v,
    strip: Sequence[int],
    operator_tolerance: float = 1e-6,
) -> ComparisonReport:
    """
    Checks u <= v + 1e-8 at every vertex.

    The hypotheses (u <= v on the strip and L+ u >= L+ v inside) are
    re-verified; failures are listed but do not stop the check.
    """
    uv = np.asarray(getattr(u, "values", u), dtype=float)
    vv = np.asarray(getattr(v, "values", v), dtype=float)
    if uv.shape != (cloud.n,) or vv.shape != (cloud.n,):
        raise InputError("Both functions need one value per vertex")
    strip = np.asarray(strip, dtype=np.int64)
    interior = interior_vertices(cloud, strip)
    failures = []
    if np.any(uv[strip] > vv[strip] + BOUND_TOLERANCE):
        failures.append("u > v on the strip")
    if len(interior):
        spec = OperatorSpec("pucci_max", params)
        gap = eval_field(cloud, spec, uv, interior) - eval_field(cloud, spec, vv, interior)
        if np.any(gap < -operator_tolerance):
            failures.append(f"L+ u < L+ v at {int(np.sum(gap < -operator_tolerance))} interior vertices")
    excess = uv - vv
    violations = np.flatnonzero(excess > BOUND_TOLERANCE).tolist()
    if violations:
        logger.warning(f"Comparison fails at {len(violations)} vertices, max excess {excess.max():.3e}")
    return ComparisonReport(
        violations=violations,
        max_excess=float(max(excess.max(), 0.0)),
        preconditions_hold=not failures,
        precondition_failures=failures,
    )


@dataclass
class UniformBoundReport:
    sup_u: float
    sup_g: float
    c_omega: float
    bound: float
    passed: bool
    status: str
    sigma: float
    sigma0: float
    pole: List[float]
    R: float

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


def barrier_constant(sigma: float, R: float) -> float:
    """C = 2 (R**2 + 1)**sigma / sigma, +inf when it overflows."""
    log_c = math.log(2.0) + sigma * math.log1p(R * R) - math.log(sigma)
    return math.exp(log_c) if log_c < LOG_FLOAT_MAX else math.inf


def uniform_bound_check(
    cloud: DataCloud,
    params: OperatorParams,
    u,
    rho: float,
    g,
    strip_width: Optional[float] = None,
) -> UniformBoundReport:
    """
    Checks sup|u| <= sup|g| + C rho with the barrier constant of a pole at
    distance 1 from the domain and sigma = 2 sigma0(1, R).

    The Pucci bounds are verified first; if they fail the result is a
    precondition failure rather than a bound failure.
    """
    values = np.asarray(getattr(u, "values", u), dtype=float)
    strip = boundary_strip(cloud, strip_width or params.reach)
    g_values = np.asarray(g(cloud.points[strip]) if callable(g) else g, dtype=float)
    pole = cloud.domain.exterior_pole(1.0)
    R = cloud.domain.farthest_distance(pole)
    s0 = BarrierConstants.compute(params, cloud.density, 1.0, R).sigma0
    sigma = 2.0 * s0
    c_omega = barrier_constant(sigma, R)
    sup_u = float(np.max(np.abs(values)))
    sup_g = float(np.max(np.abs(g_values))) if len(g_values) else 0.0
    bound = sup_g if rho == 0 else sup_g + c_omega * rho

    bounds = verify_pucci_bounds(cloud, params, values, rho, interior_vertices(cloud, strip))
    if not bounds.ok:
        status, passed = "precondition_failed", False
    else:
        passed = sup_u <= bound + BOUND_TOLERANCE
        status = "pass" if passed else "fail"
    logger.info(f"Uniform bound check: sup|u|={sup_u:.6g}, bound={bound:.6g}, status={status}")
    return UniformBoundReport(
        sup_u=sup_u,
        sup_g=sup_g,
        c_omega=c_omega,
        bound=bound,
        passed=passed,
        status=status,
        sigma=sigma,
        sigma0=s0,
        pole=pole.tolist(),
        R=R,
    )
