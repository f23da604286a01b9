"""Run configuration models (one JSON file per run)."""
import hashlib
import json
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.errors import ConfigurationError
from app.services.functions import AnalyticFunction, make_function
from app.services.geometry import Density, Domain
from app.services.graph_operators import OperatorParams, OperatorSpec, TugOfWarParams
from app.services.nonlocal_operators import NonlocalQuadrature
from app.services.solver import ProblemSpec

SCHEMA_VERSION = 1


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class DomainConfig(_Block):
    """Box, ball or annulus in dimension 1-3."""

    kind: Literal["box", "ball", "annulus"] = "box"
    dim: int = Field(default=1, ge=1, le=3)
    lower: Optional[List[float]] = None
    upper: Optional[List[float]] = None
    center: Optional[List[float]] = None
    radius: Optional[float] = Field(default=None, gt=0)
    inner_radius: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def check_shape(self):
        for name in ("lower", "upper", "center"):
            value = getattr(self, name)
            if value is not None and len(value) != self.dim:
                raise ValueError(f"{name} must have {self.dim} components")
        if self.kind == "box" and self.lower is not None and self.upper is not None:
            if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
                raise ValueError("box needs lower < upper in every coordinate")
        if self.kind == "annulus":
            if self.inner_radius is None:
                raise ValueError("annulus needs inner_radius")
            if self.inner_radius >= (self.radius or 1.0):
                raise ValueError("annulus needs inner_radius < radius")
        return self

    def build(self) -> Domain:
        if self.kind == "box":
            return Domain.box(self.lower or [0.0] * self.dim, self.upper or [1.0] * self.dim)
        center = self.center or [0.0] * self.dim
        if self.kind == "ball":
            return Domain.ball(center, self.radius or 1.0)
        return Domain.annulus(center, self.inner_radius, self.radius or 1.0)


class DensityConfig(_Block):
    """Uniform or affine density; phi0/phi1 are optional declared bounds."""

    kind: Literal["uniform", "affine"] = "uniform"
    offset: float = 1.0
    gradient: Optional[List[float]] = None
    phi0: Optional[float] = Field(default=None, gt=0)
    phi1: Optional[float] = Field(default=None, gt=0)

    def build(self, domain: Domain) -> Density:
        if self.kind == "uniform":
            density = Density.uniform(domain)
        else:
            density = Density.affine(domain, offset=self.offset, gradient=self.gradient)
        if density.phi0 <= 0:
            raise ConfigurationError("density.phi0: density must be bounded away from zero")
        if self.phi0 is not None and density.phi0 < self.phi0 - 1e-12:
            raise ConfigurationError(f"density.phi0: density drops to {density.phi0:.6g} below declared {self.phi0}")
        if self.phi1 is not None and density.phi1 > self.phi1 + 1e-12:
            raise ConfigurationError(f"density.phi1: density reaches {density.phi1:.6g} above declared {self.phi1}")
        return density


class CloudConfig(_Block):
    n: int = Field(default=1000, ge=1)


class PartitionConfig(_Block):
    enabled: bool = True
    delta: Optional[float] = Field(default=None, gt=0)
    exponent_a: float = Field(default=0.5, ge=0)
    c0: Optional[float] = Field(default=None, gt=0)
    fallback: bool = True


class OperatorConfig(_Block):
    """Operator family and its parameters; alpha defaults to 1 - beta."""

    kind: Literal["pucci_max", "pucci_min", "example1", "tug_of_war"] = "pucci_max"
    epsilon: float = Field(default=0.1, gt=0)
    alpha: Optional[float] = Field(default=None, ge=0, lt=1)
    beta: Optional[float] = Field(default=None, gt=0, le=1)
    lam: float = Field(default=1.0, ge=1, alias="lambda")
    tau: float = Field(default=1.0, ge=1)
    p: Optional[float] = Field(default=None, ge=2)
    fallback: Literal["nearest", "strict"] = "nearest"
    epsilon_max: float = Field(default=1.0, gt=0)

    @model_validator(mode="after")
    def check_weights(self):
        if self.kind == "tug_of_war":
            if self.p is None:
                raise ValueError("tug_of_war needs p")
            return self
        if self.alpha is None and self.beta is None:
            self.beta = 0.5
        if self.beta is None:
            self.beta = 1.0 - self.alpha
        if self.alpha is None:
            self.alpha = 1.0 - self.beta
        if abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise ValueError("alpha + beta must equal 1")
        return self

    def params(self, dim: int, epsilon: Optional[float] = None) -> Union[OperatorParams, TugOfWarParams]:
        eps = self.epsilon if epsilon is None else epsilon
        if self.kind == "tug_of_war":
            return TugOfWarParams(p=self.p, epsilon=eps, dim=dim)
        return OperatorParams(
            alpha=self.alpha,
            beta=self.beta,
            lam=self.lam,
            tau=self.tau,
            epsilon=eps,
            fallback=self.fallback,
            epsilon_max=self.epsilon_max,
        )

    def spec(self, dim: int, epsilon: Optional[float] = None) -> OperatorSpec:
        return OperatorSpec(kind=self.kind, params=self.params(dim, epsilon))


class FunctionConfig(_Block):
    """A library function by name, e.g. {"name": "affine", "params": {"slope": [1.0]}}."""

    name: str = "constant"
    params: Dict[str, Any] = Field(default_factory=dict)

    def build(self, dim: int) -> AnalyticFunction:
        return make_function(self.name, dim, **self.params)


class ProblemConfig(_Block):
    source: FunctionConfig = Field(default_factory=FunctionConfig)
    boundary: FunctionConfig = Field(default_factory=FunctionConfig)
    strip_width: Optional[float] = Field(default=None, gt=0)
    tolerance: float = Field(default=1e-8, gt=0)
    max_iterations: int = Field(default=100_000, ge=1)
    sweep: Literal["jacobi", "gauss_seidel"] = "jacobi"


class QuadratureConfig(_Block):
    directions: Optional[int] = Field(default=None, ge=1)
    radial_levels: Optional[int] = Field(default=None, ge=1)
    h_directions: Optional[int] = Field(default=None, ge=1)
    h_levels: Optional[int] = Field(default=None, ge=1)
    ball_resolution: Optional[int] = Field(default=None, ge=1)

    def build(self) -> NonlocalQuadrature:
        return NonlocalQuadrature(**{k: v for k, v in self.model_dump().items() if v is not None})


class LevelConfig(_Block):
    n: int = Field(ge=1)
    epsilon: float = Field(gt=0)


class BarrierConfig(_Block):
    pole: Optional[List[float]] = None
    r: float = Field(default=0.25, gt=0)
    R: float = Field(default=2.5, gt=0)
    sigma: Optional[float] = Field(default=None, gt=0)
    sigma_factor: float = Field(default=2.0, gt=0)
    A: float = Field(default=1.0, ge=0)
    B: float = Field(default=0.0, ge=0)


class ExperimentConfig(_Block):
    """Experiment choice; each experiment reads the fields it needs."""

    name: Literal["concentration", "d2n", "holder", "converge", "boundary", "expansion", "barrier", "bound"]
    epsilons: List[float] = Field(default_factory=list)
    sample_points: Optional[List[List[float]]] = None
    sample_count: int = Field(default=20, ge=1)
    point: Optional[List[float]] = None
    function: Optional[FunctionConfig] = None
    sign: Literal["max", "min"] = "max"
    gammas: List[float] = Field(default_factory=lambda: [0.1 * k for k in range(1, 11)])
    growth_factor: float = Field(default=2.0, gt=1)
    region: Optional[DomainConfig] = None
    deltas: List[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2])
    levels: List[LevelConfig] = Field(default_factory=list)
    grid_points: int = Field(default=50, ge=2)
    grid_margin: float = Field(default=0.05, ge=0)
    partition_exponent: float = Field(default=1.5, gt=0)
    target_error: Optional[float] = Field(default=None, gt=0)
    seeds: int = Field(default=1, ge=1)
    rho: float = Field(default=1.0, ge=0)
    barrier: BarrierConfig = Field(default_factory=BarrierConfig)
    slope_threshold: Optional[float] = None
    baseline_key: Optional[str] = None

    @model_validator(mode="after")
    def check_grids(self):
        if any(e <= 0 for e in self.epsilons):
            raise ValueError("epsilons must be positive")
        if any(not 0 < g <= 1 for g in self.gammas):
            raise ValueError("gammas must lie in (0, 1]")
        if any(d <= 0 for d in self.deltas):
            raise ValueError("deltas must be positive")
        return self


class RunConfig(_Block):
    """Top-level run configuration; unknown keys are rejected at every level."""

    version: Literal[1] = SCHEMA_VERSION
    command: Optional[Literal["generate", "solve", "experiment"]] = None
    seed: int = Field(default=0, ge=0)
    output_dir: Optional[str] = None
    threads: Optional[int] = Field(default=None, ge=0)
    domain: DomainConfig = Field(default_factory=DomainConfig)
    density: DensityConfig = Field(default_factory=DensityConfig)
    cloud: CloudConfig = Field(default_factory=CloudConfig)
    partition: PartitionConfig = Field(default_factory=PartitionConfig)
    operator: OperatorConfig = Field(default_factory=OperatorConfig)
    problem: ProblemConfig = Field(default_factory=ProblemConfig)
    quadrature: QuadratureConfig = Field(default_factory=QuadratureConfig)
    experiment: Optional[ExperimentConfig] = None

    @model_validator(mode="before")
    @classmethod
    def inherit_region_dim(cls, data: Any) -> Any:
        """A region block without dim takes the run domain's dimension."""
        if not isinstance(data, dict):
            return data
        experiment = data.get("experiment")
        if not isinstance(experiment, dict) or not isinstance(experiment.get("region"), dict):
            return data
        region = experiment["region"]
        if "dim" in region:
            return data
        domain = data.get("domain") or {}
        dim = domain.get("dim", 1) if isinstance(domain, dict) else getattr(domain, "dim", 1)
        return {**data, "experiment": {**experiment, "region": {**region, "dim": dim}}}

    @model_validator(mode="after")
    def check_dimensions(self):
        if self.density.gradient is not None and len(self.density.gradient) != self.domain.dim:
            raise ValueError("density.gradient must match domain.dim")
        return self

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as e:
            raise ConfigurationError(f"Cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Config {path} is not valid JSON: {e}") from e
        return cls.model_validate(data)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form."""
        canonical = json.dumps(self.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def problem_spec(self, dim: int, epsilon: Optional[float] = None) -> ProblemSpec:
        """Solver problem from the operator and problem blocks, optionally at another epsilon."""
        problem = self.problem
        return ProblemSpec(
            operator=self.operator.spec(dim, epsilon),
            source=problem.source.build(dim),
            boundary=problem.boundary.build(dim),
            strip_width=problem.strip_width,
            tolerance=problem.tolerance,
            max_iterations=problem.max_iterations,
            sweep=problem.sweep,
        )


def config_keys(model=RunConfig, prefix: str = "") -> List[str]:
    """Dotted paths of every configuration key, for --help."""
    keys = []
    for name, info in model.model_fields.items():
        key = f"{prefix}{info.alias or name}"
        keys.append(key)
        target = info.annotation
        for candidate in getattr(target, "__args__", (target,)):
            inner = getattr(candidate, "__args__", (candidate,))
            for t in inner:
                if isinstance(t, type) and issubclass(t, BaseModel):
                    keys.extend(config_keys(t, f"{key}."))
    return keys
