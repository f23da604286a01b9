"""Discrete extremal operators on data clouds."""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from app.core.config import settings
from app.core.errors import ConfigurationError, InputError, ReflectedNeighborhoodError
from app.core.parallel import map_chunks
from app.services.geometry import DataCloud

logger = logging.getLogger(__name__)

OPERATOR_TYPES = ("pucci_max", "pucci_min", "example1", "tug_of_war")
FALLBACK_POLICIES = ("nearest", "strict")
WEIGHT_SUM_TOLERANCE = 1e-8


@dataclass(frozen=True)
class OperatorParams:
    """Weights, neighborhood scales and fallback policy of the extremal operators."""

    alpha: float
    beta: float
    lam: float
    tau: float
    epsilon: float
    fallback: str = "nearest"
    epsilon_max: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1), got {self.alpha}")
        if not 0.0 < self.beta <= 1.0:
            raise ConfigurationError(f"beta must lie in (0, 1], got {self.beta}")
        if abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise ConfigurationError(f"alpha + beta must equal 1, got {self.alpha + self.beta}")
        if self.lam < 1.0 or self.tau < 1.0:
            raise ConfigurationError(f"Lambda and tau must be at least 1, got {self.lam}, {self.tau}")
        if not 0.0 < self.epsilon < self.epsilon_max:
            raise ConfigurationError(f"epsilon must lie in (0, {self.epsilon_max}), got {self.epsilon}")
        if self.fallback not in FALLBACK_POLICIES:
            raise ConfigurationError(f"Unknown fallback policy '{self.fallback}'")
        if self.epsilon >= settings.epsilon_warning:
            logger.warning(f"epsilon={self.epsilon} is large; estimates assume small epsilon")

    @classmethod
    def from_beta(cls, beta: float, epsilon: float, lam: float = 1.0, tau: float = 1.0, **kwargs) -> "OperatorParams":
        return cls(alpha=1.0 - beta, beta=beta, lam=lam, tau=tau, epsilon=epsilon, **kwargs)

    def enlarged(self, d_lam: float, d_tau: float) -> "OperatorParams":
        """Same operator with Lambda and tau increased."""
        return OperatorParams(
            alpha=self.alpha,
            beta=self.beta,
            lam=self.lam + d_lam,
            tau=self.tau + d_tau,
            epsilon=self.epsilon,
            fallback=self.fallback,
            epsilon_max=self.epsilon_max,
        )

    @property
    def reach(self) -> float:
        """Largest distance an operator lookup travels from its vertex."""
        return self.lam * self.epsilon + self.tau * self.epsilon ** 2


@dataclass(frozen=True)
class TugOfWarParams:
    """Tug-of-war with noise: beta = (N+2)/(N+p)."""

    p: float
    epsilon: float
    dim: int

    def __post_init__(self):
        if self.p < 2:
            raise ConfigurationError(f"p must be at least 2, got {self.p}")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")

    @property
    def beta(self) -> float:
        return (self.dim + 2.0) / (self.dim + self.p)

    @property
    def alpha(self) -> float:
        return 1.0 - self.beta

    @property
    def reach(self) -> float:
        return self.epsilon


@dataclass
class GraphFunction:
    """Real values on the vertices of a cloud."""

    values: np.ndarray
    cloud: DataCloud

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.cloud.n,):
            raise InputError(f"Graph function has shape {self.values.shape}, cloud has {self.cloud.n} vertices")
        if not np.all(np.isfinite(self.values)):
            raise InputError("Graph function values must be finite")

    @classmethod
    def from_function(cls, cloud: DataCloud, func: Callable[[np.ndarray], np.ndarray]) -> "GraphFunction":
        return cls(values=func(cloud.points), cloud=cloud)


WeightsLike = Union[None, str, Sequence[float], Callable[[DataCloud, int, np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class OperatorSpec:
    """Operator choice for eval_field and the solver."""

    kind: str
    params: Union[OperatorParams, TugOfWarParams]
    weights: WeightsLike = None

    def __post_init__(self):
        if self.kind not in OPERATOR_TYPES:
            raise ConfigurationError(f"Unknown operator type '{self.kind}'")
        if (self.kind == "tug_of_war") != isinstance(self.params, TugOfWarParams):
            raise ConfigurationError(f"Operator '{self.kind}' got parameters of type {type(self.params).__name__}")

    @property
    def epsilon(self) -> float:
        return self.params.epsilon

    @property
    def alpha(self) -> float:
        return self.params.alpha

    @property
    def beta(self) -> float:
        return self.params.beta


class FallbackCounter:
    """Counts reflected neighborhoods replaced by the nearest vertex."""

    def __init__(self):
        self.count = 0


def _values(u, cloud: DataCloud) -> np.ndarray:
    values = u.values if isinstance(u, GraphFunction) else np.asarray(u, dtype=float)
    if values.shape != (cloud.n,):
        raise InputError(f"Graph function has shape {values.shape}, cloud has {cloud.n} vertices")
    return values


def reflected_ball(
    cloud: DataCloud,
    center_i: int,
    j: int,
    r: float,
    policy: str = "nearest",
    counter: Optional[FallbackCounter] = None,
) -> np.ndarray:
    """
    Vertices in B_r(2 Z_i - Z_j).

    An empty ball becomes the nearest vertex to the reflection under the
    nearest policy and an error under the strict policy.
    """
    if r <= 0:
        raise InputError("Reflection radius must be positive")
    reflection = 2.0 * cloud.points[center_i] - cloud.points[j]
    found = cloud.index_for(r).query(reflection, r)
    if len(found):
        return found
    if policy == "strict":
        raise ReflectedNeighborhoodError([(center_i, j, r)])
    if counter is not None:
        counter.count += 1
    return cloud.index.nearest(reflection.reshape(1, -1))


@dataclass(eq=False)
class Stencil:
    """
    Precomputed neighborhoods of a vertex set.

    ball_* lists B_eps(Z_i); pair_* lists j in B_{Lambda eps}(Z_i) with the
    reflected tau*eps**2 neighborhoods of each pair in refl_*. All lists are
    CSR (pointer, indices) with ascending indices per row.
    """

    cloud: DataCloud
    spec: OperatorSpec
    vertices: np.ndarray
    ball_ptr: np.ndarray
    ball_idx: np.ndarray
    pair_ptr: Optional[np.ndarray] = None
    pair_j: Optional[np.ndarray] = None
    refl_ptr: Optional[np.ndarray] = None
    refl_idx: Optional[np.ndarray] = None
    pair_weight: Optional[np.ndarray] = None
    refl_nearest: Optional[np.ndarray] = None
    fallback_count: int = 0


def _uniform_weights(pair_ptr: np.ndarray) -> np.ndarray:
    counts = np.diff(pair_ptr)
    return np.repeat(1.0 / counts, counts)


def _example1_weights(cloud: DataCloud, spec: OperatorSpec, vertices: np.ndarray, pair_ptr, pair_j) -> np.ndarray:
    weights = spec.weights
    if weights is None or (isinstance(weights, str) and weights == "uniform"):
        return _uniform_weights(pair_ptr)
    parts = []
    for row, i in enumerate(vertices):
        js = pair_j[pair_ptr[row]:pair_ptr[row + 1]]
        w = weights(cloud, int(i), js) if callable(weights) else np.asarray(weights, dtype=float)
        w = np.asarray(w, dtype=float)
        if w.shape != js.shape:
            raise ConfigurationError(f"Vertex {i}: {len(w)} weights for {len(js)} neighbors")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise ConfigurationError(f"Vertex {i}: weights must be nonnegative and sum to 1, sum is {w.sum():.12g}")
        parts.append(w)
    return np.concatenate(parts)


def build_stencil(cloud: DataCloud, spec: OperatorSpec, vertices: Optional[Sequence[int]] = None) -> Stencil:
    """Neighborhood lists needed to evaluate the operator at the given vertices."""
    vertices = np.arange(cloud.n) if vertices is None else np.asarray(vertices, dtype=np.int64)
    eps = spec.epsilon
    centers = cloud.points[vertices]
    ball_ptr, ball_idx = cloud.index_for(eps).neighbors(centers, eps)
    stencil = Stencil(cloud=cloud, spec=spec, vertices=vertices, ball_ptr=ball_ptr, ball_idx=ball_idx)
    if spec.kind == "tug_of_war":
        return stencil

    params = spec.params
    big = params.lam * eps
    pair_ptr, pair_j = cloud.index_for(big).neighbors(centers, big)
    owner = np.repeat(vertices, np.diff(pair_ptr))
    reflections = 2.0 * cloud.points[owner] - cloud.points[pair_j]
    small = params.tau * eps ** 2
    stencil.pair_ptr, stencil.pair_j = pair_ptr, pair_j

    if spec.kind == "example1":
        stencil.pair_weight = _example1_weights(cloud, spec, vertices, pair_ptr, pair_j)
        stencil.refl_nearest = cloud.index.nearest(reflections)
        return stencil

    refl_ptr, refl_idx = cloud.index_for(small).neighbors(reflections, small)
    empty = np.flatnonzero(np.diff(refl_ptr) == 0)
    if len(empty):
        if params.fallback == "strict":
            raise ReflectedNeighborhoodError((owner[e], pair_j[e], small) for e in empty)
        nearest = cloud.index.nearest(reflections[empty])
        counts = np.diff(refl_ptr)
        counts[empty] = 1
        rows = np.repeat(np.arange(len(counts)), np.diff(refl_ptr))
        all_rows = np.concatenate([rows, empty])
        all_idx = np.concatenate([refl_idx, nearest])
        order = np.argsort(all_rows, kind="stable")
        refl_idx = all_idx[order]
        refl_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        stencil.fallback_count = len(empty)
        logger.warning(f"{len(empty)} empty reflected neighborhoods replaced by nearest vertices")
    stencil.refl_ptr, stencil.refl_idx = refl_ptr, refl_idx
    return stencil


def _segment(ufunc, values: np.ndarray, idx: Optional[np.ndarray], ptr: np.ndarray, start: int, stop: int) -> np.ndarray:
    """ufunc-reduce rows start..stop-1 of a CSR list (rows must be nonempty)."""
    lo, hi = ptr[start], ptr[stop]
    data = values[lo:hi] if idx is None else values[idx[lo:hi]]
    return ufunc.reduceat(data, ptr[start:stop] - lo)


def _row_terms(stencil: Stencil, u: np.ndarray, start: int, stop: int):
    """(pair-extremum term - u_i, ball mean - u_i, u_i) for stencil rows start..stop-1."""
    spec = stencil.spec
    ui = u[stencil.vertices[start:stop]]
    counts = np.diff(stencil.ball_ptr[start:stop + 1])
    mean = _segment(np.add, u, stencil.ball_idx, stencil.ball_ptr, start, stop) / counts

    if spec.kind == "tug_of_war":
        hi = _segment(np.maximum, u, stencil.ball_idx, stencil.ball_ptr, start, stop)
        lo = _segment(np.minimum, u, stencil.ball_idx, stencil.ball_ptr, start, stop)
        return 0.5 * ((lo - ui) + (hi - ui)), mean - ui, ui

    p0, p1 = stencil.pair_ptr[start], stencil.pair_ptr[stop]
    pairs = slice(p0, p1)
    if spec.kind == "example1":
        owner_u = np.repeat(ui, np.diff(stencil.pair_ptr[start:stop + 1]))
        second = u[stencil.pair_j[pairs]] + u[stencil.refl_nearest[pairs]] - 2.0 * owner_u
        weighted = stencil.pair_weight[pairs] * second
        return 0.5 * np.add.reduceat(weighted, stencil.pair_ptr[start:stop] - p0), mean - ui, ui

    ufunc = np.maximum if spec.kind == "pucci_max" else np.minimum
    inner = _segment(ufunc, u, stencil.refl_idx, stencil.refl_ptr, p0, p1)
    pair_values = 0.5 * (u[stencil.pair_j[pairs]] + inner)
    extreme = ufunc.reduceat(pair_values, stencil.pair_ptr[start:stop] - p0)
    return extreme - ui, mean - ui, ui


def _apply_rows(stencil: Stencil, u: np.ndarray, start: int, stop: int) -> np.ndarray:
    pair, mean, _ = _row_terms(stencil, u, start, stop)
    spec = stencil.spec
    return (spec.alpha * pair + spec.beta * mean) / spec.epsilon ** 2


def update_rows(stencil: Stencil, u: np.ndarray, start: int, stop: int) -> np.ndarray:
    """Fixed-point map u_i + alpha * pair term + beta * mean term at rows start..stop-1."""
    pair, mean, ui = _row_terms(stencil, u, start, stop)
    return ui + (stencil.spec.alpha * pair + stencil.spec.beta * mean)


def apply_stencil(stencil: Stencil, u: np.ndarray, chunk_size: int = 2048) -> np.ndarray:
    """Operator values at every stencil vertex, evaluated in fixed chunks."""
    parts = map_chunks(lambda s, e: _apply_rows(stencil, u, s, e), len(stencil.vertices), chunk_size)
    return np.concatenate(parts) if parts else np.zeros(0)


def eval_field(cloud: DataCloud, spec: OperatorSpec, u, vertices: Optional[Sequence[int]] = None) -> np.ndarray:
    """Operator values at a vertex subset, aligned with `vertices`."""
    values = _values(u, cloud)
    stencil = build_stencil(cloud, spec, vertices)
    return apply_stencil(stencil, values)


def eval_pucci(cloud: DataCloud, params: OperatorParams, u, i: int, sign: str = "max") -> float:
    """Discrete maximal (sign='max') or minimal (sign='min') operator at vertex i."""
    if sign not in ("max", "min"):
        raise InputError(f"sign must be 'max' or 'min', got '{sign}'")
    spec = OperatorSpec(kind=f"pucci_{sign}", params=params)
    return float(eval_field(cloud, spec, u, [i])[0])


def eval_example1(cloud: DataCloud, params: OperatorParams, weights: WeightsLike, u, i: int) -> float:
    """Weighted reflection operator with simplex weights on B_{Lambda eps}(Z_i)."""
    spec = OperatorSpec(kind="example1", params=params, weights=weights)
    return float(eval_field(cloud, spec, u, [i])[0])


def eval_tugofwar(cloud: DataCloud, tw: TugOfWarParams, u, i: int) -> float:
    """Tug-of-war with noise operator at vertex i."""
    spec = OperatorSpec(kind="tug_of_war", params=tw)
    return float(eval_field(cloud, spec, u, [i])[0])
