"""
Nonlocal extremal operators on functions over the domain, their limit
operators, and the radial barrier functions used by the comparison bounds.

Functions passed to these operators are callables mapping an (m, N) array
of points to m values. Callables that also expose `candidate_points(center,
radius)` (transport-map extensions) get their cloud points added to the
sampled displacements.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from app.core.config import settings
from app.core.errors import ConfigurationError, InputError
from app.services.geometry import Density, Domain, as_point, as_points
from app.services.graph_operators import OperatorParams, TugOfWarParams

logger = logging.getLogger(__name__)

# keeps sampled displacements strictly inside the open balls
SHRINK = 1e-9
SYMMETRY_TOLERANCE = 1e-10
MAX_CANDIDATES = 256


@dataclass(frozen=True)
class NonlocalQuadrature:
    """Sampling of the sup/inf over displacements and of the ball average."""

    directions: int = field(default_factory=lambda: settings.nonlocal_directions)
    radial_levels: int = field(default_factory=lambda: settings.nonlocal_radial_levels)
    h_directions: int = field(default_factory=lambda: settings.nonlocal_h_directions)
    h_levels: int = field(default_factory=lambda: settings.nonlocal_h_levels)
    ball_resolution: int = field(default_factory=lambda: settings.nonlocal_ball_resolution)

    def __post_init__(self):
        for name in ("directions", "radial_levels", "h_directions", "h_levels", "ball_resolution"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"Quadrature count '{name}' must be at least 1")

    def scaled(self, factor: float) -> "NonlocalQuadrature":
        return NonlocalQuadrature(
            directions=max(1, int(round(self.directions * factor))),
            radial_levels=max(1, int(round(self.radial_levels * factor))),
            h_directions=max(1, int(round(self.h_directions * factor))),
            h_levels=max(1, int(round(self.h_levels * factor))),
            ball_resolution=max(1, int(round(self.ball_resolution * factor))),
        )


def sphere_directions(dim: int, count: int) -> np.ndarray:
    """Unit vectors: +-1 in 1D, equally spaced angles in 2D, a Fibonacci set plus the axes in 3D."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        count = max(count, 4)
        angles = 2.0 * np.pi * np.arange(count) / count
        return np.stack([np.cos(angles), np.sin(angles)], axis=1)
    k = np.arange(count) + 0.5
    polar = np.arccos(1.0 - 2.0 * k / count)
    azimuth = np.pi * (1.0 + 5.0 ** 0.5) * k
    fib = np.stack([np.cos(azimuth) * np.sin(polar), np.sin(azimuth) * np.sin(polar), np.cos(polar)], axis=1)
    return np.concatenate([np.vstack([np.eye(3), -np.eye(3)]), fib])


def displacements(dim: int, radius: float, directions: int, levels: int) -> np.ndarray:
    """Zero plus direction x radius samples of the open ball |z| < radius."""
    dirs = sphere_directions(dim, directions)
    radii = radius * (1.0 - SHRINK) * np.arange(1, levels + 1) / levels
    samples = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, dim)
    return np.vstack([np.zeros((1, dim)), samples])


def ball_rule(dim: int, resolution: int):
    """
    Nodes and weights on the unit ball, exact for polynomials of high degree.

    Gauss-Legendre in the radius (with the polar Jacobian) times a uniform
    angular rule in 2D, Gauss-Legendre in cos(polar) times uniform azimuth
    in 3D. Weights sum to the volume of the unit ball.
    """
    nodes, weights = np.polynomial.legendre.leggauss(resolution)
    if dim == 1:
        return nodes.reshape(-1, 1), weights
    rho = 0.5 * (nodes + 1.0)
    w_rho = 0.5 * weights * rho ** (dim - 1)
    n_az = 2 * resolution
    az = 2.0 * np.pi * (np.arange(n_az) + 0.5) / n_az
    w_az = np.full(n_az, 2.0 * np.pi / n_az)
    if dim == 2:
        r, a = np.meshgrid(rho, az, indexing="ij")
        w = np.outer(w_rho, w_az)
        pts = np.stack([r.ravel() * np.cos(a.ravel()), r.ravel() * np.sin(a.ravel())], axis=1)
        return pts, w.ravel()
    cos_p, w_p = np.polynomial.legendre.leggauss(resolution)
    r, c, a = np.meshgrid(rho, cos_p, az, indexing="ij")
    s = np.sqrt(1.0 - c ** 2)
    pts = np.stack([(r * s * np.cos(a)).ravel(), (r * s * np.sin(a)).ravel(), (r * c).ravel()], axis=1)
    w = (w_rho[:, None, None] * w_p[None, :, None] * w_az[None, None, :]).ravel()
    return pts, w


@dataclass
class NonlocalEvaluation:
    """Value of a nonlocal operator with its parts and diagnostics."""

    value: float
    alpha_term: float
    beta_term: float
    resolution_error: float = 0.0
    warnings: List[str] = field(default_factory=list)


def _evaluate(v: Callable, points: np.ndarray) -> np.ndarray:
    return np.asarray(v(points), dtype=float).reshape(len(points))


def _extreme_second_difference(v: Callable, x: np.ndarray, params: OperatorParams, quad: NonlocalQuadrature, sign: str):
    """
    Second differences delta(v, x, z) = v(x+z) + ext_h v(x-z+h) - 2v(x) on
    the sampled z. Returns (extreme delta, v(x), delta per z, h samples,
    the x-z+h points).
    """
    dim = len(x)
    eps = params.epsilon
    big, small = params.lam * eps, params.tau * eps ** 2
    z = displacements(dim, big, quad.directions, quad.radial_levels)
    h = displacements(dim, small, quad.h_directions, quad.h_levels)
    if hasattr(v, "candidate_points"):
        extra = v.candidate_points(x, big) - x
        extra = extra[np.linalg.norm(extra, axis=1) < big]
        if len(extra) > MAX_CANDIDATES:
            extra = extra[np.linspace(0, len(extra) - 1, MAX_CANDIDATES).astype(np.int64)]
        z = np.vstack([z, extra, -extra])
    ext = np.max if sign == "max" else np.min

    vx = float(_evaluate(v, x.reshape(1, -1))[0])
    v_plus = _evaluate(v, x + z)
    shifted = (x - z)[:, None, :] + h[None, :, :]
    v_minus = _evaluate(v, shifted.reshape(-1, dim)).reshape(len(z), len(h))
    inner = ext(v_minus, axis=1)
    if hasattr(v, "candidate_points"):
        for row, center in enumerate(x - z):
            pts = v.candidate_points(center, small)
            if len(pts):
                inner[row] = ext([inner[row], ext(_evaluate(v, pts))])
    delta = v_plus + inner - 2.0 * vx
    return float(ext(delta)), vx, delta, h, shifted


def ball_average(
    v: Callable,
    x,
    eps: float,
    resolution: int,
    weight=None,
    domain: Optional[Domain] = None,
    offset: float = 0.0,
) -> float:
    """
    Average of v - offset over B_eps(x) (intersected with domain when given)
    against `weight`, any object with evaluate(points); None means Lebesgue.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    nodes, weights = ball_rule(len(x), resolution)
    y = x + eps * nodes
    w = weights * (weight.evaluate(y) if weight is not None else 1.0)
    if domain is not None:
        w = w * domain.contains(y)
    total = float(np.sum(w))
    if total <= 0:
        raise InputError(f"Ball of radius {eps} around {x.tolist()} carries no mass")
    return float(np.sum(w * (_evaluate(v, y) - offset)) / total)


def nonlocal_terms(
    v: Callable,
    x,
    params: OperatorParams,
    quad: Optional[NonlocalQuadrature] = None,
    sign: str = "max",
    density: Optional[Density] = None,
    domain: Optional[Domain] = None,
    estimate_error: bool = False,
) -> NonlocalEvaluation:
    """
    Maximal (sign='max') or minimal (sign='min') nonlocal operator at x.

    The ball average is weighted by the density and restricted to `domain`
    when one is given; without a domain the density is used on all of
    space.
    """
    if sign not in ("max", "min"):
        raise InputError(f"sign must be 'max' or 'min', got '{sign}'")
    quad = quad or NonlocalQuadrature()
    dim = density.domain.dim if density is not None else (domain.dim if domain is not None else np.size(x))
    point = as_point(x, dim)
    eps2 = params.epsilon ** 2

    extreme, vx, _, _, _ = _extreme_second_difference(v, point, params, quad, sign)
    average = ball_average(v, point, params.epsilon, quad.ball_resolution, density, domain, offset=vx)
    alpha_term = params.alpha * 0.5 * extreme / eps2
    beta_term = params.beta * average / eps2
    result = NonlocalEvaluation(value=alpha_term + beta_term, alpha_term=alpha_term, beta_term=beta_term)

    tmap = getattr(v, "tmap", None)
    if tmap is not None:
        spacing = params.epsilon / quad.ball_resolution
        cell = float(np.min(tmap.histogram.side))
        if spacing > cell:
            result.warnings.append(
                f"ball quadrature spacing {spacing:.3g} is coarser than partition cells {cell:.3g}"
            )

    if estimate_error:
        coarse = nonlocal_terms(v, point, params, quad.scaled(0.5), sign, density, domain)
        result.resolution_error = abs(result.value - coarse.value)
    return result


def eval_nonlocal(
    v: Callable,
    x,
    params: OperatorParams,
    quad: Optional[NonlocalQuadrature] = None,
    sign: str = "max",
    density: Optional[Density] = None,
    domain: Optional[Domain] = None,
) -> float:
    """Value of the nonlocal extremal operator at x."""
    result = nonlocal_terms(v, x, params, quad, sign, density, domain)
    for message in result.warnings:
        logger.warning(f"Resolution warning at x={np.ravel(x).tolist()}: {message}")
    return result.value


def drift_absorption(v: Callable, x, params: OperatorParams, quad: Optional[NonlocalQuadrature] = None) -> Dict[str, float]:
    """
    Compares the drift sup_h (v(x+h) - v(x)) / eps**2 with the maximal
    second-difference term sup_z delta(v, x, z) / (2 eps**2) on shared
    samples. The z = 0 sample gives drift <= 2 * alpha-term bound, so the
    drift is absorbed by an alpha-term of twice the drift weight.
    """
    quad = quad or NonlocalQuadrature()
    point = np.asarray(x, dtype=float).reshape(-1)
    eps2 = params.epsilon ** 2
    extreme, vx, _, h, _ = _extreme_second_difference(v, point, params, quad, "max")
    drift = float(np.max(_evaluate(v, point + h)) - vx) / eps2
    bound = 0.5 * extreme / eps2
    return {"drift": drift, "second_difference": bound, "absorbed": bool(drift <= 2.0 * bound + 1e-12 * max(1.0, abs(drift)))}


def _check_hessian(grad, hess):
    g = np.atleast_1d(np.asarray(grad, dtype=float))
    H = np.atleast_2d(np.asarray(hess, dtype=float))
    if H.shape != (len(g), len(g)):
        raise InputError(f"Hessian shape {H.shape} does not match gradient length {len(g)}")
    if np.max(np.abs(H - H.T)) > SYMMETRY_TOLERANCE:
        raise InputError("Hessian is not symmetric")
    return g, 0.5 * (H + H.T)


def eval_limit(grad, hess, phi_val: float, grad_phi, params: OperatorParams, sign: str = "max") -> float:
    """
    Limit of the nonlocal operators as eps -> 0:

        max: (alpha Lambda / 2) lambda_N + beta/(2(N+2)) tr H + (alpha tau / 2)|grad v| + beta/(N+2) grad v . grad phi / phi
        min: same with lambda_1 and -(alpha tau / 2)|grad v|
    """
    g, H = _check_hessian(grad, hess)
    if phi_val <= 0:
        raise InputError("Density value must be positive")
    n = len(g)
    eig = np.linalg.eigvalsh(H)
    drift = params.beta / (n + 2.0) * float(g @ np.atleast_1d(grad_phi)) / phi_val
    diffusion = params.beta / (2.0 * (n + 2.0)) * float(np.trace(H))
    slope = 0.5 * params.alpha * params.tau * float(np.linalg.norm(g))
    if sign == "max":
        return 0.5 * params.alpha * params.lam * float(eig[-1]) + diffusion + slope + drift
    if sign == "min":
        return 0.5 * params.alpha * params.lam * float(eig[0]) + diffusion - slope + drift
    raise InputError(f"sign must be 'max' or 'min', got '{sign}'")


def eval_limit_tow(grad, hess, phi_val: float, grad_phi, tw: TugOfWarParams) -> float:
    """(alpha/2) normalized infinity Laplacian + beta/(2(N+2)) (Laplacian + 2 grad v . grad phi / phi)."""
    g, H = _check_hessian(grad, hess)
    if phi_val <= 0:
        raise InputError("Density value must be positive")
    norm = float(np.linalg.norm(g))
    infinity = 0.0
    if tw.alpha > 0:
        if norm == 0:
            raise InputError("Normalized infinity Laplacian is undefined at a critical point")
        infinity = float(g @ H @ g) / norm ** 2
    weighted = float(np.trace(H)) + 2.0 * float(g @ np.atleast_1d(grad_phi)) / phi_val
    return 0.5 * tw.alpha * infinity + tw.beta / (2.0 * (len(g) + 2.0)) * weighted


@dataclass(frozen=True)
class BarrierSpec:
    """Radial barrier (1 + |x - pole|**2)**(-sigma) with amplitudes for Psi = A phi - B."""

    sigma: float
    pole: tuple
    r: float
    R: float
    A: float = 1.0
    B: float = 0.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigurationError("Barrier exponent sigma must be positive")
        if self.A < 0 or self.B < 0:
            raise ConfigurationError("Barrier amplitudes must be nonnegative")
        if not 0 < self.r < self.R:
            raise ConfigurationError("Barrier radii need 0 < r < R")

    def check_domain(self, domain: Domain, tolerance: float = 1e-9) -> None:
        """dist(pole, domain) >= r and R >= max |x - pole| over the domain."""
        if domain.distance_from_outside(self.pole) < self.r - tolerance:
            raise ConfigurationError(f"Pole {self.pole} is closer than r={self.r} to the domain")
        if domain.farthest_distance(self.pole) > self.R + tolerance:
            raise ConfigurationError(f"R={self.R} does not cover the domain seen from the pole")


@dataclass
class BarrierValue:
    phi: np.ndarray
    grad: np.ndarray
    hess: np.ndarray

    @property
    def Phi(self) -> np.ndarray:
        return 1.0 - self.phi

    @property
    def grad_Phi(self) -> np.ndarray:
        return -self.grad

    @property
    def hess_Phi(self) -> np.ndarray:
        return -self.hess


def barrier_phi(spec: BarrierSpec, x) -> BarrierValue:
    """Closed-form value, gradient and Hessian of phi and of Phi = 1 - phi."""
    pole = np.asarray(spec.pole, dtype=float)
    pts = as_points(x, len(pole))
    d = pts - pole
    t2 = np.sum(d * d, axis=1)
    base = 1.0 + t2
    phi = base ** (-spec.sigma)
    grad = -2.0 * spec.sigma * (base ** (-spec.sigma - 1.0))[:, None] * d
    eye = np.eye(len(pole))
    hess = (
        -2.0 * spec.sigma * (base ** (-spec.sigma - 1.0))[:, None, None] * eye
        + 4.0 * spec.sigma * (spec.sigma + 1.0) * (base ** (-spec.sigma - 2.0))[:, None, None] * d[:, :, None] * d[:, None, :]
    )
    return BarrierValue(phi=phi, grad=grad, hess=hess)


@dataclass(frozen=True)
class BarrierConstants:
    """Constants of the barrier lower bound for given operator, density and radii."""

    C1: float
    C2: float
    C3: float
    a: float
    b: float
    sigma0: float
    R: float

    @classmethod
    def compute(cls, params: OperatorParams, density: Density, r: float, R: float) -> "BarrierConstants":
        if density.phi0 <= 0:
            raise ConfigurationError("Barrier constants need a density bounded away from zero")
        n = density.domain.dim
        C1 = (params.lam + params.tau) ** 2 + 2.0 * R * params.tau
        C2 = density.phi0 / ((n + 2.0) * density.phi1)
        C3 = (C1 * density.phi1 + 2.0 * density.lipschitz) / density.phi0
        a = params.beta * C2 / (R ** 2 + 1.0) * r ** 2 / (1.0 + r ** 2)
        b = (C1 + C3) * (R + 1.0)
        return cls(C1=C1, C2=C2, C3=C3, a=a, b=b, sigma0=(1.0 + b) / a, R=R)

    def epsilon_bound(self, sigma: float) -> float:
        """Largest epsilon both smallness conditions of the barrier bound allow."""
        first = 1.0 / math.sqrt(2.0 * (sigma + 2.0) * self.C1 * (self.R + 1.0))
        ratio = (1.0 + self.b) / (self.a * sigma)
        second = 1.0 - ratio ** (1.0 / sigma) if ratio < 1.0 else 0.0
        return min(first, second)


def sigma0(params: OperatorParams, density: Density, r: float, R: float) -> float:
    return BarrierConstants.compute(params, density, r, R).sigma0


@dataclass
class BarrierReport:
    spec: BarrierSpec
    epsilon: float
    samples: int
    constants: BarrierConstants
    epsilon_bound: float
    violations: List[Dict] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "spec": {
                "sigma": self.spec.sigma,
                "pole": list(self.spec.pole),
                "r": self.spec.r,
                "R": self.spec.R,
                "A": self.spec.A,
                "B": self.spec.B,
            },
            "epsilon": self.epsilon,
            "samples": self.samples,
            "sigma0": self.constants.sigma0,
            "epsilon_bound": self.epsilon_bound,
            "violations": self.violations,
        }


def _log_ratio_barrier(spec: BarrierSpec, x: np.ndarray) -> Callable:
    """y -> phi(y)/phi(x), evaluated in log space."""
    pole = np.asarray(spec.pole, dtype=float)
    base_x = math.log1p(float(np.sum((x - pole) ** 2)))

    def ratio(y: np.ndarray) -> np.ndarray:
        log_y = np.log1p(np.sum((as_points(y, len(pole)) - pole) ** 2, axis=1))
        with np.errstate(over="ignore"):
            return np.exp(-spec.sigma * (log_y - base_x))

    return ratio


def _psi_over_a_phi(spec: BarrierSpec, constants: BarrierConstants, params: OperatorParams, x: np.ndarray) -> float:
    """psi(x) / (A phi(x)) = sigma [(C1+C3)(1-eps)**(-sigma-1) - beta C2 (sigma+1) t**2/(1+t**2)]."""
    t2 = float(np.sum((x - np.asarray(spec.pole)) ** 2))
    with np.errstate(over="ignore"):
        growth = float(np.exp(-(spec.sigma + 1.0) * math.log1p(-params.epsilon)))
    return spec.sigma * ((constants.C1 + constants.C3) * growth - params.beta * constants.C2 * (spec.sigma + 1.0) * t2 / (1.0 + t2))


def verify_barrier_lower_bound(
    spec: BarrierSpec,
    params: OperatorParams,
    samples,
    density: Density,
    quad: Optional[NonlocalQuadrature] = None,
) -> BarrierReport:
    """
    Checks L^- phi >= sigma phi and L^- Psi + psi >= 0 at the sample points.

    Both sides are divided by phi(x) (the operators are positively
    homogeneous), which keeps the check finite for large sigma; overflow to
    +inf on the left counts as satisfied. The ball average uses the density
    on all of space.
    """
    quad = quad or NonlocalQuadrature()
    pts = as_points(samples, len(spec.pole))
    constants = BarrierConstants.compute(params, density, spec.r, spec.R)
    if spec.sigma <= constants.sigma0:
        logger.warning(f"sigma={spec.sigma:.6g} does not exceed sigma0={constants.sigma0:.6g}")
    eps_bound = constants.epsilon_bound(spec.sigma)
    if params.epsilon > eps_bound:
        logger.info(f"epsilon={params.epsilon} exceeds the sufficient bound {eps_bound:.3g}; checking numerically")

    report = BarrierReport(spec=spec, epsilon=params.epsilon, samples=len(pts), constants=constants, epsilon_bound=eps_bound)
    for x in pts:
        with np.errstate(over="ignore", invalid="ignore"):
            lhs = nonlocal_terms(_log_ratio_barrier(spec, x), x, params, quad, "min", density, None).value
        if not (lhs >= spec.sigma):
            report.violations.append({"x": x.tolist(), "lhs": float(lhs), "rhs": spec.sigma, "kind": "phi"})
        if spec.A > 0:
            psi = _psi_over_a_phi(spec, constants, params, x)
            with np.errstate(invalid="ignore"):
                total = lhs + psi
            if not (total >= 0):
                report.violations.append({"x": x.tolist(), "lhs": float(lhs), "rhs": float(-psi), "kind": "psi"})
    if report.violations:
        logger.warning(f"Barrier check found {len(report.violations)} violations at epsilon={params.epsilon}")
    return report
