"""Closed-form test functions with exact gradients and Hessians."""
import logging
from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from app.core.errors import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnalyticFunction:
    """Vectorized function of (m, N) points with its derivatives."""

    name: str
    dim: int
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]

    def _points(self, x) -> np.ndarray:
        pts = np.asarray(x, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1) if self.dim > 1 or pts.size == 1 else pts.reshape(-1, 1)
        return pts

    def __call__(self, x) -> np.ndarray:
        return self.value(self._points(x))

    def grad_at(self, x) -> np.ndarray:
        return self.gradient(self._points(x))[0]

    def hess_at(self, x) -> np.ndarray:
        return self.hessian(self._points(x))[0]


def constant(dim: int, c: float = 0.0) -> AnalyticFunction:
    return AnalyticFunction(
        name="constant",
        dim=dim,
        value=lambda p: np.full(len(p), float(c)),
        gradient=lambda p: np.zeros((len(p), dim)),
        hessian=lambda p: np.zeros((len(p), dim, dim)),
    )


def affine(dim: int, slope=None, intercept: float = 0.0) -> AnalyticFunction:
    a = np.ones(dim) if slope is None else np.asarray(slope, dtype=float)
    if a.shape != (dim,):
        raise ConfigurationError(f"Affine slope must have {dim} components")
    return AnalyticFunction(
        name="affine",
        dim=dim,
        value=lambda p: p @ a + intercept,
        gradient=lambda p: np.broadcast_to(a, p.shape).copy(),
        hessian=lambda p: np.zeros((len(p), dim, dim)),
    )


def quadratic(dim: int, scale: float = 1.0) -> AnalyticFunction:
    """scale * |x|**2."""
    return AnalyticFunction(
        name="quadratic",
        dim=dim,
        value=lambda p: scale * np.sum(p * p, axis=1),
        gradient=lambda p: 2.0 * scale * p,
        hessian=lambda p: np.broadcast_to(2.0 * scale * np.eye(dim), (len(p), dim, dim)).copy(),
    )


def cos_first(dim: int, frequency: float = 1.0) -> AnalyticFunction:
    """cos(frequency * x_1)."""

    def hess(p):
        h = np.zeros((len(p), dim, dim))
        h[:, 0, 0] = -frequency ** 2 * np.cos(frequency * p[:, 0])
        return h

    def grad(p):
        g = np.zeros_like(p)
        g[:, 0] = -frequency * np.sin(frequency * p[:, 0])
        return g

    return AnalyticFunction("cos_x1", dim, lambda p: np.cos(frequency * p[:, 0]), grad, hess)


def sin_first(dim: int, frequency: float = 2.0 * np.pi) -> AnalyticFunction:
    """sin(frequency * x_1), the default being sin(2 pi x_1)."""

    def hess(p):
        h = np.zeros((len(p), dim, dim))
        h[:, 0, 0] = -frequency ** 2 * np.sin(frequency * p[:, 0])
        return h

    def grad(p):
        g = np.zeros_like(p)
        g[:, 0] = frequency * np.cos(frequency * p[:, 0])
        return g

    return AnalyticFunction("sin_x1", dim, lambda p: np.sin(frequency * p[:, 0]), grad, hess)


def log_radius(dim: int, center=None, scale: float = 1.0) -> AnalyticFunction:
    """scale * log |x - center|, harmonic in two dimensions away from the center."""
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    s = float(scale)

    def grad(p):
        d = p - c
        return s * d / np.sum(d * d, axis=1)[:, None]

    def hess(p):
        d = p - c
        r2 = np.sum(d * d, axis=1)
        return s * (
            np.eye(dim)[None] / r2[:, None, None] - 2.0 * d[:, :, None] * d[:, None, :] / (r2 ** 2)[:, None, None]
        )

    return AnalyticFunction("log_radius", dim, lambda p: 0.5 * s * np.log(np.sum((p - c) ** 2, axis=1)), grad, hess)


def radial_power(dim: int, exponent: float, center=None) -> AnalyticFunction:
    """|x - center|**k."""
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    k = float(exponent)

    def grad(p):
        d = p - c
        r = np.linalg.norm(d, axis=1)
        return k * (r ** (k - 2.0))[:, None] * d

    def hess(p):
        d = p - c
        r = np.linalg.norm(d, axis=1)
        outer = d[:, :, None] * d[:, None, :]
        return (
            k * (r ** (k - 2.0))[:, None, None] * np.eye(dim)[None]
            + k * (k - 2.0) * (r ** (k - 4.0))[:, None, None] * outer
        )

    return AnalyticFunction("radial_power", dim, lambda p: np.linalg.norm(p - c, axis=1) ** k, grad, hess)


def radial_p_harmonic(dim: int, p: float, center=None) -> AnalyticFunction:
    """Fundamental radial p-harmonic function |x|**((p-N)/(p-1)), or log|x| when p = N."""
    if p <= 1:
        raise ConfigurationError("p-harmonic exponent needs p > 1")
    if abs(p - dim) < 1e-12:
        return log_radius(dim, center)
    func = radial_power(dim, (p - dim) / (p - 1.0), center)
    return AnalyticFunction("radial_p_harmonic", dim, func.value, func.gradient, func.hessian)


FUNCTIONS: Dict[str, Callable[..., AnalyticFunction]] = {
    "constant": constant,
    "affine": affine,
    "quadratic": quadratic,
    "cos_x1": cos_first,
    "sin_x1": sin_first,
    "log_radius": log_radius,
    "radial_power": radial_power,
    "radial_p_harmonic": radial_p_harmonic,
}


def make_function(name: str, dim: int, **params) -> AnalyticFunction:
    """Build a library function by name, e.g. make_function('affine', 2, slope=[1, 0])."""
    try:
        factory = FUNCTIONS[name]
    except KeyError:
        raise ConfigurationError(f"Unknown function '{name}', choose from {sorted(FUNCTIONS)}") from None
    try:
        return factory(dim, **params)
    except TypeError as e:
        raise ConfigurationError(f"Bad parameters for function '{name}': {e}") from e
