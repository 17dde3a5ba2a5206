"""Classical Gaussian expectation kernels: quadrature and Monte Carlo.

These are the inner engines of every iteration step: E[f(N(x, s^2))]
computed either by Gauss-Hermite quadrature or by (control-variate) Monte
Carlo.  Rules and samples are immutable; the expectation calls are pure, so
callers may evaluate many grid points concurrently.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import _frozen_array

__all__ = [
    "EvaluationError",
    "QuadratureRule",
    "QuadratureRule2D",
    "McSample",
    "ExpectationBackend",
    "gauss_expectation_quad",
    "gauss_expectation_mc",
    "gauss_expectation_mc_cv",
    "gauss_expectation_quad_2d",
    "finite_diff_derivs",
    "matrix_sqrt_2x2",
    "quad_values",
]

_SQRT2 = math.sqrt(2.0)
_SQRT_PI = math.sqrt(math.pi)


class EvaluationError(RuntimeError):
    """An integrand produced a non-finite value."""


@functools.lru_cache(maxsize=None)
def _hermite_nodes_weights(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Golub-Welsch on the Hermite Jacobi matrix (physicists' convention).

    Nodes are the eigenvalues of the symmetric tridiagonal matrix with zero
    diagonal and off-diagonal sqrt(k/2); weights are sqrt(pi) times the
    squared first eigenvector components.  Cached per order.
    """
    if order < 1:
        raise ValueError("quadrature order must be >= 1")
    if order == 1:
        return np.zeros(1), np.array([_SQRT_PI])
    off = np.sqrt(np.arange(1, order) / 2.0)
    nodes, vecs = scipy.linalg.eigh_tridiagonal(np.zeros(order), off)
    weights = _SQRT_PI * vecs[0, :] ** 2
    return nodes, weights


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule: integrates f against exp(-t^2) dt exactly for
    polynomials up to degree 2*order - 1.  Weights sum to sqrt(pi)."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen_array(self.nodes))
        object.__setattr__(self, "weights", _frozen_array(self.weights))

    @classmethod
    def gauss_hermite(cls, order: int) -> "QuadratureRule":
        nodes, weights = _hermite_nodes_weights(order)
        return cls(nodes=nodes, weights=weights, order=order)


@dataclass(frozen=True)
class QuadratureRule2D:
    """Tensor-product Gauss-Hermite rule on R^2."""

    nodes: np.ndarray    # (order^2, 2)
    weights: np.ndarray  # (order^2,), normalized to sum to 1
    order: int

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen_array(self.nodes))
        object.__setattr__(self, "weights", _frozen_array(self.weights))

    @classmethod
    def gauss_hermite(cls, order: int) -> "QuadratureRule2D":
        t, w = _hermite_nodes_weights(order)
        n1, n2 = np.meshgrid(t, t, indexing="ij")
        nodes = np.column_stack([n1.ravel(), n2.ravel()])
        weights = np.outer(w, w).ravel() / math.pi
        return cls(nodes=nodes, weights=weights, order=order)


@dataclass(frozen=True)
class McSample:
    """A reproducible i.i.d. standard normal sample Z_1..Z_M."""

    draws: np.ndarray
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "draws", _frozen_array(self.draws))

    @classmethod
    def generate(cls, size: int, seed: int) -> "McSample":
        if size < 1:
            raise ValueError("sample size must be >= 1")
        draws = np.random.default_rng(seed).standard_normal(size)
        return cls(draws=draws, seed=seed)

    @property
    def size(self) -> int:
        return int(self.draws.size)


@dataclass(frozen=True)
class ExpectationBackend:
    """How inner expectations are computed.

    kind:
        "quad"  deterministic Gauss-Hermite of the given order (default), or
        "mc" / "mc-cv"  Monte Carlo with ``sample_size`` draws, plain or with
        second-order control variates.  Solvers derive one sample per
        iteration step from ``seed``, reused across all grid points within
        that step.
    """

    kind: str = "quad"
    order: int = 64
    sample_size: int = 20_000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("quad", "mc", "mc-cv"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")

    def rule(self) -> QuadratureRule:
        return QuadratureRule.gauss_hermite(self.order)

    def sample_for_step(self, step_index: int) -> McSample:
        return McSample.generate(self.sample_size, self.seed + step_index)


def _check_finite(values: np.ndarray, raw: np.ndarray, what: str) -> None:
    # Cheap check on the reduced output; rescan the full matrix only on failure.
    if np.all(np.isfinite(values)):
        return
    bad = np.argwhere(~np.isfinite(np.atleast_2d(raw)))
    node = int(bad[0][-1]) if bad.size else -1
    raise EvaluationError(f"non-finite integrand value in {what} at node {node}")


def quad_values(f, x: np.ndarray, s: np.ndarray, rule: QuadratureRule) -> np.ndarray:
    """E[f(N(x_j, s_j^2))] for arrays of means and standard deviations.

    One vectorized call: f is evaluated on the (len(x), order) matrix of
    shifted nodes x_j + sqrt(2) s_j t_k and contracted with the weights.
    """
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    args = x[:, None] + _SQRT2 * s[:, None] * rule.nodes[None, :]
    vals = f(args)
    out = vals @ rule.weights / _SQRT_PI
    _check_finite(out, vals, "quadrature")
    return out


def gauss_expectation_quad(f, x: float, s: float, rule: QuadratureRule) -> float:
    """E[f(N(x, s^2))] by Gauss-Hermite quadrature; exact f(x) when s = 0."""
    if s < 0.0:
        raise ValueError("standard deviation must be >= 0")
    if s == 0.0:
        val = float(f(np.asarray([x]))[0])
        if not math.isfinite(val):
            raise EvaluationError("non-finite integrand value at the mean")
        return val
    return float(quad_values(f, np.asarray([x]), np.asarray([s]), rule)[0])


def gauss_expectation_mc(f, x: float, s: float, sample: McSample) -> float:
    """Plain Monte Carlo average (1/M) sum f(x + s Z_k)."""
    if s < 0.0:
        raise ValueError("standard deviation must be >= 0")
    vals = f(x + s * sample.draws)
    out = float(np.mean(vals))
    _check_finite(np.asarray([out]), vals, "monte-carlo")
    return out


def gauss_expectation_mc_cv(
    f, f1: float, f2: float, x: float, s: float, sample: McSample
) -> float:
    """Monte Carlo with second-order control variates.

    The first two Taylor terms of f around x (slopes ``f1`` ~ f'(x) and
    ``f2`` ~ f''(x), supplied by the caller) are subtracted inside the
    average and their exact expectations added back:

        (1/M) sum [f(x+sZ) - f(x) - f1 s Z - (f2/2) s^2 Z^2] + f(x) + (f2/2) s^2

    The estimator is unbiased for any f1, f2; choosing them close to the true
    derivatives removes the error amplification at large |x|.
    """
    if s < 0.0:
        raise ValueError("standard deviation must be >= 0")
    z = sample.draws
    fx = float(f(np.asarray([x]))[0])
    vals = f(x + s * z)
    resid = vals - fx - f1 * s * z - 0.5 * f2 * (s * z) ** 2
    out = float(np.mean(resid)) + fx + 0.5 * f2 * s * s
    _check_finite(np.asarray([out]), vals, "monte-carlo-cv")
    return out


def finite_diff_derivs(fn, x: float, h: float) -> tuple[float, float]:
    """Central-difference first and second derivatives of ``fn`` at x."""
    if h <= 0.0:
        raise ValueError("step h must be > 0")
    up = float(fn(np.asarray([x + h]))[0])
    dn = float(fn(np.asarray([x - h]))[0])
    mid = float(fn(np.asarray([x]))[0])
    return (up - dn) / (2.0 * h), (up - 2.0 * mid + dn) / (h * h)


def matrix_sqrt_2x2(v: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root of a symmetric 2x2 matrix, in closed form.

    Eigenvalues within -1e-12 of zero are clamped to zero (floating-point
    PSD guard); anything more negative is rejected.
    """
    v = np.asarray(v, dtype=float)
    a, c, b = v[0, 0], v[0, 1], v[1, 1]
    if abs(c - v[1, 0]) > 1e-12 * (1.0 + abs(c)):
        raise ValueError("matrix must be symmetric")
    tr = a + b
    det = a * b - c * c
    half_gap = math.sqrt(max(0.25 * (a - b) ** 2 + c * c, 0.0))
    lam_min = 0.5 * tr - half_gap
    if lam_min < -1e-12:
        raise ValueError(f"matrix is not PSD (eigenvalue {lam_min})")
    det = max(det, 0.0)
    s = math.sqrt(det)
    denom = tr + 2.0 * s
    if denom <= 0.0:
        return np.zeros((2, 2))
    return (v + s * np.eye(2)) / math.sqrt(denom)


def sqrt_cov_batch(s1: np.ndarray, s2: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Square roots of V(s1, s2, rho) for coordinate arrays, shape (..., 2, 2)."""
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    rho = np.asarray(rho, dtype=float)
    a = s1 * s1
    b = s2 * s2
    c = rho * s1 * s2
    det = np.maximum(a * b - c * c, 0.0)
    s = np.sqrt(det)
    denom = np.sqrt(a + b + 2.0 * s)
    out = np.empty(np.broadcast(a, b, c).shape + (2, 2))
    out[..., 0, 0] = (a + s) / denom
    out[..., 0, 1] = c / denom
    out[..., 1, 0] = c / denom
    out[..., 1, 1] = (b + s) / denom
    return out


def quad_values_2d(
    f,
    points: np.ndarray,
    cov_sqrts: np.ndarray,
    rule: QuadratureRule2D,
    scale: float = 1.0,
) -> np.ndarray:
    """E[f(N(p_j, scale^2 V_j))] for a batch of 2D means and matrix roots.

    ``cov_sqrts`` has shape (2, 2) shared across points or (len(points), 2, 2).
    """
    points = np.asarray(points, dtype=float)
    shift = _SQRT2 * scale * np.einsum("...ij,qj->...qi", cov_sqrts, rule.nodes)
    if shift.ndim == 2:  # shared matrix
        args = points[:, None, :] + shift[None, :, :]
    else:
        args = points[:, None, :] + shift
    vals = f(args[..., 0], args[..., 1])
    out = vals @ rule.weights
    _check_finite(out, vals, "2d quadrature")
    return out


def gauss_expectation_quad_2d(
    f, mean: np.ndarray, cov_sqrt: np.ndarray, rule: QuadratureRule2D
) -> float:
    """E[f(mean + V^(1/2) Z)], Z standard normal on R^2, by tensor quadrature."""
    mean = np.asarray(mean, dtype=float).reshape(1, 2)
    return float(quad_values_2d(f, mean, np.asarray(cov_sqrt, dtype=float), rule)[0])
