"""Semi-G-normal layer: one maximization wrapping one Gaussian expectation.

The sublinear expectation of W = Z * Y (Y standard normal, Z maximally
distributed on [sigma_lo, sigma_hi], Y independent from Z) reduces to

    max over z in [sigma_lo, sigma_hi] of E[phi(N(0, z^2))]

and its 2D analogue maximizes the tensor Gaussian expectation over a
(sigma1, sigma2, rho) covariance box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    CovarianceSet2D,
    MaximalResult,
    TerminalFunction,
    VarianceInterval,
    argmax_with_candidates,
    maximal_expectation,
)
from .expectation import (
    ExpectationBackend,
    QuadratureRule2D,
    gauss_expectation_mc,
    gauss_expectation_mc_cv,
    gauss_expectation_quad,
    matrix_sqrt_2x2,
)

__all__ = ["SemiGNormal", "BoxMaximalResult", "semi_g_expectation", "semi_g_expectation_2d"]


@dataclass(frozen=True)
class SemiGNormal:
    """W ~ semi-G-normal with volatility interval [sigma_lo, sigma_hi].

    W has certain zero mean and uncertain variance [sigma_lo^2, sigma_hi^2].
    """

    variance: VarianceInterval


@dataclass(frozen=True)
class BoxMaximalResult:
    value: float
    argmax: tuple[float, float, float]  # (sigma1, sigma2, rho)


def semi_g_expectation(
    phi: TerminalFunction,
    w: SemiGNormal,
    backend: ExpectationBackend = ExpectationBackend(),
) -> MaximalResult:
    """Sublinear expectation of phi(W) and the maximizing volatility.

    For a constant objective (for example odd phi, where every Gaussian
    expectation vanishes) the upper endpoint is reported as argmax.
    """
    if phi.dimension != 1:
        raise ValueError("semi_g_expectation is one-dimensional; use semi_g_expectation_2d")
    if backend.kind == "quad":
        rule = backend.rule()

        def objective(z: float) -> float:
            return gauss_expectation_quad(phi, 0.0, z, rule)

    else:
        sample = backend.sample_for_step(0)
        if backend.kind == "mc":

            def objective(z: float) -> float:
                return gauss_expectation_mc(phi, 0.0, z, sample)

        else:

            def objective(z: float) -> float:
                # Around x = 0 with unknown derivatives, zero Taylor slopes
                # keep the estimator unbiased.
                return gauss_expectation_mc_cv(phi, 0.0, 0.0, 0.0, z, sample)

    return maximal_expectation(objective, w.variance)


def _box_objective(phi: TerminalFunction, rule: QuadratureRule2D):
    nodes = rule.nodes
    weights = rule.weights

    def evaluate(s1: np.ndarray, s2: np.ndarray, rho: np.ndarray) -> np.ndarray:
        s1 = np.atleast_1d(np.asarray(s1, dtype=float))
        s2 = np.atleast_1d(np.asarray(s2, dtype=float))
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        out = np.empty(s1.shape)
        sqrt2 = np.sqrt(2.0)
        for i in range(s1.size):
            root = matrix_sqrt_2x2(
                np.array(
                    [
                        [s1[i] ** 2, rho[i] * s1[i] * s2[i]],
                        [rho[i] * s1[i] * s2[i], s2[i] ** 2],
                    ]
                )
            )
            args = sqrt2 * nodes @ root.T
            out[i] = phi(args[:, 0], args[:, 1]) @ weights
        return out

    return evaluate


def _sweep_axis(objective, state: np.ndarray, axis: int, lo: float, hi: float) -> None:
    """One coordinate-wise golden-section pass, updating ``state`` in place."""
    if hi <= lo:
        state[axis] = hi
        return
    others = [state[i] for i in range(3)]

    def slice_obj(v: np.ndarray) -> np.ndarray:
        coords = [np.full(v.shape, others[i]) for i in range(3)]
        coords[axis] = v
        return objective(*coords)

    tol = 1e-6 * (hi - lo)
    arg, _ = argmax_with_candidates(slice_obj, lo, hi, tol, size=1)
    state[axis] = float(arg[0])


def semi_g_expectation_2d(
    phi: TerminalFunction,
    cov: CovarianceSet2D,
    backend: ExpectationBackend = ExpectationBackend(),
    sweeps: int = 3,
) -> BoxMaximalResult:
    """Sublinear expectation of phi(W) over a 2D covariance box.

    All 8 box corners are evaluated first; coordinate-wise golden-section
    passes then refine from the best corner, which captures both bang-bang
    and interior maximizers.  Only the quadrature backend is supported in
    two dimensions.
    """
    if phi.dimension != 2:
        raise ValueError("phi must be two-dimensional")
    if backend.kind != "quad":
        raise ValueError("2D expectations support the quadrature backend only")
    rule = QuadratureRule2D.gauss_hermite(min(backend.order, 32))
    objective = _box_objective(phi, rule)

    corners = cov.corners()
    corner_vals = objective(corners[:, 0], corners[:, 1], corners[:, 2])
    best = float(corner_vals.max())
    tie_eps = 1e-10 * (1.0 + abs(best))
    # Corners are sorted ascending, so the last eligible one is the upper-most.
    idx = max(np.nonzero(corner_vals >= best - tie_eps)[0])
    state = corners[idx].copy()

    bounds = [
        (cov.sigma1.sigma_lo, cov.sigma1.sigma_hi),
        (cov.sigma2.sigma_lo, cov.sigma2.sigma_hi),
        (cov.rho_lo, cov.rho_hi),
    ]
    for _ in range(sweeps):
        for axis, (lo, hi) in enumerate(bounds):
            _sweep_axis(objective, state, axis, lo, hi)
    value = float(objective(state[0:1], state[1:2], state[2:3])[0])
    return BoxMaximalResult(value=value, argmax=(float(state[0]), float(state[1]), float(state[2])))
