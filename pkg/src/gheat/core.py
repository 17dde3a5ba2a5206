"""Core vocabulary: uncertainty sets, grids, terminal functions, surfaces.

Everything here is immutable after construction and safe to share across
threads; the operations are pure functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "VarianceInterval",
    "CovarianceSet2D",
    "TerminalFunction",
    "SpatialGrid",
    "IterationFunction",
    "SolutionSurface",
    "MaximalResult",
    "g_function",
    "maximal_expectation",
    "golden_section_max",
]

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
_INVPHI2 = (3.0 - math.sqrt(5.0)) / 2.0


def _frozen_array(values) -> np.ndarray:
    a = np.asarray(values, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class VarianceInterval:
    """Volatility interval [sigma_lo, sigma_hi] with 0 < sigma_lo <= sigma_hi.

    The degenerate viscosity case sigma_lo = 0 is rejected on purpose.
    """

    sigma_lo: float
    sigma_hi: float

    def __post_init__(self):
        if not (self.sigma_lo > 0.0):
            raise ValueError(f"sigma_lo must be > 0, got {self.sigma_lo}")
        if not (self.sigma_hi >= self.sigma_lo):
            raise ValueError(
                f"need sigma_lo <= sigma_hi, got [{self.sigma_lo}, {self.sigma_hi}]"
            )

    @property
    def is_degenerate(self) -> bool:
        return self.sigma_lo == self.sigma_hi

    @property
    def width(self) -> float:
        return self.sigma_hi - self.sigma_lo


@dataclass(frozen=True)
class CovarianceSet2D:
    """Box of 2x2 covariance matrices V(s1, s2, rho) = [[s1^2, r s1 s2], [r s1 s2, s2^2]].

    With s_i > 0 and |rho| <= 1 every matrix in the box is symmetric PSD,
    so no extra cone intersection is needed.
    """

    sigma1: VarianceInterval
    sigma2: VarianceInterval
    rho_lo: float
    rho_hi: float

    def __post_init__(self):
        if not (-1.0 <= self.rho_lo <= self.rho_hi <= 1.0):
            raise ValueError(
                f"need -1 <= rho_lo <= rho_hi <= 1, got [{self.rho_lo}, {self.rho_hi}]"
            )

    def corners(self) -> np.ndarray:
        """All 8 box corners as rows (s1, s2, rho), lexicographically ascending."""
        out = [
            (s1, s2, r)
            for s1 in (self.sigma1.sigma_lo, self.sigma1.sigma_hi)
            for s2 in (self.sigma2.sigma_lo, self.sigma2.sigma_hi)
            for r in (self.rho_lo, self.rho_hi)
        ]
        return np.array(sorted(out))

    def matrix(self, s1: float, s2: float, rho: float) -> np.ndarray:
        c = rho * s1 * s2
        return np.array([[s1 * s1, c], [c, s2 * s2]])

    @property
    def sigma_bar(self) -> float:
        """Largest coordinate volatility; scales scatter grids and CFL bounds."""
        return max(self.sigma1.sigma_hi, self.sigma2.sigma_hi)


@dataclass(frozen=True)
class TerminalFunction:
    """A locally Lipschitz terminal condition phi.

    ``evaluator`` maps x -> phi(x) for dimension 1 (vectorized over numpy
    arrays) or (x1, x2) -> phi(x1, x2) for dimension 2.  ``lipschitz_degree``
    is the polynomial growth exponent k in
    |phi(x) - phi(y)| <= C (1 + |x|^k + |y|^k) |x - y|.
    """

    evaluator: Callable
    lipschitz_degree: int
    descriptor: str
    dimension: int = 1

    def __post_init__(self):
        if self.lipschitz_degree < 0:
            raise ValueError("lipschitz_degree must be >= 0")
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")

    def __call__(self, *args):
        return self.evaluator(*args)


def lipschitz_ratio(phi: TerminalFunction, x, y) -> np.ndarray:
    """|phi(x)-phi(y)| / ((1+|x|^k+|y|^k)|x-y|) on sample pairs (1D only).

    Used to spot-check the locally-Lipschitz growth bound numerically; the
    supremum over pairs estimates the constant C.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = phi.lipschitz_degree
    num = np.abs(phi(x) - phi(y))
    den = (1.0 + np.abs(x) ** k + np.abs(y) ** k) * np.abs(x - y)
    return num / den


@dataclass(frozen=True)
class SpatialGrid:
    """Strictly increasing 1D evaluation grid x_0 = -K < ... < x_L = K."""

    half_width: float
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen_array(self.points))
        pts = self.points
        if self.half_width <= 0.0:
            raise ValueError("half_width must be > 0")
        if pts.ndim != 1 or pts.size < 4:
            raise ValueError("grid needs at least 4 points (cubic end conditions)")
        if not np.all(np.diff(pts) > 0.0):
            raise ValueError("grid points must be strictly increasing")
        if not (
            math.isclose(pts[0], -self.half_width, rel_tol=0.0, abs_tol=1e-12)
            and math.isclose(pts[-1], self.half_width, rel_tol=0.0, abs_tol=1e-12)
        ):
            raise ValueError("grid must span [-K, K] with symmetric bounds")

    @classmethod
    def uniform(cls, half_width: float, intervals: int) -> "SpatialGrid":
        """Uniform grid with ``intervals`` cells, i.e. intervals + 1 points."""
        if intervals < 3:
            raise ValueError("need at least 3 intervals")
        return cls(half_width, np.linspace(-half_width, half_width, intervals + 1))

    @property
    def count(self) -> int:
        return int(self.points.size)

    @property
    def spacing(self) -> float:
        """Smallest cell width (equals the cell width on uniform grids)."""
        return float(np.min(np.diff(self.points)))


@dataclass(frozen=True)
class IterationFunction:
    """One fitted iteration function: grid values plus an interpolant on all of R."""

    grid: SpatialGrid
    values: np.ndarray
    interpolant: Callable[[np.ndarray], np.ndarray]
    step_index: int
    total_steps: int

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values))
        if self.values.shape != self.grid.points.shape:
            raise ValueError("values must align with grid points")
        if not (0 <= self.step_index <= self.total_steps):
            raise ValueError("step_index out of range")

    def __call__(self, x):
        return self.interpolant(x)

    @property
    def time(self) -> float:
        return 1.0 - self.step_index / self.total_steps


@dataclass(frozen=True)
class SolutionSurface:
    """The family of iteration functions, indexed to times t = 1 - i/n."""

    iterations: tuple
    variance: object  # VarianceInterval or CovarianceSet2D
    total_steps: int

    def __post_init__(self):
        object.__setattr__(self, "iterations", tuple(self.iterations))
        if len(self.iterations) != self.total_steps + 1:
            raise ValueError("need total_steps + 1 iteration functions")

    def time_of(self, i: int) -> float:
        return 1.0 - i / self.total_steps

    @property
    def final(self):
        return self.iterations[-1]

    def value_at_origin(self) -> float:
        fn = self.final
        if getattr(fn, "dimension", 1) == 2:
            return float(fn(0.0, 0.0))
        return float(fn(np.asarray([0.0]))[0])


def g_function(a: float, v: VarianceInterval):
    """G(a) = (sigma_hi^2 a+ - sigma_lo^2 a-) / 2, vectorized over ``a``.

    This is the generator of the Black-Scholes-Barenblatt / G-heat equation.
    """
    a = np.asarray(a, dtype=float)
    hi2 = v.sigma_hi * v.sigma_hi
    lo2 = v.sigma_lo * v.sigma_lo
    out = 0.5 * (hi2 * np.maximum(a, 0.0) + lo2 * np.minimum(a, 0.0))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class MaximalResult:
    value: float
    argmax: float


def golden_section_max(
    objective: Callable[[np.ndarray], np.ndarray],
    lo,
    hi,
    tol: float,
    size: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise golden-section maximization over [lo, hi].

    ``objective`` maps an array of shape (size,) of probe points to objective
    values of the same shape; each element carries an independent bracket.
    ``lo`` and ``hi`` may be scalars or arrays of shape (size,).  Returns
    (argmax, value) arrays.  Every bracket shrinks below ``tol`` in a fixed
    number of iterations, so the search always terminates.
    """
    a = np.broadcast_to(np.asarray(lo, dtype=float), (size,)).copy()
    b = np.broadcast_to(np.asarray(hi, dtype=float), (size,)).copy()
    span = float(np.max(b - a))
    if span <= tol:
        mid = 0.5 * (a + b)
        return mid, objective(mid)
    n_iter = int(math.ceil(math.log(tol / span) / math.log(_INVPHI)))
    width = b - a
    c = a + _INVPHI2 * width
    d = a + _INVPHI * width
    fc = objective(c)
    fd = objective(d)
    for _ in range(n_iter - 1):
        left = fc > fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        width = b - a
        c = a + _INVPHI2 * width
        d = a + _INVPHI * width
        carry = np.where(left, fc, fd)  # surviving interior value
        fresh = objective(np.where(left, c, d))
        fc = np.where(left, fresh, carry)
        fd = np.where(left, carry, fresh)
    mid = 0.5 * (a + b)
    return mid, objective(mid)


def argmax_with_candidates(
    objective: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    tol: float,
    size: int,
    extra: Sequence[np.ndarray] = (),
) -> tuple[np.ndarray, np.ndarray]:
    """Golden-section maximum compared against lo, mid and hi seeds.

    Ties within a small value tolerance resolve to the largest probe point,
    so a flat objective deterministically reports the upper endpoint.
    ``extra`` supplies additional candidate arrays of shape (size,).
    """
    if hi <= lo:
        v = np.full(size, hi)
        return v, objective(v)
    gs_v, gs_f = golden_section_max(objective, lo, hi, tol, size)
    cand_v = [np.full(size, lo), np.full(size, 0.5 * (lo + hi)), np.full(size, hi), gs_v]
    cand_f = [objective(cand_v[0]), objective(cand_v[1]), objective(cand_v[2]), gs_f]
    for v in extra:
        cand_v.append(np.asarray(v, dtype=float))
        cand_f.append(objective(cand_v[-1]))
    V = np.stack(cand_v)
    F = np.stack(cand_f)
    best = F.max(axis=0)
    tie_eps = 1e-10 * (1.0 + np.abs(best))
    eligible = F >= best - tie_eps
    V_masked = np.where(eligible, V, -np.inf)
    idx = V_masked.argmax(axis=0)
    cols = np.arange(size)
    return V[idx, cols], F[idx, cols]


def maximal_expectation(
    f: Callable[[float], float],
    v: VarianceInterval,
    tol_factor: float = 1e-6,
) -> MaximalResult:
    """Maximum of a continuous function over the interval [sigma_lo, sigma_hi].

    Golden-section search seeded against both endpoints and the midpoint;
    the probe tolerance is ``tol_factor`` times the interval width.  When the
    interval is degenerate the single point is returned without optimizing.
    When endpoint values tie within tolerance the upper endpoint wins, so
    the output is deterministic.
    """
    if v.is_degenerate:
        z = v.sigma_hi
        return MaximalResult(value=float(f(z)), argmax=z)

    def batch(zs: np.ndarray) -> np.ndarray:
        return np.array([f(float(z)) for z in zs], dtype=float)

    tol = tol_factor * v.width
    arg, val = argmax_with_candidates(batch, v.sigma_lo, v.sigma_hi, tol, size=1)
    return MaximalResult(value=float(val[0]), argmax=float(arg[0]))
