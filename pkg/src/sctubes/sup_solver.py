"""Maximize a ratio of quadratic forms over restricted covariate regions.

The object being maximized is R(t) = (e' A e) / (e' D e) where
e = (1, t_1, ..., t_p) prepends an intercept to the covariate point,
A is positive semidefinite and D positive definite. Three region
shapes are supported: a closed interval (p = 1), a finite box, and the
whole space.

On an interval the supremum is exact: the derivative of a ratio of two
quadratics in one variable has a polynomial numerator whose degree-3
coefficient cancels identically, so the stationary points solve a
quadratic and the supremum is attained at an endpoint or one of at most
two interior roots. Over the whole space it is the largest generalized
eigenvalue of (A, D). Over a box with p >= 2 no closed form exists and
a multi-start local search is used.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize
from numpy.polynomial import polynomial as npoly

from .errors import NotUnivariate, UnboundedBox
from .rand_engine import StreamKey

_SYM_RTOL = 1e-8
# Multi-start search layout for boxes with p >= 2: every corner (capped),
# the center, and this many pseudo-random interior points from a fixed key.
_INTERIOR_STARTS = 32
_CORNER_CAP = 4096
_MAXFEV = 500


@dataclass(frozen=True)
class QuadraticRatio:
    """The pair (A, D) defining R(t) = (e'Ae)/(e'De), e = (1, t).

    Both matrices are (p+1) x (p+1) and symmetric; they are copied and
    symmetrized on construction. Positive definiteness of D is the
    caller's contract and is only discovered lazily by the solvers.
    """

    numerator: np.ndarray
    denominator: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.numerator, dtype=float)
        d = np.asarray(self.denominator, dtype=float)
        for name, mat in (("numerator", a), ("denominator", d)):
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise ValueError(f"{name} must be square, got shape {mat.shape}")
            if not np.isfinite(mat).all():
                raise ValueError(f"{name} contains non-finite entries")
            scale = np.abs(mat).max()
            if scale > 0 and np.abs(mat - mat.T).max() > _SYM_RTOL * scale:
                raise ValueError(f"{name} is not symmetric")
        if a.shape != d.shape:
            raise ValueError(
                f"numerator {a.shape} and denominator {d.shape} differ in shape")
        object.__setattr__(self, "numerator", 0.5 * (a + a.T))
        object.__setattr__(self, "denominator", 0.5 * (d + d.T))

    @property
    def p(self) -> int:
        return self.numerator.shape[0] - 1

    def value_at(self, point) -> float:
        """Evaluate the ratio at a covariate point (without the leading 1)."""
        e = np.concatenate(([1.0], np.atleast_1d(np.asarray(point, dtype=float))))
        if e.size != self.p + 1:
            raise ValueError(f"point has {e.size - 1} coordinates, expected {self.p}")
        return float((e @ self.numerator @ e) / (e @ self.denominator @ e))


@dataclass(frozen=True)
class CovariateBox:
    """A product of closed coordinate intervals, possibly infinite.

    Each bound pair is (low, high) with low <= high; (-inf, inf) in
    every coordinate means the whole space. Mixed finite/infinite
    coordinates are representable but rejected by the solvers that
    need one or the other.
    """

    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        cleaned = []
        for pair in self.bounds:
            lo, hi = (float(v) for v in pair)
            if math.isnan(lo) or math.isnan(hi):
                raise ValueError("box bounds cannot be NaN")
            if lo > hi:
                raise ValueError(f"box bound ({lo}, {hi}) has low > high")
            cleaned.append((lo, hi))
        if not cleaned:
            raise ValueError("box needs at least one coordinate")
        object.__setattr__(self, "bounds", tuple(cleaned))

    @classmethod
    def interval(cls, low: float, high: float) -> "CovariateBox":
        return cls(((low, high),))

    @classmethod
    def point(cls, *coords: float) -> "CovariateBox":
        return cls(tuple((float(c), float(c)) for c in coords))

    @classmethod
    def whole_space(cls, p: int) -> "CovariateBox":
        return cls(tuple((-math.inf, math.inf) for _ in range(p)))

    @property
    def p(self) -> int:
        return len(self.bounds)

    @property
    def is_finite(self) -> bool:
        return all(math.isfinite(lo) and math.isfinite(hi) for lo, hi in self.bounds)

    @property
    def is_whole_space(self) -> bool:
        return all(lo == -math.inf and hi == math.inf for lo, hi in self.bounds)

    @property
    def is_point(self) -> bool:
        return all(lo == hi for lo, hi in self.bounds)

    def corner_point(self) -> np.ndarray:
        if not self.is_point:
            raise ValueError("box is not a single point")
        return np.array([lo for lo, _ in self.bounds])

    def describe(self) -> tuple[str, ...]:
        return tuple(f"{lo:g}:{hi:g}" for lo, hi in self.bounds)


def _ratio_coeffs(q: QuadraticRatio) -> tuple[np.ndarray, np.ndarray]:
    """Univariate numerator/denominator polynomial coefficients, low order first."""
    a, d = q.numerator, q.denominator
    n = np.array([a[0, 0], 2.0 * a[0, 1], a[1, 1]])
    dd = np.array([d[0, 0], 2.0 * d[0, 1], d[1, 1]])
    return n, dd


def sup_interval(q: QuadraticRatio, low: float, high: float) -> tuple[float, float]:
    """Exact supremum of the ratio over t in [low, high], with its argmax.

    Candidates are the two endpoints plus the real stationary points.
    The stationary equation N'(t)D(t) - N(t)D'(t) = 0 is formed as a
    cubic whose leading coefficient cancels in exact arithmetic; the
    effective degree is decided by a relative threshold and the roots
    come from the companion-matrix eigenvalues of the trimmed
    polynomial. Ties go to the earlier candidate, endpoints first.
    """
    if q.p != 1:
        raise NotUnivariate(f"interval supremum needs p = 1, got p = {q.p}")
    low, high = float(low), float(high)
    if not (math.isfinite(low) and math.isfinite(high)):
        raise UnboundedBox("interval endpoints must be finite")
    if low > high:
        raise ValueError(f"interval ({low}, {high}) has low > high")

    n, d = _ratio_coeffs(q)
    candidates = [low, high] if high > low else [low]
    stat = npoly.polysub(npoly.polymul(npoly.polyder(n), d),
                         npoly.polymul(n, npoly.polyder(d)))
    tol = 1e-12 * np.abs(stat).max()
    trimmed = npoly.polytrim(stat, tol) if tol > 0 else np.zeros(1)
    if trimmed.size > 1:
        for root in npoly.polyroots(trimmed):
            if abs(root.imag) <= 1e-9 * (1.0 + abs(root.real)):
                t = float(root.real)
                if low < t < high:
                    candidates.append(t)

    best_t, best_v = candidates[0], q.value_at([candidates[0]])
    for t in candidates[1:]:
        v = q.value_at([t])
        if v > best_v:
            best_t, best_v = t, v
    return best_v, best_t


def _start_points(box: CovariateBox) -> np.ndarray:
    """Corners (capped), center, and fixed pseudo-random interior points."""
    lows = np.array([lo for lo, _ in box.bounds])
    highs = np.array([hi for _, hi in box.bounds])
    p = box.p
    if 2 ** p <= _CORNER_CAP:
        corners = np.array(list(itertools.product(*box.bounds)))
    else:
        picks = StreamKey(seed=0, substream=1).generator()
        mask = picks.integers(0, 2, size=(_CORNER_CAP, p)).astype(bool)
        corners = np.where(mask, highs, lows)
    center = 0.5 * (lows + highs)
    u = StreamKey(seed=0, substream=2).generator().random((_INTERIOR_STARTS, p))
    interior = lows + u * (highs - lows)
    return np.vstack([corners, center[None, :], interior])


def sup_box(q: QuadraticRatio, box: CovariateBox) -> tuple[float, np.ndarray]:
    """Supremum of the ratio over a finite box, with an argmax point.

    For p = 1 this defers to the exact interval solver. For p >= 2 it
    runs a bounded Nelder-Mead refinement from every start point and is
    guaranteed to return at least the best value seen over the starts
    themselves.
    """
    if box.p != q.p:
        raise ValueError(f"box has p = {box.p}, ratio has p = {q.p}")
    if not box.is_finite:
        raise UnboundedBox("box supremum needs finite bounds everywhere")
    if q.p == 1:
        v, t = sup_interval(q, box.bounds[0][0], box.bounds[0][1])
        return v, np.array([t])
    if box.is_point:
        x = box.corner_point()
        return q.value_at(x), x

    starts = _start_points(box)
    best_x = starts[0]
    best_v = q.value_at(best_x)
    for x0 in starts:
        v0 = q.value_at(x0)
        if v0 > best_v:
            best_v, best_x = v0, x0
        res = scipy.optimize.minimize(
            lambda x: -q.value_at(x), x0,
            method="Nelder-Mead", bounds=box.bounds,
            options={"maxfev": _MAXFEV, "xatol": 1e-10, "fatol": 1e-12},
        )
        if -res.fun > best_v:
            best_v = -res.fun
            best_x = np.clip(res.x, [b[0] for b in box.bounds],
                             [b[1] for b in box.bounds])
    return best_v, np.asarray(best_x, dtype=float)


def sup_unbounded(q: QuadraticRatio) -> float:
    """Supremum of the ratio over the whole covariate space.

    Equals the largest eigenvalue of the symmetric-definite pencil
    (A, D); the supremum may only be approached, not attained, when the
    top eigenvector has a zero intercept coordinate.
    """
    w = scipy.linalg.eigh(q.numerator, q.denominator, eigvals_only=True)
    return max(float(w[-1]), 0.0)


def unbounded_argmax(q: QuadraticRatio) -> np.ndarray | None:
    """Covariate point attaining the whole-space supremum, if one exists.

    Returns None when the top eigenvector is orthogonal to the
    intercept coordinate, in which case the supremum is a limit along
    a direction rather than a point.
    """
    w, v = scipy.linalg.eigh(q.numerator, q.denominator)
    top = v[:, -1]
    if abs(top[0]) <= 1e-9 * np.linalg.norm(top):
        return None
    return top[1:] / top[0]
