"""Geometry of the simultaneous band: cross-sections, coordinate bands,
zero-line checks, and significance regions.

At a covariate point x the band for a pair of groups is an ellipsoid in
response space: center x'(bhat_i - bhat_j), shape given by the pooled
residual scatter, squared radius equal to the critical constant times
x' delta x with delta the summed cross-product inverses. Projecting
that ellipsoid onto response coordinate q gives a classical band
center plus or minus sqrt(c * x' delta x * scatter_qq).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import NotUnivariate, UnboundedBox
from .model_core import FittedModels
from .sct_engine import observed_statistic
from .sup_solver import CovariateBox

_REFINE_REL = 1e-6


@dataclass(frozen=True, eq=False)
class TubeCrossSection:
    """The band's ellipsoidal slice at one covariate point.

    A response point z is inside when
    (z - center)' shape^{-1} (z - center) <= radius_sq.
    """

    x: np.ndarray
    center: np.ndarray
    shape: np.ndarray
    radius_sq: float

    @cached_property
    def _factor(self):
        return scipy.linalg.cho_factor(self.shape, lower=True)

    def mahalanobis_sq(self, z) -> float:
        d = np.asarray(z, dtype=float) - self.center
        return float(d @ scipy.linalg.cho_solve(self._factor, d))

    def contains(self, z) -> bool:
        return self.mahalanobis_sq(z) <= self.radius_sq

    def coordinate_interval(self, q: int) -> tuple[float, float]:
        """Extent of the ellipsoid along response coordinate q (1-based)."""
        h = np.sqrt(max(self.radius_sq, 0.0) * self.shape[q - 1, q - 1])
        c = self.center[q - 1]
        return float(c - h), float(c + h)


@dataclass(frozen=True)
class SignificanceRegion:
    """Covariate intervals where the band for one response coordinate
    excludes zero, i.e. where the groups demonstrably differ."""

    response: int
    intervals: tuple[tuple[float, float], ...]
    resolution: int


def _halfwidth_sq_coeffs(fit: FittedModels, pair: tuple[int, int], c: float):
    if c < 0.0:
        raise ValueError(f"critical constant must be nonnegative, got {c}")
    delta = fit.delta(*pair)
    db = fit.coef_difference(*pair)
    return db, delta


def cross_section(fit: FittedModels, pair: tuple[int, int], c: float,
                  x) -> TubeCrossSection:
    """Band cross-section for one pair at covariate point x."""
    fit.require_scatter()
    db, delta = _halfwidth_sq_coeffs(fit, pair, c)
    e = np.concatenate(([1.0], np.atleast_1d(np.asarray(x, dtype=float))))
    if e.size != fit.p + 1:
        raise ValueError(f"point has {e.size - 1} coordinates, expected {fit.p}")
    return TubeCrossSection(
        x=e[1:].copy(),
        center=e @ db,
        shape=fit.pooled_scatter,
        radius_sq=c * float(e @ delta @ e),
    )


def projected_band(fit: FittedModels, pair: tuple[int, int], c: float,
                   q: int, grid) -> list[tuple[float, float, float]]:
    """Band for response coordinate q along a grid of covariate points.

    Returns (x, lower, upper) triples; for p >= 2 the x slot holds a
    tuple of coordinates.
    """
    fit.require_scatter()
    if not 1 <= q <= fit.m:
        raise ValueError(f"response index {q} outside 1..{fit.m}")
    db, delta = _halfwidth_sq_coeffs(fit, pair, c)
    omega_qq = fit.pooled_scatter[q - 1, q - 1]
    out = []
    for point in grid:
        coords = np.atleast_1d(np.asarray(point, dtype=float))
        e = np.concatenate(([1.0], coords))
        if e.size != fit.p + 1:
            raise ValueError(
                f"grid point has {e.size - 1} coordinates, expected {fit.p}")
        mid = float(e @ db[:, q - 1])
        h = float(np.sqrt(c * (e @ delta @ e) * omega_qq))
        key = float(coords[0]) if fit.p == 1 else tuple(float(v) for v in coords)
        out.append((key, mid - h, mid + h))
    return out


def contains_zero_line(fit: FittedModels, pair: tuple[int, int], c: float,
                       box: CovariateBox) -> bool:
    """Does the band cover the zero difference everywhere on the region?

    True exactly when the pair's observed sup statistic stays at or
    below the critical constant, so this is the acceptance view of the
    same test ``compare`` reports as ``reject``.
    """
    if c < 0.0:
        raise ValueError(f"critical constant must be nonnegative, got {c}")
    t, _ = observed_statistic(fit, pair, box)
    return t <= c


def significance_region(fit: FittedModels, pair: tuple[int, int], c: float,
                        q: int, box: CovariateBox,
                        resolution: int = 201) -> SignificanceRegion:
    """Where along a finite interval the coordinate-q band excludes zero.

    Scans a uniform grid, then refines each crossing by bisection on
    |center| - halfwidth down to 1e-6 of the interval width. Returns
    disjoint closed intervals in increasing order.
    """
    fit.require_scatter()
    if fit.p != 1:
        raise NotUnivariate(f"significance regions need p = 1, got p = {fit.p}")
    if not box.is_finite:
        raise UnboundedBox("significance regions need a finite interval")
    if not 1 <= q <= fit.m:
        raise ValueError(f"response index {q} outside 1..{fit.m}")
    if resolution < 2:
        raise ValueError(f"resolution must be at least 2, got {resolution}")

    db, delta = _halfwidth_sq_coeffs(fit, pair, c)
    omega_qq = fit.pooled_scatter[q - 1, q - 1]

    def excess(t: float) -> float:
        e = np.array([1.0, t])
        mid = abs(float(e @ db[:, q - 1]))
        h = float(np.sqrt(c * (e @ delta @ e) * omega_qq))
        return mid - h

    low, high = box.bounds[0]
    if low == high:
        intervals = (((low, high),) if excess(low) > 0.0 else ())
        return SignificanceRegion(response=q, intervals=intervals,
                                  resolution=resolution)

    ts = np.linspace(low, high, resolution)
    sig = np.array([excess(t) > 0.0 for t in ts])

    def refine(inside: float, outside: float) -> float:
        """Bisect the sign change between a significant and a
        non-significant point."""
        a, b = inside, outside
        tol = _REFINE_REL * (high - low)
        while abs(b - a) > tol:
            mid = 0.5 * (a + b)
            if excess(mid) > 0.0:
                a = mid
            else:
                b = mid
        return 0.5 * (a + b)

    intervals = []
    idx = 0
    while idx < resolution:
        if not sig[idx]:
            idx += 1
            continue
        run_start = idx
        while idx + 1 < resolution and sig[idx + 1]:
            idx += 1
        left = ts[run_start] if run_start == 0 else refine(
            ts[run_start], ts[run_start - 1])
        right = ts[idx] if idx == resolution - 1 else refine(
            ts[idx], ts[idx + 1])
        intervals.append((float(left), float(right)))
        idx += 1

    return SignificanceRegion(response=q, intervals=tuple(intervals),
                              resolution=resolution)
