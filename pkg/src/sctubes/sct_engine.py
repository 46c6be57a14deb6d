"""Monte Carlo engine for simultaneous confidence tubes.

The tube construction compares group coefficient matrices pairwise over
a covariate region. Its critical constant is the upper quantile of a
pivotal statistic: the supremum, over the comparison family and the
region, of a ratio whose numerator couples per-group normal matrices
through the design cross-products and whose denominator is a common
Wishart draw. The law depends on the designs only through the
cross-product inverses and the pooled degrees of freedom, never on the
fitted coefficients, which is what makes one simulated sample reusable
for every pair's p-value.

Replicate j of a run is a pure function of (seed, j). Draws are made in
fixed blocks of 8192 replicates; the block holding replicate j is keyed
by the block's first index, full blocks are always drawn even when r
cuts the last one short, and each group's normal matrices live on their
own substream (the Wishart noise on substream 0). Workers therefore
cannot change results: blocks are handed to threads and written back by
position.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.stats import binom

from .errors import EmptyFamily, MetaMismatch, TooFewReplicates
from .model_core import FittedModels
from .rand_engine import StreamKey, normal_block, wishart_factor_block
from .sup_solver import CovariateBox, QuadraticRatio, sup_box, sup_interval, \
    sup_unbounded, unbounded_argmax

_BLOCK = 8192


@dataclass(frozen=True)
class ComparisonFamily:
    """Which ordered group pairs (i, j), 1-based, are compared jointly.

    Use the factory methods; ``kind`` records which construction was
    asked for so reports can echo it.
    """

    pairs: tuple[tuple[int, int], ...]
    kind: str = "custom"
    control: int | None = None

    def __post_init__(self):
        pairs = tuple((int(i), int(j)) for i, j in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        if not pairs:
            raise EmptyFamily("comparison family has no pairs")
        seen = set()
        for i, j in pairs:
            if i < 1 or j < 1:
                raise ValueError(f"group indices are 1-based, got ({i}, {j})")
            if i == j:
                raise ValueError(f"pair ({i}, {j}) compares a group with itself")
            if (i, j) in seen:
                raise ValueError(f"duplicate pair ({i}, {j})")
            seen.add((i, j))

    @classmethod
    def pairwise(cls, k: int) -> "ComparisonFamily":
        """Every unordered pair among k groups, listed as (i, j) with i < j."""
        pairs = tuple((i, j) for i in range(1, k + 1) for j in range(i + 1, k + 1))
        return cls(pairs=pairs, kind="pairwise")

    @classmethod
    def vs_control(cls, k: int, control: int) -> "ComparisonFamily":
        """Each non-control group against the control group."""
        if not 1 <= control <= k:
            raise ValueError(f"control index {control} outside 1..{k}")
        pairs = tuple((i, control) for i in range(1, k + 1) if i != control)
        return cls(pairs=pairs, kind="vs_control", control=control)

    @classmethod
    def successive(cls, k: int) -> "ComparisonFamily":
        """Each group against the next one: (1,2), (2,3), ..."""
        pairs = tuple((i, i + 1) for i in range(1, k))
        return cls(pairs=pairs, kind="successive")

    @classmethod
    def custom(cls, pairs) -> "ComparisonFamily":
        return cls(pairs=tuple(tuple(p) for p in pairs), kind="custom")

    def validate_for(self, k: int) -> None:
        for i, j in self.pairs:
            if i > k or j > k:
                raise ValueError(f"pair ({i}, {j}) outside the {k} fitted groups")


@dataclass(frozen=True)
class SampleMeta:
    """Fingerprint of what a simulated sample is valid for."""

    nu: int
    m: int
    p: int
    family: ComparisonFamily
    box: CovariateBox
    design_digest: str


@dataclass(frozen=True, eq=False)
class SimulatedSample:
    """Sorted pivotal statistic replicates plus their provenance."""

    values: np.ndarray
    r: int
    seed: int
    meta: SampleMeta


@dataclass(frozen=True)
class CriticalConstantResult:
    """An upper quantile estimate with its Monte Carlo uncertainty.

    ``order_stat_interval`` is a 99% nonparametric confidence interval
    for the true quantile built from binomial quantile ranks.
    ``eb_coverage_interval`` brackets the realized coverage of a tube
    using the estimated constant: mean plus or minus three standard
    deviations of the relevant beta law.
    """

    c_hat: float
    alpha: float
    r: int
    rank: int
    order_stat_interval: tuple[float, float]
    eb_coverage_interval: tuple[float, float]


def design_digest(fit: FittedModels) -> str:
    """Hash of everything the pivotal law depends on."""
    h = hashlib.sha256()
    h.update(f"nu={fit.nu};m={fit.m};p={fit.p};k={fit.k}".encode())
    for g in fit.gram:
        h.update(np.ascontiguousarray(g, dtype=float).tobytes())
    return h.hexdigest()[:16]


def quantile_rank(r: int, alpha: float) -> int:
    """Order-statistic rank for the (1 - alpha) upper quantile.

    ceil((1 - alpha) * r), guarded against the product landing a hair
    above an integer through rounding.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    target = (1.0 - alpha) * r
    rank = math.ceil(target - 1e-12 * max(1.0, target))
    return min(max(rank, 1), r)


# --- simulation kernel --------------------------------------------------

class _SimPlan:
    """Design-dependent constants hoisted out of the replicate loop."""

    def __init__(self, fit: FittedModels, family: ComparisonFamily,
                 box: CovariateBox):
        family.validate_for(fit.k)
        if box.p != fit.p:
            raise ValueError(f"box has p = {box.p}, fit has p = {fit.p}")
        self.nu, self.m, self.p = fit.nu, fit.m, fit.p
        self.pairs0 = [(i - 1, j - 1) for i, j in family.pairs]
        self.needed = sorted({g for pair in self.pairs0 for g in pair})
        # Lower factors of the cross-product inverses: G G' = (X'X)^{-1}.
        gfac = {g: np.linalg.cholesky(fit.gram_inv[g]) for g in self.needed}
        self.box = box

        if box.is_whole_space:
            self.mode = "whole"
            # Per pair, fold the denominator into the numerator factors:
            # with D = L L', the supremum is the largest eigenvalue of
            # (L^{-1} M) W^{-1} (L^{-1} M)'.
            self.pair_ops = []
            for i, j in self.pairs0:
                ld = np.linalg.cholesky(fit.gram_inv[i] + fit.gram_inv[j])
                pi = scipy.linalg.solve_triangular(ld, gfac[i], lower=True)
                pj = scipy.linalg.solve_triangular(ld, gfac[j], lower=True)
                self.pair_ops.append((i, j, pi, pj))
        elif box.is_point:
            self.mode = "point"
            e = np.concatenate(([1.0], box.corner_point()))
            self.pair_ops = []
            for i, j in self.pairs0:
                den = float(e @ (fit.gram_inv[i] + fit.gram_inv[j]) @ e)
                self.pair_ops.append((i, j, gfac[i].T @ e, gfac[j].T @ e, den))
        elif box.is_finite and fit.p == 1:
            self.mode = "interval"
            self.low, self.high = box.bounds[0]
            self.pair_ops = []
            for i, j in self.pairs0:
                d = fit.gram_inv[i] + fit.gram_inv[j]
                dc = (d[0, 0], 2.0 * d[0, 1], d[1, 1])
                self.pair_ops.append((i, j, gfac[i], gfac[j], dc))
        elif box.is_finite:
            self.mode = "box"
            self.pair_ops = [(i, j, gfac[i], gfac[j],
                              fit.gram_inv[i] + fit.gram_inv[j])
                             for i, j in self.pairs0]
        else:
            # Mixed finite/infinite bounds have no solver.
            raise ValueError(
                "box must be a point, finite, or the whole space; "
                f"got bounds {box.bounds}")


def _lam_max_gram(v: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of V'V (equivalently VV') for stacked V.

    Forms the smaller-side Gram matrix; its nonzero spectrum matches
    the other side's. Sizes 1 and 2 use closed forms.
    """
    b, rows, cols = v.shape
    if rows <= cols:
        s = v @ v.transpose(0, 2, 1)
    else:
        s = v.transpose(0, 2, 1) @ v
    side = s.shape[1]
    if side == 1:
        return s[:, 0, 0].copy()
    if side == 2:
        tr = s[:, 0, 0] + s[:, 1, 1]
        det = s[:, 0, 0] * s[:, 1, 1] - s[:, 0, 1] * s[:, 1, 0]
        return 0.5 * (tr + np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0)))
    return np.linalg.eigvalsh(s)[:, -1]


def _interval_sup_vec(a_mats: np.ndarray, dc: tuple[float, float, float],
                      low: float, high: float) -> np.ndarray:
    """Vectorized exact interval supremum for stacked 2x2 numerators.

    Same stationary-point construction as sup_interval: the cubic
    coefficient cancels identically, leaving a quadratic whose real
    interior roots join the endpoints as candidates.
    """
    n0 = a_mats[:, 0, 0]
    n1 = 2.0 * a_mats[:, 0, 1]
    n2 = a_mats[:, 1, 1]
    d0, d1, d2 = dc

    def ratio(t):
        return (n0 + t * (n1 + t * n2)) / (d0 + t * (d1 + t * d2))

    best = ratio(low)
    if high > low:
        np.maximum(best, ratio(high), out=best)

        c2 = n2 * d1 - n1 * d2
        c1 = 2.0 * (n2 * d0 - n0 * d2)
        c0 = n1 * d0 - n0 * d1
        scale = np.maximum(np.abs(c2), np.maximum(np.abs(c1), np.abs(c0)))
        tol = 1e-12 * scale
        quad = np.abs(c2) > tol
        lin = ~quad & (np.abs(c1) > tol)
        with np.errstate(all="ignore"):
            disc = c1 * c1 - 4.0 * c2 * c0
            root = np.sqrt(np.maximum(disc, 0.0))
            den = np.where(quad, 2.0 * c2, 1.0)
            for t in ((-c1 + root) / den, (-c1 - root) / den):
                ok = quad & (disc >= 0.0) & (t > low) & (t < high)
                if ok.any():
                    val = ratio(np.where(ok, t, low))
                    np.maximum(best, np.where(ok, val, -np.inf), out=best)
            tlin = -c0 / np.where(lin, c1, 1.0)
            ok = lin & (tlin > low) & (tlin < high)
            if ok.any():
                val = ratio(np.where(ok, tlin, low))
                np.maximum(best, np.where(ok, val, -np.inf), out=best)
    return best


def _block_values(plan: _SimPlan, seed: int, start: int, count: int) -> np.ndarray:
    """Pivotal statistic for replicates start .. start+count-1.

    Full fixed-size blocks are always drawn and then sliced, so the
    value of a replicate never depends on r or on scheduling.
    """
    m, p, nu = plan.m, plan.p, plan.nu
    lw = wishart_factor_block(
        m, nu, StreamKey(seed, start, 0), _BLOCK)[:count]
    us = {
        g: normal_block(p + 1, m, StreamKey(seed, start, g + 1), _BLOCK)[:count]
        for g in plan.needed
    }

    out = np.full(count, -np.inf)
    if plan.mode == "point":
        for i, j, wi, wj, den in plan.pair_ops:
            z = np.einsum("i,bim->bm", wi, us[i]) - np.einsum(
                "i,bim->bm", wj, us[j])
            v = np.linalg.solve(lw, z[:, :, None])
            np.maximum(out, (v[:, :, 0] ** 2).sum(axis=1) / den, out=out)
        return out

    if plan.mode == "whole":
        for i, j, pi, pj, in plan.pair_ops:
            mt = pi @ us[i] - pj @ us[j]
            v = np.linalg.solve(lw, mt.transpose(0, 2, 1))
            np.maximum(out, _lam_max_gram(v), out=out)
        return out

    if plan.mode == "interval":
        for i, j, gi, gj, dc in plan.pair_ops:
            mt = gi @ us[i] - gj @ us[j]
            v = np.linalg.solve(lw, mt.transpose(0, 2, 1))
            a = np.einsum("bki,bkj->bij", v, v)
            np.maximum(out, _interval_sup_vec(a, dc, plan.low, plan.high),
                       out=out)
        return out

    # box mode: exact vector draws, per-replicate numeric maximization
    for i, j, gi, gj, d in plan.pair_ops:
        mt = gi @ us[i] - gj @ us[j]
        v = np.linalg.solve(lw, mt.transpose(0, 2, 1))
        a = np.einsum("bki,bkj->bij", v, v)
        for b in range(count):
            val, _ = sup_box(QuadraticRatio(a[b], d), plan.box)
            if val > out[b]:
                out[b] = val
    return out


def simulate_pivot(fit: FittedModels, family: ComparisonFamily,
                   box: CovariateBox, r: int, seed: int,
                   workers: int = 1) -> SimulatedSample:
    """Simulate r replicates of the pivotal sup statistic, sorted ascending.

    Parameters
    ----------
    fit : FittedModels
        Supplies the cross-product inverses and pooled degrees of
        freedom; the fitted coefficients themselves play no role.
    family, box
        Jointly define what the supremum ranges over.
    r, seed
        Replicate count and stream seed. Output is a pure function of
        these two (plus the fit's designs); worker count cannot affect it.
    """
    if r < 1:
        raise TooFewReplicates(f"need at least one replicate, got {r}")
    if workers < 1:
        raise ValueError(f"workers must be positive, got {workers}")
    # The null law itself never touches the scatter, but a degenerate
    # fit cannot be tested against the sample either, so refuse early.
    fit.require_scatter()
    plan = _SimPlan(fit, family, box)

    nblocks = (r + _BLOCK - 1) // _BLOCK
    values = np.empty(r)

    def fill(block: int) -> None:
        start = block * _BLOCK
        count = min(_BLOCK, r - start)
        values[start:start + count] = _block_values(plan, seed, start, count)

    if workers == 1 or nblocks == 1:
        for block in range(nblocks):
            fill(block)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, range(nblocks)))

    values.sort()
    meta = SampleMeta(nu=fit.nu, m=fit.m, p=fit.p, family=family, box=box,
                      design_digest=design_digest(fit))
    return SimulatedSample(values=values, r=r, seed=seed, meta=meta)


def critical_constant(sample: SimulatedSample, alpha: float) -> CriticalConstantResult:
    """Order-statistic estimate of the level (1 - alpha) critical constant.

    Raises TooFewReplicates unless alpha * r >= 10: with fewer expected
    tail exceedances the quantile estimate is noise.
    """
    r = sample.r
    if alpha * r < 10.0:
        raise TooFewReplicates(
            f"alpha * r = {alpha * r:.3g} < 10; increase replicates")
    rank = quantile_rank(r, alpha)
    c_hat = float(sample.values[rank - 1])

    prob = 1.0 - alpha
    lo_rank = int(binom.ppf(0.005, r, prob))
    hi_rank = int(binom.ppf(0.995, r, prob)) + 1
    lo_rank = min(max(lo_rank, 1), r)
    hi_rank = min(max(hi_rank, 1), r)
    interval = (float(sample.values[lo_rank - 1]), float(sample.values[hi_rank - 1]))

    # Realized coverage of the rank-th order statistic follows a
    # Beta(rank, r - rank + 1) law; report mean +- 3 sd.
    a, b = float(rank), float(r - rank + 1)
    mean = a / (a + b)
    sd = math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1.0)))
    eb = (mean - 3.0 * sd, mean + 3.0 * sd)

    return CriticalConstantResult(
        c_hat=c_hat, alpha=alpha, r=r, rank=rank,
        order_stat_interval=interval, eb_coverage_interval=eb)


def observed_statistic(fit: FittedModels, pair: tuple[int, int],
                       box: CovariateBox) -> tuple[float, np.ndarray | None]:
    """Supremum of the observed standardized difference for one pair.

    Returns the statistic and the covariate point attaining it; the
    point is None when the whole-space supremum is only approached in
    a limit. Requires a positive definite pooled scatter.
    """
    lfac = fit.require_scatter()
    i, j = pair
    db = fit.coef_difference(i, j)
    v = scipy.linalg.solve_triangular(lfac, db.T, lower=True)
    q = QuadraticRatio(v.T @ v, fit.delta(i, j))

    if box.p != fit.p:
        raise ValueError(f"box has p = {box.p}, fit has p = {fit.p}")
    if box.is_whole_space:
        return sup_unbounded(q), unbounded_argmax(q)
    if box.is_point:
        x = box.corner_point()
        return q.value_at(x), x
    if box.is_finite:
        if fit.p == 1:
            val, t = sup_interval(q, box.bounds[0][0], box.bounds[0][1])
            return val, np.array([t])
        return sup_box(q, box)
    raise ValueError(
        f"box must be a point, finite, or the whole space; got {box.bounds}")


def _check_meta(fit: FittedModels, family: ComparisonFamily,
                box: CovariateBox, sample: SimulatedSample) -> None:
    meta = sample.meta
    want = SampleMeta(nu=fit.nu, m=fit.m, p=fit.p, family=family, box=box,
                      design_digest=design_digest(fit))
    if meta != want:
        raise MetaMismatch(
            "simulated sample was generated for a different "
            "fit/family/region combination")


def adjusted_p_values(fit: FittedModels, family: ComparisonFamily,
                      box: CovariateBox, sample: SimulatedSample
                      ) -> dict[tuple[int, int], float]:
    """Joint p-value for each pair: the fraction of simulated replicates
    strictly exceeding the pair's observed statistic.

    With the order-statistic convention for the critical constant,
    p <= alpha holds exactly when the statistic reaches the constant.
    """
    _check_meta(fit, family, box, sample)
    out = {}
    for pair in family.pairs:
        t, _ = observed_statistic(fit, pair, box)
        idx = int(np.searchsorted(sample.values, t, side="right"))
        out[pair] = (sample.r - idx) / sample.r
    return out


@dataclass(frozen=True, eq=False)
class PairComparison:
    pair: tuple[int, int]
    labels: tuple[str, str]
    statistic: float
    argmax: np.ndarray | None
    p_value: float
    reject: bool
    significance_regions: tuple | None


@dataclass(frozen=True, eq=False)
class ComparisonReport:
    """Everything one comparison run produced, ready for serialization."""

    labels: tuple[str, ...]
    group_sizes: tuple[int, ...]
    nu: int
    p: int
    m: int
    family: ComparisonFamily
    box: CovariateBox
    alpha: float
    r: int
    seed: int
    critical: CriticalConstantResult
    pairs: tuple[PairComparison, ...]


def compare(fit: FittedModels, family: ComparisonFamily, box: CovariateBox,
            alpha: float, r: int, seed: int, workers: int = 1,
            region_resolution: int = 201) -> ComparisonReport:
    """Run the whole pipeline: simulate, estimate the constant, test each pair.

    Significance regions (where the tube excludes zero, per response
    coordinate) are attached only for a finite single-covariate box,
    where they are well defined intervals.
    """
    fit.require_scatter()
    sample = simulate_pivot(fit, family, box, r, seed, workers=workers)
    crit = critical_constant(sample, alpha)
    pvals = adjusted_p_values(fit, family, box, sample)

    want_regions = fit.p == 1 and box.is_finite and not box.is_point
    results = []
    for pair in family.pairs:
        t, argmax = observed_statistic(fit, pair, box)
        regions = None
        if want_regions:
            from .tube_geometry import significance_region
            regions = tuple(
                significance_region(fit, pair, crit.c_hat, q, box,
                                    resolution=region_resolution)
                for q in range(1, fit.m + 1))
        results.append(PairComparison(
            pair=pair,
            labels=(fit.labels[pair[0] - 1], fit.labels[pair[1] - 1]),
            statistic=t,
            argmax=None if argmax is None else np.asarray(argmax, dtype=float),
            p_value=pvals[pair],
            reject=t >= crit.c_hat,
            significance_regions=regions,
        ))

    return ComparisonReport(
        labels=fit.labels, group_sizes=fit.group_sizes, nu=fit.nu,
        p=fit.p, m=fit.m, family=family, box=box, alpha=alpha, r=r,
        seed=seed, critical=crit, pairs=tuple(results))
