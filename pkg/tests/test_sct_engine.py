"""Simulation engine: keying, distributional oracles, quantiles, p-values."""

from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg
import scipy.stats

from conftest import make_dataset
from sctubes.classical_tests import f_quantile, pointwise_constant
from sctubes.errors import (
    DegenerateScatter,
    EmptyFamily,
    MetaMismatch,
    TooFewReplicates,
)
from sctubes.model_core import fit_models
from sctubes.rand_engine import StreamKey, normal_block, wishart_factor_block
from sctubes.sct_engine import (
    ComparisonFamily,
    SampleMeta,
    SimulatedSample,
    adjusted_p_values,
    compare,
    critical_constant,
    design_digest,
    observed_statistic,
    quantile_rank,
    simulate_pivot,
)
from sctubes.sup_solver import CovariateBox, QuadraticRatio, sup_interval


def univariate_fit(seed=5, sizes=(20, 26), offset=0.0, noise=1.0):
    rng = np.random.default_rng(seed)
    coef = np.array([[1.0], [0.5]])
    data = make_dataset(rng, sizes, (coef, coef + offset), noise=noise)
    return fit_models(data)


def fake_sample(values):
    values = np.sort(np.asarray(values, dtype=float))
    meta = SampleMeta(nu=10, m=1, p=1, family=ComparisonFamily.pairwise(2),
                      box=CovariateBox.whole_space(1), design_digest="0" * 16)
    return SimulatedSample(values=values, r=len(values), seed=0, meta=meta)


# --- comparison families --------------------------------------------------

def test_pairwise_lists_each_unordered_pair_once():
    fam = ComparisonFamily.pairwise(3)
    assert fam.pairs == ((1, 2), (1, 3), (2, 3))
    assert fam.kind == "pairwise"
    assert len(ComparisonFamily.pairwise(5).pairs) == 10


def test_vs_control_pairs():
    fam = ComparisonFamily.vs_control(3, 2)
    assert fam.pairs == ((1, 2), (3, 2))
    assert fam.control == 2
    assert ComparisonFamily.vs_control(2, 1).pairs == ((2, 1),)
    with pytest.raises(ValueError):
        ComparisonFamily.vs_control(3, 4)


def test_successive_pairs():
    assert ComparisonFamily.successive(4).pairs == ((1, 2), (2, 3), (3, 4))


def test_family_validation():
    with pytest.raises(EmptyFamily):
        ComparisonFamily.custom([])
    with pytest.raises(ValueError):
        ComparisonFamily.custom([(1, 1)])
    with pytest.raises(ValueError):
        ComparisonFamily.custom([(1, 2), (1, 2)])
    with pytest.raises(ValueError):
        ComparisonFamily.custom([(0, 1)])
    with pytest.raises(ValueError):
        ComparisonFamily.pairwise(3).validate_for(2)


# --- quantile convention --------------------------------------------------

def test_quantile_rank_convention():
    assert quantile_rank(100, 0.05) == 95
    assert quantile_rank(1_000_000, 0.05) == 950_000
    # 0.95 * 1000 is not exactly representable; the guard keeps it at 950.
    assert quantile_rank(1000, 0.05) == 950
    assert quantile_rank(10, 0.999) == 1
    with pytest.raises(ValueError):
        quantile_rank(100, 0.0)


def test_critical_constant_is_rank_order_statistic():
    sample = fake_sample(np.arange(1.0, 101.0))
    res = critical_constant(sample, 0.1)
    assert res.rank == 90
    assert res.c_hat == 90.0
    lo, hi = res.order_stat_interval
    assert lo <= res.c_hat <= hi
    elo, ehi = res.eb_coverage_interval
    assert elo <= 0.9 <= ehi


def test_critical_constant_needs_enough_tail_mass():
    # 100 values at alpha = 0.05 puts only 5 replicates in the tail.
    sample = fake_sample(np.arange(1.0, 101.0))
    with pytest.raises(TooFewReplicates):
        critical_constant(sample, 0.05)


def test_simulate_rejects_zero_replicates(two_group_fit):
    with pytest.raises(TooFewReplicates):
        simulate_pivot(two_group_fit, ComparisonFamily.pairwise(2),
                       CovariateBox.whole_space(1), 0, seed=1)


# --- simulation keying and determinism ------------------------------------

def test_same_seed_reproduces_bitwise(two_group_fit):
    fam = ComparisonFamily.pairwise(2)
    box = CovariateBox.interval(0.0, 10.0)
    a = simulate_pivot(two_group_fit, fam, box, 500, seed=9)
    b = simulate_pivot(two_group_fit, fam, box, 500, seed=9)
    assert np.array_equal(a.values, b.values)
    c = simulate_pivot(two_group_fit, fam, box, 500, seed=10)
    assert not np.array_equal(a.values, c.values)


def test_replicates_are_a_pure_function_of_seed_and_index(two_group_fit):
    fam = ComparisonFamily.pairwise(2)
    box = CovariateBox.whole_space(1)
    small = simulate_pivot(two_group_fit, fam, box, 50, seed=3)
    large = simulate_pivot(two_group_fit, fam, box, 100, seed=3)
    assert np.isin(small.values, large.values).all()


def test_worker_count_cannot_change_results(two_group_fit):
    fam = ComparisonFamily.pairwise(2)
    box = CovariateBox.whole_space(1)
    serial = simulate_pivot(two_group_fit, fam, box, 20_000, seed=4, workers=1)
    threaded = simulate_pivot(two_group_fit, fam, box, 20_000, seed=4, workers=8)
    assert np.array_equal(serial.values, threaded.values)


def test_reversed_pair_gives_identical_sample(two_group_fit):
    box = CovariateBox.interval(0.0, 10.0)
    fwd = simulate_pivot(two_group_fit, ComparisonFamily.custom([(1, 2)]),
                         box, 300, seed=6)
    rev = simulate_pivot(two_group_fit, ComparisonFamily.custom([(2, 1)]),
                         box, 300, seed=6)
    assert np.array_equal(fwd.values, rev.values)


def test_interval_mode_matches_scalar_solver(two_group_fit):
    """The vectorized interval kernel must agree with the reference path."""
    fit = two_group_fit
    fam = ComparisonFamily.pairwise(2)
    low, high = 0.0, 7.5
    seed, r = 13, 16
    sample = simulate_pivot(fit, fam, CovariateBox.interval(low, high), r, seed)

    lw = wishart_factor_block(fit.m, fit.nu, StreamKey(seed, 0, 0), 8192)[:r]
    u1 = normal_block(fit.p + 1, fit.m, StreamKey(seed, 0, 1), 8192)[:r]
    u2 = normal_block(fit.p + 1, fit.m, StreamKey(seed, 0, 2), 8192)[:r]
    g1 = np.linalg.cholesky(fit.gram_inv[0])
    g2 = np.linalg.cholesky(fit.gram_inv[1])
    d = fit.delta(1, 2)
    vals = []
    for b in range(r):
        mmat = g1 @ u1[b] - g2 @ u2[b]
        v = scipy.linalg.solve_triangular(lw[b], mmat.T, lower=True)
        value, _ = sup_interval(QuadraticRatio(v.T @ v, d), low, high)
        vals.append(value)
    # The paths share draws but not evaluation order, so compare to
    # rounding error rather than bitwise.
    np.testing.assert_allclose(sample.values, np.sort(vals), rtol=1e-12)


# --- distributional oracles ------------------------------------------------

def test_point_box_statistic_follows_scaled_f_law():
    # k=2, m=1, fixed covariate point: nu * T is F(1, nu) distributed.
    fit = univariate_fit()
    nu = fit.nu
    sample = simulate_pivot(fit, ComparisonFamily.pairwise(2),
                            CovariateBox.point(3.0), 100_000, seed=21)
    stat = scipy.stats.kstest(sample.values * nu, scipy.stats.f(1, nu).cdf)
    assert stat.pvalue > 0.01


def test_point_constant_matches_f_identity(two_group_fit):
    fit = two_group_fit
    sample = simulate_pivot(fit, ComparisonFamily.pairwise(2),
                            CovariateBox.point(4.0), 40_000, seed=22)
    res = critical_constant(sample, 0.05)
    exact = pointwise_constant(fit.m, fit.nu, 0.05)
    lo, hi = res.order_stat_interval
    assert lo <= exact <= hi


def test_whole_space_m1_reduces_to_scaled_f_quantile():
    fit = univariate_fit()
    sample = simulate_pivot(fit, ComparisonFamily.pairwise(2),
                            CovariateBox.whole_space(1), 100_000, seed=23)
    res = critical_constant(sample, 0.05)
    exact = (fit.p + 1) / fit.nu * f_quantile(fit.p + 1, fit.nu, 0.95)
    lo, hi = res.order_stat_interval
    assert lo <= exact <= hi


# --- monotonicity ----------------------------------------------------------

def test_region_monotonicity_is_elementwise(two_group_fit):
    fit = two_group_fit
    fam = ComparisonFamily.pairwise(2)
    r, seed = 4000, 30
    point = simulate_pivot(fit, fam, CovariateBox.point(3.0), r, seed)
    interval = simulate_pivot(fit, fam, CovariateBox.interval(0.0, 10.0), r, seed)
    whole = simulate_pivot(fit, fam, CovariateBox.whole_space(1), r, seed)
    # Shared draw keys make the orderings hold replicate by replicate,
    # and sorting preserves elementwise dominance.
    assert np.all(point.values <= interval.values + 1e-12)
    assert np.all(interval.values <= whole.values + 1e-12)
    cs = [critical_constant(s, 0.05).c_hat for s in (point, interval, whole)]
    assert cs[0] < cs[1] < cs[2]


def test_box_mode_sits_between_point_and_whole_space():
    rng = np.random.default_rng(41)
    coef = np.array([[1.0, 0.0], [0.5, 1.0], [-0.2, 0.3]])
    data = make_dataset(rng, (30, 34), (coef, coef), x_range=(0.0, 5.0))
    fit = fit_models(data)
    fam = ComparisonFamily.pairwise(2)
    r, seed = 32, 31
    point = simulate_pivot(fit, fam, CovariateBox.point(2.0, 2.0), r, seed)
    box = simulate_pivot(fit, fam,
                         CovariateBox(((0.0, 5.0), (0.0, 5.0))), r, seed)
    whole = simulate_pivot(fit, fam, CovariateBox.whole_space(2), r, seed)
    assert np.all(point.values <= box.values + 1e-10)
    assert np.all(box.values <= whole.values + 1e-10)


def test_family_monotonicity_same_seed(three_group_fit):
    fit = three_group_fit
    box = CovariateBox.interval(0.0, 10.0)
    r, seed = 4000, 32
    sub = simulate_pivot(fit, ComparisonFamily.vs_control(3, 1), box, r, seed)
    sup = simulate_pivot(fit, ComparisonFamily.pairwise(3), box, r, seed)
    assert np.all(sub.values <= sup.values + 1e-12)
    c_sub = critical_constant(sub, 0.05).c_hat
    c_sup = critical_constant(sup, 0.05).c_hat
    assert c_sub <= c_sup


def test_pivotality_across_generating_parameters():
    # Same designs, different true coefficients and error scale: the
    # simulated law may only shift by Monte Carlo noise.
    rng = np.random.default_rng(50)
    coef = np.array([[1.0], [0.5]])
    x1 = rng.uniform(0, 10, size=18)
    x2 = rng.uniform(0, 10, size=22)

    def build(c, noise, data_seed):
        from sctubes.model_core import GroupData, GroupedDataset
        local = np.random.default_rng(data_seed)
        groups = []
        for label, x in (("A", x1), ("B", x2)):
            design = np.column_stack([np.ones(len(x)), x])
            y = design @ c + noise * local.standard_normal((len(x), 1))
            groups.append(GroupData(label=label, design=design, response=y))
        return fit_models(GroupedDataset(groups=tuple(groups)))

    fit_a = build(coef, 1.0, 101)
    fit_b = build(coef * 40.0 - 3.0, 7.0, 202)
    assert design_digest(fit_a) == design_digest(fit_b)
    fam = ComparisonFamily.pairwise(2)
    box = CovariateBox.interval(0.0, 10.0)
    ca = critical_constant(simulate_pivot(fit_a, fam, box, 10_000, seed=11), 0.05)
    cb = critical_constant(simulate_pivot(fit_b, fam, box, 10_000, seed=22), 0.05)
    width = (ca.order_stat_interval[1] - ca.order_stat_interval[0]
             + cb.order_stat_interval[1] - cb.order_stat_interval[0])
    assert abs(ca.c_hat - cb.c_hat) <= 2.0 * width


# --- observed statistics ---------------------------------------------------

def test_equal_coefficients_give_zero_statistic():
    rng = np.random.default_rng(60)
    from sctubes.model_core import GroupData, GroupedDataset
    n = 15
    x = rng.uniform(0, 10, size=n)
    design = np.column_stack([np.ones(n), x])
    y = design @ np.array([[1.0], [2.0]]) + rng.standard_normal((n, 1))
    data = GroupedDataset(groups=(
        GroupData(label="A", design=design, response=y),
        GroupData(label="B", design=design, response=y.copy()),
    ))
    fit = fit_models(data)
    for box in (CovariateBox.whole_space(1), CovariateBox.interval(0.0, 10.0),
                CovariateBox.point(2.0)):
        t, _ = observed_statistic(fit, (1, 2), box)
        assert t == 0.0


def test_point_box_statistic_is_direct_evaluation(two_group_fit):
    fit = two_group_fit
    x0 = 3.7
    t, arg = observed_statistic(fit, (1, 2), CovariateBox.point(x0))
    e = np.array([1.0, x0])
    db = fit.coef_difference(1, 2)
    num = e @ db @ np.linalg.solve(fit.pooled_scatter, db.T @ e)
    den = e @ fit.delta(1, 2) @ e
    assert t == pytest.approx(num / den, rel=1e-12)
    assert arg[0] == x0


def test_planted_offset_grows_the_statistic():
    stats = []
    for delta in (0.5, 1.0, 2.0, 4.0, 8.0):
        fit = univariate_fit(seed=7, offset=delta)
        t, _ = observed_statistic(fit, (1, 2), CovariateBox.interval(0.0, 10.0))
        stats.append(t)
    assert all(a < b for a, b in zip(stats, stats[1:]))
    assert stats[-1] > 20 * stats[0]


def test_degenerate_scatter_is_refused():
    rng = np.random.default_rng(61)
    coef = np.array([[1.0], [2.0]])
    data = make_dataset(rng, (8, 9), (coef, coef), noise=0.0)
    fit = fit_models(data)
    with pytest.raises(DegenerateScatter):
        observed_statistic(fit, (1, 2), CovariateBox.whole_space(1))
    with pytest.raises(DegenerateScatter):
        simulate_pivot(fit, ComparisonFamily.pairwise(2),
                       CovariateBox.whole_space(1), 100, seed=1)


# --- p-values and duality --------------------------------------------------

def test_p_value_extremes():
    from sctubes.model_core import GroupData, GroupedDataset

    def two_groups(shift):
        local = np.random.default_rng(63)
        n = 14
        x = local.uniform(0, 10, size=n)
        design = np.column_stack([np.ones(n), x])
        y = design @ np.array([[1.0], [2.0]]) + local.standard_normal((n, 1))
        groups = (GroupData(label="A", design=design, response=y),
                  GroupData(label="B", design=design, response=y + shift))
        return fit_models(GroupedDataset(groups=groups))

    identical = two_groups(0.0)  # both groups hold the very same data
    separated = two_groups(1e6)
    fam = ComparisonFamily.pairwise(2)
    box = CovariateBox.interval(0.0, 10.0)
    sample = simulate_pivot(identical, fam, box, 2000, seed=64)

    p_same = adjusted_p_values(identical, fam, box, sample)[(1, 2)]
    assert p_same == 1.0  # statistic is exactly zero, every replicate exceeds it
    p_far = adjusted_p_values(separated, fam, box, sample)[(1, 2)]
    assert p_far == 0.0


def test_rejection_duality_is_exact():
    fam = ComparisonFamily.pairwise(2)
    box = CovariateBox.interval(0.0, 10.0)
    alpha = 0.1
    rng = np.random.default_rng(65)
    for trial in range(30):
        fit = univariate_fit(seed=300 + trial,
                             offset=float(rng.uniform(0.0, 0.8)))
        sample = simulate_pivot(fit, fam, box, 2000, seed=trial)
        c_hat = critical_constant(sample, alpha).c_hat
        pvals = adjusted_p_values(fit, fam, box, sample)
        for pair in fam.pairs:
            t, _ = observed_statistic(fit, pair, box)
            assert (pvals[pair] <= alpha) == (t >= c_hat)


def test_meta_mismatch_detection(two_group_fit):
    fit = two_group_fit
    fam = ComparisonFamily.pairwise(2)
    box = CovariateBox.interval(0.0, 10.0)
    sample = simulate_pivot(fit, fam, box, 200, seed=70)
    with pytest.raises(MetaMismatch):
        adjusted_p_values(fit, fam, CovariateBox.interval(0.0, 9.0), sample)
    with pytest.raises(MetaMismatch):
        adjusted_p_values(fit, ComparisonFamily.custom([(2, 1)]), box, sample)
    other = univariate_fit()
    with pytest.raises(MetaMismatch):
        adjusted_p_values(other, fam, box, sample)


# --- calibration experiments -----------------------------------------------

def test_null_rejection_rate_matches_alpha():
    fam = ComparisonFamily.pairwise(2)
    box = CovariateBox.whole_space(1)
    rejects = 0
    trials = 1000
    for trial in range(trials):
        fit = univariate_fit(seed=1000 + trial, sizes=(12, 13))
        sample = simulate_pivot(fit, fam, box, 4000, seed=trial)
        c_hat = critical_constant(sample, 0.05).c_hat
        t, _ = observed_statistic(fit, (1, 2), box)
        rejects += t >= c_hat
    rate = rejects / trials
    assert 0.03 <= rate <= 0.07


def test_simultaneous_nulls_rarely_reject_anywhere():
    fam = ComparisonFamily.pairwise(3)
    box = CovariateBox.whole_space(1)
    coef = np.array([[1.0], [0.5]])
    all_clear = 0
    trials = 1000
    for trial in range(trials):
        rng = np.random.default_rng(5000 + trial)
        data = make_dataset(rng, (11, 12, 13), (coef, coef, coef))
        fit = fit_models(data)
        sample = simulate_pivot(fit, fam, box, 2000, seed=trial)
        c_hat = critical_constant(sample, 0.05).c_hat
        worst = max(observed_statistic(fit, pair, box)[0] for pair in fam.pairs)
        all_clear += worst < c_hat
    assert all_clear / trials >= 0.93


def test_compare_report_is_complete(three_group_fit):
    fit = three_group_fit
    fam = ComparisonFamily.vs_control(3, 1)
    box = CovariateBox.interval(0.0, 10.0)
    report = compare(fit, fam, box, alpha=0.05, r=2000, seed=80)
    assert report.labels == ("A", "B", "C")
    assert report.nu == fit.nu
    assert len(report.pairs) == 2
    for pc in report.pairs:
        assert pc.pair in fam.pairs
        assert pc.statistic >= 0.0
        assert 0.0 <= pc.p_value <= 1.0
        assert pc.reject == (pc.statistic >= report.critical.c_hat)
        assert pc.significance_regions is not None
        assert len(pc.significance_regions) == fit.m
    lo, hi = report.critical.order_stat_interval
    assert lo <= report.critical.c_hat <= hi
