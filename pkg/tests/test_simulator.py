import math

import numpy as np
import pytest
from scipy import stats

from screenopt import (FluorescenceModel, ScreenConfig, cell_moments, discovered,
                       estimate_pdisc, poisson_target_fraction, sample_w1, simulate_counts,
                       simulate_single_stage, simulate_two_stage, two_stage_moments,
                       wilson_interval)
from screenopt.simulator import replicate_rng

from oracles import literal_multinomial_counts

BASE = FluorescenceModel.normal(0.4, 0.0)
LOW_SHIFT = FluorescenceModel.normal(0.3, 0.0)
SAME = FluorescenceModel.normal(0.0, 0.0)


def test_discovered_strict_ties():
    assert not discovered([5, 7, 5, 1, 0], 2)  # tie with the 2nd largest fails
    assert discovered([6, 7, 5, 1, 0], 2)
    assert discovered(np.array([[6, 7, 5, 1], [0, 0, 0, 0]]), 2).tolist() == [True, False]


@pytest.mark.parametrize("model", ["multinomial", "poisson"])
def test_empty_selection(model):
    c = ScreenConfig(20, 1000, 3, model=model, lam=0.5 if model == "poisson" else None, L=3)
    res = simulate_single_stage(c, BASE, 1e6, seed=1)
    assert res.counts.sum() == 0 and not res.discovered and res.w1 == 0
    res = simulate_two_stage(c, BASE, 0.0, 1e6, seed=1)
    assert res.counts.sum() == 0 and not res.discovered
    assert estimate_pdisc(c, BASE, 1e6, replicates=50, seed=3).estimate == 0.0


def test_everyone_selected_is_uniform_multinomial():
    c = ScreenConfig(20, 10 ** 5, 3)
    x = simulate_single_stage(c, BASE, -1e6, seed=9).counts
    assert x.sum() == c.n
    assert stats.chisquare(x).pvalue > 0.001


def test_shortcut_matches_literal_per_cell():
    r, n, R = 5, 200, 5000
    c = ScreenConfig(r, n, 1)
    a = 0.3
    s1, s2 = BASE.g1.sf(a), BASE.g2.sf(a)
    fast, _ = simulate_counts(c, BASE, a, replicates=R, seed=4, workers=1)
    rng = np.random.default_rng(44)
    slow = np.array([literal_multinomial_counts(r, n, s1, s2, rng) for _ in range(R)])
    for i in (0, 1):
        ks = stats.ks_2samp(fast[:, i], slow[:, i])
        assert ks.pvalue > 0.001
    # TV on the exact integer support, which is small here
    hi = max(fast[:, 0].max(), slow[:, 0].max()) + 1
    tv = 0.5 * np.abs(np.bincount(fast[:, 0], minlength=hi) / R
                      - np.bincount(slow[:, 0], minlength=hi) / R).sum()
    assert tv < 0.05


def test_poisson_converges_to_multinomial():
    cm = ScreenConfig(20, 10 ** 5, 3)
    cp = cm.with_(model="poisson", lam=1e-4)
    xm, _ = simulate_counts(cm, BASE, 0.0, replicates=1000, seed=21)
    xp, _ = simulate_counts(cp, BASE, 0.0, replicates=1000, seed=22)
    assert stats.ks_2samp(xm[:, 0], xp[:, 0]).pvalue > 0.001


def test_two_stage_degenerate_matches_single():
    c = ScreenConfig(20, 10 ** 4, 3, L=1)
    xs, _ = simulate_counts(c, BASE, 0.5, replicates=2000, seed=31)
    xt, _ = simulate_counts(c, BASE, 0.5, -1e6, replicates=2000, seed=32)
    assert stats.ks_2samp(xs[:, 0], xt[:, 0]).pvalue > 0.001
    assert stats.ks_2samp(xs[:, 1], xt[:, 1]).pvalue > 0.001


def test_two_stage_mean_formula():
    c = ScreenConfig(200, 5000, 3, L=4)
    a, b = 0.55, 0.1
    x, _ = simulate_counts(c, LOW_SHIFT, a, b, replicates=10 ** 4, seed=5)
    expect = c.n * c.L * LOW_SHIFT.g1.sf(a) * LOW_SHIFT.g1.sf(b) / c.r
    se = x[:, 0].std(ddof=1) / math.sqrt(len(x))
    assert abs(x[:, 0].mean() - expect) <= 3 * se


@pytest.mark.parametrize("model,beta", [("multinomial", None), ("poisson", None),
                                        ("multinomial", 0.2)])
def test_moment_consistency(model, beta):
    c = ScreenConfig(50, 20000, 3, model=model, lam=0.6 if model == "poisson" else None, L=3)
    a = 0.4
    R = 10 ** 4
    x, _ = simulate_counts(c, BASE, a, beta, replicates=R, seed=77)
    m = cell_moments(c, BASE, a) if beta is None else two_stage_moments(c, BASE, a, beta)
    for col, mean, var in ((0, m.mean_target, m.var_target), (1, m.mean_other, m.var_other)):
        xs = x[:, col].astype(float)
        mse = math.sqrt(c.n * var / R)
        assert abs(xs.mean() - c.n * mean) <= 4 * mse
        vse = c.n * var * math.sqrt(2 / (R - 1))
        assert abs(xs.var(ddof=1) - c.n * var) <= 4 * vse


def test_poisson_two_stage_runs_and_w1():
    c = ScreenConfig(30, 5000, 3, model="poisson", lam=0.5, L=3)
    res = simulate_two_stage(c, BASE, 0.3, 0.3, seed=2)
    assert res.counts.min() >= 0 and res.w1 >= 0


def test_seed_determinism_and_worker_independence():
    c = ScreenConfig(40, 3000, 3, model="poisson", lam=0.4, L=2)
    a, _ = simulate_counts(c, BASE, 0.2, 0.1, replicates=300, seed=8, workers=1)
    b, _ = simulate_counts(c, BASE, 0.2, 0.1, replicates=300, seed=8, workers=8)
    assert np.array_equal(a, b)
    e1 = estimate_pdisc(c, BASE, 0.2, replicates=300, seed=8, workers=1)
    e2 = estimate_pdisc(c, BASE, 0.2, replicates=300, seed=8, workers=4)
    assert e1 == e2
    c2, _ = simulate_counts(c, BASE, 0.2, 0.1, replicates=300, seed=9, workers=1)
    assert not np.array_equal(a, c2)


def test_discovery_monotone_in_v():
    c = ScreenConfig(50, 20000, 1)
    x, _ = simulate_counts(c, BASE, 0.8, replicates=2000, seed=12)
    prev = discovered(x, 1)
    for v in range(2, 10):
        cur = discovered(x, v)
        assert np.all(cur[prev])
        prev = cur


def test_estimate_baseline_agrees_with_approx():
    from screenopt import pdisc_approx
    c = ScreenConfig(200, 40000, 3)
    est = estimate_pdisc(c, BASE, 0.8, replicates=10 ** 4, seed=2024)
    assert abs(est.estimate - pdisc_approx(c, BASE, 0.8)) <= 0.03
    assert est.ci_low <= est.estimate <= est.ci_high


def test_exchangeable_bound_with_ties():
    c = ScreenConfig(50, 10 ** 5, 3)
    est = estimate_pdisc(c, SAME, 0.0, replicates=10 ** 4, seed=6)
    assert est.estimate <= 3 / 50 + 3 * math.sqrt(0.06 * 0.94 / 10 ** 4)


def test_wilson_interval():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0.0 and 0.03 < hi < 0.04
    lo, hi = wilson_interval(50, 100)
    # closed form for the Wilson score interval
    z = stats.norm.isf(0.025)
    centre = (0.5 + z * z / 200) / (1 + z * z / 100)
    half = z / (1 + z * z / 100) * math.sqrt(0.25 / 100 + z * z / 40000)
    assert (lo, hi) == (pytest.approx(centre - half), pytest.approx(centre + half))


def test_sample_w1():
    c = ScreenConfig(200, 5000, 3)
    assert sample_w1(c, LOW_SHIFT, 1e6, seed=1) == 0
    rng = np.random.default_rng(10)
    draws = np.array([sample_w1(c, LOW_SHIFT, 0.5533471031357997, rng) for _ in range(10 ** 4)])
    assert abs(draws.mean() - 10.0) <= 3 * draws.std(ddof=1) / 100
    cp = ScreenConfig(200, 5000, 3, model="poisson", lam=0.5)
    draws = np.array([sample_w1(cp, LOW_SHIFT, 0.2, rng) for _ in range(10 ** 4)])
    expect = 5000 * poisson_target_fraction(0.5, 200) * LOW_SHIFT.g1.sf(0.2)
    assert abs(draws.mean() - expect) <= 3 * draws.std(ddof=1) / 100


def test_replicate_streams_distinct():
    a = replicate_rng(1, 0).random(4)
    b = replicate_rng(1, 1).random(4)
    c = replicate_rng(1, 0, (3,)).random(4)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
    assert np.array_equal(a, replicate_rng(1, 0).random(4))
