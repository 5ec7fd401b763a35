import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from bicovlab.brownlab import (
    berry_esseen_gap, brownian_extremes, exact_berry_esseen_gap, exact_sum_law, fourth_moment_ratio,
    invariance_gap, load_psi_reference, max_tail_frequency, overlap_and_aspect, overlap_sample,
    psi_bm_from_sample, psi_bm_quantile, sample_brownian, sup_cdf_gap,
)
from bicovlab.procgen import build_markov_system, coboundary_cocycle, iid_system, simple_random_walk

SRW = simple_random_walk()


def test_sample_brownian_basics():
    p = sample_brownian(64, 20_000, seed=1)
    assert p.shape == (20_000, 65) and np.all(p[:, 0] == 0)
    assert p[:, -1].var() == pytest.approx(1.0, abs=4 * math.sqrt(2 / 20_000))
    assert np.array_equal(p, sample_brownian(64, 20_000, seed=1))


def test_expected_max_reflection():
    n, count = 2048, 10_000
    mx = brownian_extremes(n, count, seed=2)[:, 1]
    # grid maximum undershoots the continuous one by about zeta(1/2)/sqrt(2 pi n)
    corrected = mx.mean() + 0.5826 / math.sqrt(n)
    assert abs(corrected - math.sqrt(2 / math.pi)) < 4 * mx.std() / math.sqrt(count)


def test_extremes_match_paths():
    p = sample_brownian(32, 3000, seed=3)
    e = brownian_extremes(32, 3000, seed=3)
    assert np.allclose(e, np.stack([p.min(1), p.max(1), p[:, -1]], 1))


def test_overlap_trivial_cases():
    b = np.array([0.0, 1.0, -0.5, 0.2])
    assert overlap_and_aspect(b, b) == (1.5, 1.0)
    assert overlap_and_aspect(b, b + 5) == (0.0, 0.0)
    assert overlap_and_aspect(np.zeros(4), b)[1] == 0.0


def _grid_overlap(b1, b2, h=1e-3):
    grid = np.arange(-6, 6, h) + h / 2
    inside = lambda b: (grid >= b.min()) & (grid <= b.max())
    return (inside(b1) & inside(b2)).sum() * h


def test_overlap_matches_grid_oracle():
    p = sample_brownian(100, 40, seed=4)
    for i in range(0, 40, 2):
        ov, asp = overlap_and_aspect(p[i], p[i + 1])
        assert ov == pytest.approx(_grid_overlap(p[i], p[i + 1]), abs=2e-3)
        assert 0 <= asp <= 1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=12), st.lists(st.floats(-3, 3), min_size=2, max_size=12))
def test_overlap_properties(a, b):
    n = min(len(a), len(b))
    a, b = np.array(a[:n]), np.array(b[:n])
    ov, asp = overlap_and_aspect(a, b)
    assert ov >= 0 and 0 <= asp <= 1
    assert ov == pytest.approx(overlap_and_aspect(b, a)[0])
    if np.ptp(a) > 0 and np.ptp(b) > 0:
        if a.min() == b.min() and a.max() == b.max():
            assert asp == 1.0
        elif asp == 1.0:
            # equal only up to rounding of the overlap length
            scale = max(np.ptp(a), np.ptp(b))
            assert abs(a.min() - b.min()) <= 1e-12 * scale and abs(a.max() - b.max()) <= 1e-12 * scale


def test_psi_sentinel_and_monotone():
    assert psi_bm_quantile(1.0).value == math.inf
    ov = overlap_sample(128, 4000, seed=5)
    ests = psi_bm_from_sample(ov, [1.0, 1.25, 1.5, 2.0, 4.0, 8.0], n_boot=50)
    vals = [e.value for e in ests]
    assert vals[0] == math.inf
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert all(e.ci[0] <= e.value <= e.ci[1] for e in ests)
    with pytest.raises(ValueError):
        psi_bm_from_sample(ov, [0.5])


def test_psi_reference_table():
    ref = load_psi_reference()
    rows = {r["alpha"]: r for r in ref["table"]}
    assert ref["pairs"] == 1_000_000 and ref["grid"] == 2048
    assert rows[2.0]["ci_low"] <= rows[2.0]["psi"] <= rows[2.0]["ci_high"]
    psis = [rows[a]["psi"] for a in sorted(rows)]
    assert psis == sorted(psis, reverse=True)
    # a fresh smaller run lands near the stored median
    est = psi_bm_quantile(2.0, n=512, count=20_000, seed=6, n_boot=20)
    assert abs(est.value - rows[2.0]["psi"]) < 0.05


def test_exact_sum_law_srw():
    vals, probs = exact_sum_law(SRW.base, SRW.cocycle, 3)
    assert vals.tolist() == [-3, -1, 1, 3]
    assert np.allclose(probs, [1 / 8, 3 / 8, 3 / 8, 1 / 8])


def test_exact_sum_law_markov_matches_enumeration():
    s = build_markov_system([[0.9, 0.1], [0.2, 0.8]])
    coc = SRW.cocycle
    vals, probs = exact_sum_law(s, coc, 4)
    law = {}
    import itertools
    for y in itertools.product((0, 1), repeat=4):
        p = s.stationary[y[0]] * np.prod([s.transitions[a, b] for a, b in zip(y, y[1:])])
        v = sum(coc.table[a] for a in y)
        law[v] = law.get(v, 0) + p
    assert np.allclose(probs, [law[v] for v in vals])


def test_berry_esseen_n1_hand_value():
    # two atoms at +-1 with mass 1/2: worst gap at t -> 1 from below is Phi(1) - 1/2
    gap = exact_berry_esseen_gap(SRW.base, SRW.cocycle, 1)
    assert gap == pytest.approx(norm.cdf(1) - 0.5, abs=1e-12)
    assert abs(gap - 0.3413) < 0.0005


def test_sup_cdf_gap_nonnegative_and_exact():
    assert sup_cdf_gap(np.array([-1.0, 1.0]), np.array([0.5, 0.5])) == pytest.approx(norm.cdf(1) - 0.5)
    x = np.random.default_rng(7).normal(size=2000)
    assert sup_cdf_gap(x) >= 0
    from scipy.stats import kstest
    assert sup_cdf_gap(x) == pytest.approx(kstest(x, "norm").statistic)


def test_empirical_gap_tracks_exact():
    ex = exact_berry_esseen_gap(SRW.base, SRW.cocycle, 64)
    emp = berry_esseen_gap(SRW.base, SRW.cocycle, 64, 50_000, seed=8)
    assert abs(ex - emp) < 0.01


def test_invariance_and_degenerate_flag():
    rows = invariance_gap(SRW.base, SRW.cocycle, 256, 20_000, seed=9)
    assert {r.functional for r in rows} == {"endpoint", "sup", "range"}
    assert all(not r.degenerate and r.ks < 0.1 for r in rows)
    cob = coboundary_cocycle([0.0, 1.0])
    rows = invariance_gap(iid_system([0.5, 0.5]), cob, 256, 5000, seed=10)
    assert all(r.degenerate for r in rows)


def test_max_tail():
    ests = max_tail_frequency(SRW.base, SRW.cocycle, 256, [1, 2, 4, 50], 20_000, seed=11)
    freqs = [e.value for e in ests]
    assert freqs == sorted(freqs, reverse=True) and freqs[-1] == 0
    scaled = [f * b * b for f, b in zip(freqs[:3], (1, 2, 4))]
    assert max(scaled) < 3  # one constant covers the whole grid
    with pytest.raises(ValueError):
        max_tail_frequency(SRW.base, SRW.cocycle, 16, 0.0, 10, seed=0)


def test_fourth_moment():
    assert fourth_moment_ratio(SRW.base, SRW.cocycle, 1, 100, seed=12).value == 1.0
    big = fourth_moment_ratio(SRW.base, SRW.cocycle, 1024, 50_000, seed=13)
    assert big.ci[0] - 0.05 <= 3.0 <= big.ci[1] + 0.05
    ratios = [fourth_moment_ratio(SRW.base, SRW.cocycle, N, 20_000, seed=14).value for N in (16, 64, 256, 1024)]
    assert max(ratios) < 3.5
