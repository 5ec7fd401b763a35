import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bicovlab.cantorlab import (
    DiscreteCantorFamily, DiscreteCantorMatching, DiscreteCantorSet, block_family, check_gap_bounds,
    common_prefix, cover_with_families, covering_bound_formula, dumps_structure, enumerate_dcs_integer,
    extract_matchings, find_adapted_family, good_time_sets, is_meandering, is_meandering_bruteforce,
    is_smooth, is_spread, loads_structure, make_ladder, max_stabbing, meandering_frequency,
    structure_distance, verify_adapted_family, verify_cover,
)
from bicovlab.procgen import RwrsSample, SceneryModel, simple_random_walk, simulate_rwrs
from oracles import dcs_count_bruteforce, meandering_bruteforce

SRW = simple_random_walk()
SMALL = make_ladder(3, multipliers=(8, 8, 8))


def srw_sums(seed, n):
    return np.r_[0.0, np.cumsum(np.random.default_rng(seed).choice([-1.0, 1.0], n))]


# --- ladder -------------------------------------------------------------

def test_ladder_examples():
    lad = make_ladder(1)
    assert lad.L(1) == 262144 and lad.N(1) == 262144
    lad = make_ladder(2, multipliers=(4, 4))
    assert lad.N(2) == 16
    assert lad.kappa(1, 2) == pytest.approx(8 / 9)
    with pytest.raises(OverflowError):
        make_ladder(2)
    with pytest.raises(ValueError):
        make_ladder(0)


def test_kappa_monotonicity():
    lad = make_ladder(5, multipliers=(2,) * 5)
    for d in range(1, 6):
        ks = [lad.kappa(r, d) for r in range(0, d)]
        assert ks == sorted(ks) and all(0 < k < 1 for k in ks)
    for r in range(0, 4):
        ks = [lad.kappa(r, d) for d in range(r + 1, 6)]
        assert ks == sorted(ks, reverse=True)


# --- Cantor structures -------------------------------------------------

def test_common_prefix():
    assert common_prefix(0b101, 0b100, 3) == 2
    assert common_prefix(0b001, 0b101, 3) == 0
    assert common_prefix(5, 5, 3) == 3


def test_gap_bound_examples():
    assert check_gap_bounds(DiscreteCantorSet(np.array([0.0, 5.0]), (5,))) == (True, None)
    assert check_gap_bounds(DiscreteCantorSet(np.array([0.0, 5.0]), (4,))) == (False, (0, 1))


def _naive_gap_check(values, gaps):
    d = len(gaps)
    for a, b in itertools.combinations(range(2**d), 2):
        ba = [(a >> (d - 1 - k)) & 1 for k in range(d)]
        bb = [(b >> (d - 1 - k)) & 1 for k in range(d)]
        i = next(q for q in range(d) if ba[q] != bb[q])
        if abs(values[a] - values[b]) > gaps[i]:
            return False
    return True


def test_gap_check_matches_naive():
    rng = np.random.default_rng(0)
    for _ in range(300):
        d = int(rng.integers(1, 4))
        gaps = tuple(sorted(rng.uniform(0.5, 5, d), reverse=True))
        v = rng.uniform(0, 4, 2**d)
        assert check_gap_bounds(DiscreteCantorSet(v, gaps))[0] == _naive_gap_check(v, gaps)


def test_family_gap_uses_diameter():
    fam = DiscreteCantorFamily(np.array([[0, 1], [3, 4]]), (4,))
    assert check_gap_bounds(fam)[0] and fam.pairwise_disjoint()
    assert not check_gap_bounds(DiscreteCantorFamily(np.array([[0, 1], [3, 4]]), (3.5,)))[0]
    assert not DiscreteCantorFamily(np.array([[0, 3], [3, 4]]), (4,)).pairwise_disjoint()


def test_matching_requires_matching_shapes():
    fam = DiscreteCantorFamily(np.array([[0, 1], [3, 4]]), (4,))
    with pytest.raises(ValueError):
        DiscreteCantorMatching(fam, DiscreteCantorSet(np.zeros(2), (5,)))


def test_serialization_roundtrip():
    fam = DiscreteCantorFamily(np.array([[0, 1], [3, 4], [6, 7], [9, 9.5]]), (10, 4), {"seed": 1})
    m = DiscreteCantorMatching(fam, DiscreteCantorSet(np.array([0, 1, 2, 3.0]), (10, 4)))
    for s in (fam, m, fam.__class__(fam.intervals, fam.gaps)):
        back = loads_structure(dumps_structure(s))
        assert type(back) is type(s) and structure_distance(back, s) == 0


def test_structure_distance_shift():
    v = np.array([0.0, 1.0, 4.0, 5.0])
    a = DiscreteCantorSet(v, (6, 2))
    assert structure_distance(a, a) == 0
    assert structure_distance(a, DiscreteCantorSet(v + 2.5, (6, 2))) == 2.5
    with pytest.raises(ValueError):
        structure_distance(a, DiscreteCantorSet(np.zeros(2), (1,)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["set", "family", "matching"]))
def test_structure_triangle_inequality(seed, kind):
    rng = np.random.default_rng(seed)

    def make():
        if kind == "set":
            return DiscreteCantorSet(rng.normal(size=4), (3, 1))
        lo = rng.normal(size=4)
        fam = DiscreteCantorFamily(np.stack([lo, lo + rng.random(4)], 1), (3, 1))
        if kind == "family":
            return fam
        return DiscreteCantorMatching(fam, DiscreteCantorSet(rng.normal(size=4), (3, 1)))

    a, b, c = make(), make(), make()
    assert structure_distance(a, c) <= structure_distance(a, b) + structure_distance(b, c) + 1e-12
    assert structure_distance(a, b) == structure_distance(b, a)


# --- counting -----------------------------------------------------------

def test_bound_formula_examples():
    assert covering_bound_formula("set", 100, [20], 2) == 2000
    assert covering_bound_formula("family", 100, [20], 2) == 4e6
    assert covering_bound_formula("matching", 100, [20], 2) == 8e9
    with pytest.raises(ValueError):
        covering_bound_formula("set", 100, [20], 5)
    assert covering_bound_formula("set", 12, [6, 2], 1, enforce_window=False) == 24 * 12 * 16


def test_enumeration_examples():
    assert enumerate_dcs_integer((0, 3), [1]) == 10
    assert enumerate_dcs_integer((0, 6), [0]) == 7
    assert len(enumerate_dcs_integer((0, 2), [1], return_list=True)) == 7
    with pytest.raises(ValueError):
        enumerate_dcs_integer((0, 200), [5, 2, 1])


@pytest.mark.parametrize("L,D", [(3, [1]), (5, [2]), (4, [2, 1]), (5, [3, 1]), (3, [3, 0]), (6, [2, 2])])
def test_enumeration_matches_bruteforce(L, D):
    assert enumerate_dcs_integer((0, L), D) == dcs_count_bruteforce(L, D)


def test_enumeration_under_bound_at_delta_two():
    # the normalization used in the counting argument: delta = 2 with the window relaxed
    for L in (4, 8, 12):
        for D in ([2], [4], [8], [4, 2], [8, 2]):
            if max(D) > L:
                continue
            c = enumerate_dcs_integer((0, L), D)
            assert c <= covering_bound_formula("set", L, D, 1.0, enforce_window=False)


# --- meandering --------------------------------------------------------

def test_max_stabbing():
    assert max_stabbing(np.array([[0, 1], [1, 2], [2, 3]])) == 2
    assert max_stabbing(np.array([[0, 1], [1.5, 2]])) == 1
    assert max_stabbing(np.zeros((0, 2))) == 0


def test_meandering_trivial_cases():
    z = np.zeros(65)
    assert is_meandering(z, 0, 8, 8, 1.5, 1.0)
    assert not is_meandering(z, 0, 8, 8, 0.5, 1.0)


def test_meandering_matches_bruteforce():
    rng = np.random.default_rng(1)
    for _ in range(300):
        L, M = int(rng.integers(2, 9)), int(rng.integers(1, 6))
        sums = srw_sums(int(rng.integers(1 << 30)), L * M)
        alpha, ell = float(rng.uniform(0.1, 1.0)), float(rng.choice([1.0, 1.5, 2.0]))
        blocks = [sums[i * M : (i + 1) * M].tolist() for i in range(L)]
        expect = meandering_bruteforce(blocks, alpha, ell)
        assert is_meandering(sums, 0, L, M, alpha, ell) == expect
        assert is_meandering_bruteforce(sums, 0, L, M, alpha, ell) == expect


def test_meandering_frequency_shape():
    ests = meandering_frequency(SRW.base, SRW.cocycle, 16, 32, [0.25, 0.5], 400, seed=2)
    for e in ests:
        assert 0 <= e.ci[0] <= e.value <= e.ci[1] <= 1
    assert ests[0].value <= ests[1].value


# --- good-time sets -----------------------------------------------------

def test_good_time_sets_zero_cocycle():
    g = good_time_sets(np.zeros(513), SMALL, 1, 3, 1.0)
    assert not g.mndr_all.any()


def test_good_time_sets_are_cell_unions():
    g = good_time_sets(srw_sums(3, 512), SMALL, 1, 3, 1.0)
    for s, mask in g.mndr.items():
        assert np.all(mask.reshape(-1, SMALL.N(s)).all(1) | ~mask.reshape(-1, SMALL.N(s)).any(1))
    for mask in (g.spread, g.smooth):
        cells = mask.reshape(-1, SMALL.N(1))
        assert np.all(cells.all(1) | ~cells.any(1))


def test_good_time_mass_grows_with_r():
    fracs = {r: [] for r in (1, 2, 3)}
    for seed in range(30):
        sums = srw_sums(100 + seed, 512)
        for r in (1, 2, 3):
            fracs[r].append(good_time_sets(sums, SMALL, r, 3, 1.0).fraction())
    means = [np.mean(fracs[r]) for r in (1, 2, 3)]
    assert means[0] <= means[1] <= means[2] and means[0] < means[2]


def test_spread_and_smooth():
    line = np.arange(64.0)
    assert not is_spread(line, 1.0)  # starts at the edge of its range
    assert is_spread(np.r_[10.0, np.arange(20.0)], 1.0)
    assert is_smooth(np.arange(-20.0, 21.0), 1.0, 2.0, 0.05)
    assert not is_smooth(np.r_[np.zeros(100), np.arange(1.0, 41.0)], 1.0, 2.0, 0.05)


# --- adapted families ---------------------------------------------------

def _independent_family_check(blocks, sums, ladder, r, d, ell):
    Nr = ladder.N(r)
    depth = d - r
    for w1, w2 in itertools.combinations(range(2**depth), 2):
        i = depth - (w1 ^ w2).bit_length()  # shared leading coordinates
        span = ladder.N(d - i)
        a, b = blocks[w1] * Nr, blocks[w2] * Nr
        if a // span != b // span:
            return False
        if i < depth and a // ladder.N(d - i - 1) == b // ladder.N(d - i - 1):
            return False
        u, v = sums[a : a + Nr], sums[b : b + Nr]
        if np.min(np.abs(u[:, None] - v[None, :])) <= 2 * ell:
            return False
    return True


def test_base_clause_pair():
    lad = make_ladder(2, multipliers=(4, 2))
    sums = np.r_[np.zeros(4), 10 + np.zeros(4), 0.0]
    res = find_adapted_family([0, 1], sums, lad, 1, 2, 1.0)
    assert res.success and res.blocks == [0, 1]


def test_zero_cocycle_fails_at_top():
    res = find_adapted_family(range(64), np.zeros(513), SMALL, 1, 3, 1.0)
    assert not res.success and res.failed_scale == 3


def test_found_families_verify():
    found = 0
    for seed in range(60):
        sums = srw_sums(seed, 512)
        res = find_adapted_family(range(64), sums, SMALL, 1, 3, 1.0)
        if res.success:
            found += 1
            assert verify_adapted_family(res.blocks, sums, SMALL, 1, 3, 1.0)[0]
            assert _independent_family_check(res.blocks, sums, SMALL, 1, 3, 1.0)
            assert check_gap_bounds(res.family)[0]
    assert found > 0


def test_verifier_rejects_broken_family():
    sums = srw_sums(5, 512)
    for seed in range(60):
        sums = srw_sums(seed, 512)
        res = find_adapted_family(range(64), sums, SMALL, 1, 3, 1.0)
        if res.success:
            break
    blocks = list(res.blocks)
    blocks[0], blocks[-1] = blocks[-1], blocks[0]
    assert not verify_adapted_family(blocks, sums, SMALL, 1, 3, 1.0)[0]
    assert not verify_adapted_family(res.blocks[:-1], sums, SMALL, 1, 3, 1.0)[0]


def test_block_family_gaps():
    fam = block_family([0, 9, 16, 25], make_ladder(3, multipliers=(4, 4, 4)), 1, 3)
    assert fam.gaps == (64.0, 16.0)
    assert fam.intervals[1].tolist() == [36.0, 39.0]


# --- covers ------------------------------------------------------------

def test_single_family_cover():
    lad = make_ladder(2, multipliers=(4, 2))
    sums = np.r_[np.zeros(4), 10 + np.zeros(4), 0.0]
    res = cover_with_families(sums, lad, 1, 2, 1.0, 0.95, good_blocks=[0, 1])
    assert res.success and len(res.families) == 1


def test_cover_success_implies_verified():
    seen = 0
    for seed in range(40):
        sums = srw_sums(200 + seed, 512)
        res = cover_with_families(sums, SMALL, 1, 3, 1.0, 0.3, filters=("smooth",))
        if not res.success:
            continue
        seen += 1
        props = verify_cover(res.families, sums, SMALL, 1, 3, 1.0, 0.3, 16 * 4 * 8 / 0.3)
        assert props == res.properties
        assert props["separated"] and props["adapted"] and props["residual_ok"] and props["efficiency_ok"]
        assert res.residual <= 0.3 * res.range_length + 1e-12
    assert seen > 0


def test_cover_filters_validated():
    with pytest.raises(ValueError):
        cover_with_families(srw_sums(0, 512), SMALL, 1, 3, 1.0, 0.3, filters=("bogus",))


# --- matchings ---------------------------------------------------------

def _shifted_copy(a, k):
    """Second sample whose walk goes straight up for k steps and then copies ``a``'s steps."""
    path = a.path.copy()
    off = -a.path_start
    path[off : off + k] = 1
    sums = a.sums.copy()
    sums[a.N :] = np.r_[0.0, np.cumsum(np.where(path[off : off + a.N] == 1, 1.0, -1.0))]
    c = int(sums[a.N + k] - a.sums[a.N + k])
    # scenery read from b at site z + c equals a's colour at z
    return RwrsSample(path, a.path_start, sums, a.N, a.scenery, a.scenery_start + c, a.cell_width), c


def test_identity_matchings_zero():
    proc = simple_random_walk(SceneryModel.uniform(2))
    for seed in range(5):
        s = simulate_rwrs(proc, 512, 1, seed)[0]
        res = extract_matchings(s, s, SMALL, 1, 3, 1.0, 0.3, 0.1, filters=("smooth",))
        assert res.report["P_fraction"] == 1.0 and res.report["distance"] == 0
        for m in res.matchings:
            assert np.all(m.shifts.values == 0)
        assert res.report["P1"] and res.report["P3"]


def test_shifted_walk_oracle():
    proc = simple_random_walk(SceneryModel.uniform(3))
    checked = 0
    for seed in range(8):
        a = simulate_rwrs(proc, 512, 1, seed)[0]
        b, c = _shifted_copy(a, 6)
        if c == 0:
            continue
        res = extract_matchings(a, b, SMALL, 1, 3, 1.0, 0.3, 0.5, depth=2, filters=())
        for m in res.matchings:
            checked += 1
            assert np.all(m.shifts.values == c)
        assert res.report["P3"]
    assert checked > 0


def test_matching_success_implies_properties():
    proc = simple_random_walk(SceneryModel.uniform(2))
    for seed in range(10):
        s = simulate_rwrs(proc, 512, 1, 50 + seed)[0]
        res = extract_matchings(s, s, SMALL, 1, 3, 1.0, 0.3, 0.1, filters=("smooth",))
        if res.success:
            assert all(res.report[k] for k in ("P1", "P2", "P3", "gaps_ok"))
            assert all(check_gap_bounds(m)[0] for m in res.matchings)


def test_empty_agreement_fails():
    proc = simple_random_walk(SceneryModel.uniform(2))
    b = simulate_rwrs(proc, 64, 2, 9)
    lad = make_ladder(2, multipliers=(8, 8))
    res = extract_matchings(b[0], b[1], lad, 1, 2, 1.0, 0.3, 0.1, depth=8)
    assert not res.success
