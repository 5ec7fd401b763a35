import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bicovlab.infotools import (
    EmpiricalDistribution, approx_abs_continuity, block_codes, block_entropy_rate, efficient_cover, entropy,
    greedy_support_cover, hamming_space, join_labels, kl_divergence, label_entropy, mi_bias_bound,
    mutual_information, mutual_information_kl, saturation_coverage, spatial_entropy, trim_locally_thick,
    typical_set, uniform_integrability_bound,
)
from bicovlab.procgen import build_markov_system, iid_system, sample_paths
from oracles import entropy_naive, mutual_information_naive

labels = st.lists(st.integers(0, 3), min_size=2, max_size=60)


@st.composite
def label_triples(draw):
    n = draw(st.integers(2, 60))
    lab = st.lists(st.integers(0, 3), min_size=n, max_size=n)
    return np.array(draw(lab)), np.array(draw(lab)), np.array(draw(lab))


@st.composite
def prob_vectors(draw, k=None):
    k = k or draw(st.integers(2, 6))
    raw = draw(st.lists(st.floats(0.0, 1.0), min_size=k, max_size=k))
    v = np.array(raw) + 1e-3
    return v / v.sum()


# --- entropy and divergence --------------------------------------------

def test_entropy_examples():
    assert entropy([1.0, 0.0]) == 0.0
    assert entropy(np.ones(5) / 5) == pytest.approx(math.log(5))
    assert round(entropy([0.25, 0.75]), 4) == 0.5623


def test_kl_examples():
    assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert kl_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf
    assert round(kl_divergence([0.5, 0.5], [0.25, 0.75]), 4) == 0.1438


def test_empirical_distribution():
    d = EmpiricalDistribution.from_samples(["a", "b", "a", "a"])
    assert d.support_size == 2
    assert entropy(d) == pytest.approx(entropy_naive([0.75, 0.25]))


@settings(max_examples=100, deadline=None)
@given(prob_vectors())
def test_entropy_matches_naive(p):
    assert entropy(p) == pytest.approx(entropy_naive(p))


# --- mutual information -------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(label_triples())
def test_mi_identities(t):
    p, q, _ = t
    mi = mutual_information(p, q)
    assert mi == pytest.approx(mutual_information_naive(p.tolist(), q.tolist()), abs=1e-10)
    assert mi == pytest.approx(mutual_information(q, p), abs=1e-12)
    assert mi == pytest.approx(label_entropy(p) + label_entropy(q) - label_entropy(join_labels(p, q)), abs=1e-10)
    assert mutual_information(p, p) == pytest.approx(label_entropy(p), abs=1e-12)
    assert mi == pytest.approx(mutual_information_kl(p, q), abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(label_triples())
def test_chain_rule(t):
    p1, p2, q = t
    lhs = mutual_information(join_labels(p1, p2), q)
    rhs = mutual_information(p1, q) + mutual_information(p2, q, p1)
    assert lhs == pytest.approx(rhs, abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(label_triples(), st.lists(st.booleans(), min_size=60, max_size=60))
def test_conditioning_on_subset(t, amask):
    p, q, r = t
    A = np.array(amask[: len(p)])
    if not A.any():
        return
    w = np.ones(len(p)) / len(p)
    muA = A.mean()
    inner = mutual_information(p[A], q[A], r[A])
    assert muA * inner <= math.log(2) + mutual_information(p, q, r, w) + 1e-10


def test_independent_mi_within_bias():
    rng = np.random.default_rng(0)
    p, q = rng.integers(0, 4, 50_000), rng.integers(0, 3, 50_000)
    assert mutual_information(p, q) <= 3 * mi_bias_bound(p, q)


def test_additivity_over_products():
    rng = np.random.default_rng(1)
    n = 100_000
    p1 = rng.integers(0, 3, n)
    q1 = np.where(rng.random(n) < 0.7, p1, rng.integers(0, 3, n))
    p2 = rng.integers(0, 2, n)
    q2 = np.where(rng.random(n) < 0.6, p2, rng.integers(0, 2, n))
    joint = mutual_information(join_labels(p1, p2), join_labels(q1, q2))
    parts = mutual_information(p1, q1) + mutual_information(p2, q2)
    assert abs(joint - parts) <= mi_bias_bound(join_labels(p1, p2), join_labels(q1, q2)) * 3


def test_block_codes():
    sym = np.array([[0, 1, 1], [1, 0, 0]])
    # first symbol is the least significant digit
    assert block_codes(sym, 2).tolist() == [6, 1]


# --- approximate absolute continuity -----------------------------------

def test_abs_continuity_trivial():
    p = np.array([0.2, 0.8])
    assert approx_abs_continuity(p, p, 1.0, 0.0) == (True, 0.0)


@settings(max_examples=100, deadline=None)
@given(prob_vectors(4), prob_vectors(4), prob_vectors(4), st.floats(0.5, 3), st.floats(0.5, 3))
def test_abs_continuity_transitive(p, q, r, M1, M2):
    _, e1 = approx_abs_continuity(p, q, M1, 0.0)
    _, e2 = approx_abs_continuity(q, r, M2, 0.0)
    ok, _ = approx_abs_continuity(p, r, M1 * M2, M1 * e2 + e1)
    assert ok


def _worst_set_bruteforce(p, q, M):
    n = len(p)
    best = 0.0
    for bits in range(1 << n):
        A = [i for i in range(n) if bits >> i & 1]
        best = max(best, sum(p[i] for i in A) - M * sum(q[i] for i in A))
    return best


@settings(max_examples=60, deadline=None)
@given(prob_vectors(5), prob_vectors(5), st.floats(0.2, 4))
def test_abs_continuity_worst_set(p, q, M):
    _, worst = approx_abs_continuity(p, q, M, 0.0)
    assert worst == pytest.approx(_worst_set_bruteforce(p, q, M), abs=1e-12)


def test_convolution_stability():
    rng = np.random.default_rng(2)
    for _ in range(50):
        p, q = rng.dirichlet(np.ones(8)), rng.dirichlet(np.ones(8))
        M = float(rng.uniform(0.5, 3))
        _, eps = approx_abs_continuity(p, q, M, 0.0)
        theta = rng.dirichlet(np.ones(3))
        ok, _ = approx_abs_continuity(np.convolve(theta, p), np.convolve(theta, q), M, eps)
        assert ok


def test_uniform_integrability_formula():
    M, eps = uniform_integrability_bound(0.0, 1.0)
    assert M == pytest.approx(math.e) and eps == pytest.approx(math.exp(-1))
    assert uniform_integrability_bound(1.0, 2.0)[1] < uniform_integrability_bound(1.0, 1.0)[1]
    with pytest.raises(ValueError):
        uniform_integrability_bound(1.0, 0.0)


def test_uniform_integrability_holds():
    rng = np.random.default_rng(3)
    for _ in range(200):
        p, q = rng.dirichlet(np.ones(6) * 0.5), rng.dirichlet(np.ones(6))
        D = kl_divergence(p, q)
        C = float(rng.uniform(0.5, 4))
        M, eps = uniform_integrability_bound(D, C)
        assert approx_abs_continuity(p, q, M, eps)[0]


# --- typical sets and block entropies ----------------------------------

def test_fair_coin_all_typical():
    x = sample_paths(iid_system([0.5, 0.5]), (0, 12), 5000, seed=4)
    ts = typical_set(x, 12, 0.01, math.log(2), prob=lambda u: 0.5**12)
    assert ts.mass == 1.0
    assert len(ts.names) <= math.exp((math.log(2) + 0.01) * 12)


def test_biased_coin_typical_mass_grows():
    rng = np.random.default_rng(5)
    h = entropy([0.75, 0.25])
    masses = []
    for N in (10, 20, 40, 80):
        x = (rng.random((20_000, N)) < 0.25).astype(int)
        pr = lambda u, N=N: 0.25 ** u.sum() * 0.75 ** (N - u.sum())
        ts = typical_set(x, N, 0.15, h, prob=pr)
        assert len(ts.names) <= math.exp((h + 0.15) * N)
        masses.append(ts.mass)
    assert masses == sorted(masses)


def test_block_entropy_iid_and_markov():
    x = sample_paths(iid_system([0.25] * 4), (0, 3), 200_000, seed=6)
    rows = block_entropy_rate(x, [1, 2, 3])
    assert all(r.rate == pytest.approx(math.log(4), rel=1e-3) for r in rows)
    s = build_markov_system([[0.9, 0.1], [0.2, 0.8]])
    x = sample_paths(s, (0, 8), 200_000, seed=7)
    rows = block_entropy_rate(x, range(1, 9))
    rates = [r.rate for r in rows]
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    assert rates[-1] > s.entropy_rate()
    assert rows[-1].increment == pytest.approx(s.entropy_rate(), abs=0.01)
    H = [r.block_entropy for r in rows]
    for a in range(1, 5):
        for b in range(1, 9 - a):
            assert H[a + b - 1] <= H[a - 1] + H[b - 1] + 1e-9


def test_undersampling_flag():
    x = sample_paths(iid_system([0.5, 0.5]), (0, 10), 1000, seed=8)
    assert block_entropy_rate(x, [10])[0].undersampled
    assert not block_entropy_rate(x, [3])[0].undersampled


def test_spatial_entropy_constant_and_sweep():
    const = hamming_space(np.zeros((50, 16), int))
    assert spatial_entropy([(16, const)], 0.1, 0.1)[0].value == 0.0
    x = sample_paths(iid_system([0.5, 0.5]), (0, 16), 400, seed=9)
    sp = hamming_space(x)
    vals = [spatial_entropy([(16, sp)], r, 0.1)[0].value for r in (0.05, 0.15, 0.3, 0.45)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


# --- covering lemmas ---------------------------------------------------

def test_support_cover_one_component():
    res = greedy_support_cover([(np.ones(4) / 4, np.ones(4, bool))], 0.5, 1.0, 0.1)
    assert res.selected == [0]


def _random_components(rng):
    k, n = int(rng.integers(2, 8)), int(rng.integers(3, 10))
    comps = []
    for _ in range(k):
        supp = rng.random(n) < 0.6
        supp[rng.integers(n)] = True
        v = np.where(supp, rng.random(n) + 0.1, 0.0)
        comps.append((v / v.sum(), supp))
    meas = np.array([c[0] for c in comps])
    mix = meas.mean(axis=0)
    M = float(np.max(np.divide(meas, mix, out=np.zeros_like(meas), where=mix > 0)))
    return comps, mix, M


def test_support_cover_bound_and_exhaustive():
    rng = np.random.default_rng(10)
    for _ in range(200):
        comps, mix, M = _random_components(rng)
        alpha, eps = float(rng.uniform(0.2, 0.7)), float(rng.uniform(0.01, 0.1))
        res = greedy_support_cover(comps, alpha, M, eps)
        assert res.covered_mass > alpha
        assert len(res.selected) <= M / (1 - alpha - eps)
        # the smallest exhaustive solution reaches the target too; greedy must cover at least that target
        best = min(size for size in range(1, len(comps) + 1)
                   for bits in range(1 << len(comps)) if bin(bits).count("1") == size
                   and mix[np.any([comps[z][1] for z in range(len(comps)) if bits >> z & 1], axis=0)].sum() > alpha)
        assert best <= len(res.selected)


def test_support_cover_validation():
    with pytest.raises(ValueError):
        greedy_support_cover([(np.array([1.0, 0.0]), np.array([False, True]))], 0.5, 2.0, 0.1)
    with pytest.raises(ValueError):
        greedy_support_cover([(np.array([1.0, 0.0]), np.array([True, True]))], 0.95, 2.0, 0.1)


def test_trim_examples():
    w = np.ones(6) / 6
    lab = np.array([0, 0, 1, 1, 2, 2])
    U = lab == 1
    assert np.array_equal(trim_locally_thick(w, U, lab, 0.9), U)
    U = np.array([1, 0, 1, 1, 0, 1], bool)
    assert np.array_equal(trim_locally_thick(w, U, np.zeros(6), 0.7), U)


def test_trim_guarantees():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(5, 40))
        w = rng.dirichlet(np.ones(n))
        U = rng.random(n) < 0.5
        U[0] = True
        lab = rng.integers(0, 6, n)
        alpha = float(rng.uniform(0.51, 0.99))
        V = trim_locally_thick(w, U, lab, alpha)
        mu_u = w[U].sum()
        assert np.all(U[V]) and w[V].sum() >= alpha * mu_u - 1e-12
        for c in np.unique(lab[V]):
            cell = lab == c
            assert w[U & cell].sum() / w[cell].sum() >= (1 - alpha) * mu_u - 1e-12


def test_efficient_cover_random_instances():
    rng = np.random.default_rng(12)
    for _ in range(100):
        n = int(rng.integers(10, 80))
        s = rng.integers(0, int(rng.integers(2, 8)), n)
        t = (s + rng.integers(0, 3, n)) % 7
        w = rng.dirichlet(np.ones(n))
        U = rng.random(n) < 0.85
        U[0] = True
        mu_u = w[U].sum()
        alpha = float(rng.uniform(0.3, 1.0)) * mu_u
        eta = float(rng.uniform(0.05, 0.9)) * alpha
        res = efficient_cover(w, s, t, U, alpha, eta)
        assert res.coverage == pytest.approx(saturation_coverage(w, s, t, U, res.points))
        assert res.coverage > mu_u - eta
        assert len(res.points) <= res.size_bound
        assert all(U[p] for p in res.points)


def test_efficient_cover_independent_and_correlated():
    rng = np.random.default_rng(13)
    n = 400
    s, t = rng.integers(0, 5, n), rng.integers(0, 5, n)
    U = np.ones(n, bool)
    res = efficient_cover(None, s, t, U, 0.9, 0.3)
    assert res.coverage > 1 - 0.3 and len(res.points) <= 3
    sizes = []
    for k in (2, 4, 8, 16):
        lab = rng.integers(0, k, n)
        res = efficient_cover(None, lab, lab, U, 0.9, 0.3)
        assert res.coverage > 1 - 0.3
        sizes.append(len(res.points))
    assert sizes == sorted(sizes) and sizes[-1] > sizes[0]


def test_relative_efficient_cover():
    rng = np.random.default_rng(14)
    for _ in range(50):
        n = 120
        r = rng.integers(0, 3, n)
        s = r * 4 + rng.integers(0, 4, n)
        t = r * 4 + (s + rng.integers(0, 2, n)) % 4
        w = rng.dirichlet(np.ones(n))
        U = rng.random(n) < 0.9
        mu_u = w[U].sum()
        res = efficient_cover(w, s, t, U, 0.8 * mu_u, 0.3 * mu_u, r_labels=r)
        assert res.coverage > mu_u - 0.3 * mu_u


def test_efficient_cover_rejects_bad_constants():
    with pytest.raises(ValueError):
        efficient_cover(None, [0, 1], [0, 1], np.ones(2, bool), 0.3, 0.5)
