"""Brownian Monte Carlo and empirical limit theorems for cocycle sums.

Brownian paths are Gaussian random walks on the grid ``i/n`` of ``[0, 1]``.
Functionals needed at scale (running max/min, endpoint) are reduced chunk
by chunk so that ``10^5`` paths of length ``2048`` never sit in memory at
once.  Every random draw comes from a named, block-indexed stream, so
results are reproducible bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy import stats

from .infotools import Estimate
from .procgen import (CHUNK, FiniteRangeCocycle, MarkovSystem, _blocks, effective_variance,
                      iter_forward_sums, stream_rng)

DEFAULT_GRID = 2048
FUNCTIONALS = ("endpoint", "sup", "range")
# effective variance below this is reported as degenerate (coboundary-like)
DEGENERATE_VARIANCE = 0.01


def sample_brownian(n: int, count: int, seed: int, stream: str = "brownian") -> np.ndarray:
    """``count`` paths ``B(i/n)``, ``i = 0..n``, with ``B(0) = 0``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    out = np.empty((count, n + 1))
    for blk, lo, hi in _blocks(count):
        out[lo:hi] = _path_block(n, hi - lo, seed, stream, blk)
    return out


def _path_block(n: int, rows: int, seed: int, stream: str, blk: int) -> np.ndarray:
    inc = stream_rng(seed, stream, blk).standard_normal((rows, n)) / math.sqrt(n)
    path = np.zeros((rows, n + 1))
    np.cumsum(inc, axis=1, out=path[:, 1:])
    return path


def iter_brownian_extremes(n: int, count: int, seed: int, stream: str = "brownian"
                           ) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Blocks of ``(min, max, endpoint)`` for the paths of :func:`sample_brownian`."""
    for blk, lo, hi in _blocks(count):
        p = _path_block(n, hi - lo, seed, stream, blk)
        yield p.min(axis=1), p.max(axis=1), p[:, -1]


def brownian_extremes(n: int, count: int, seed: int, stream: str = "brownian") -> np.ndarray:
    """Array of shape ``(count, 3)`` with columns min, max, endpoint."""
    return np.concatenate([np.stack(b, axis=1) for b in iter_brownian_extremes(n, count, seed, stream)])


# ---------------------------------------------------------------------------
# range overlap
# ---------------------------------------------------------------------------

def overlap_and_aspect(B, B2) -> tuple[np.ndarray, np.ndarray]:
    """Length of the intersection of the two ranges and its aspect.

    Works on single paths or on batches (last axis is time).  The aspect
    is the overlap relative to the longer of the two ranges, and zero when
    either path is constant.
    """
    B, B2 = np.asarray(B, dtype=np.float64), np.asarray(B2, dtype=np.float64)
    if B.shape[-1] != B2.shape[-1]:
        raise ValueError("paths must share the time grid")
    return _overlap_from_extremes(B.min(axis=-1), B.max(axis=-1), B2.min(axis=-1), B2.max(axis=-1))


def _overlap_from_extremes(lo1, hi1, lo2, hi2):
    ov = np.maximum(np.minimum(hi1, hi2) - np.maximum(lo1, lo2), 0.0)
    r1, r2 = hi1 - lo1, hi2 - lo2
    with np.errstate(divide="ignore", invalid="ignore"):
        asp = np.where((r1 > 0) & (r2 > 0), np.minimum(ov / np.where(r1 > 0, r1, 1), ov / np.where(r2 > 0, r2, 1)), 0.0)
    if np.ndim(ov) == 0:
        return float(ov), float(asp)
    return ov, asp


def overlap_sample(n: int, count: int, seed: int) -> np.ndarray:
    """Range overlaps of ``count`` independent Brownian pairs on an ``n``-grid."""
    a = brownian_extremes(n, count, seed, "pair_a")
    b = brownian_extremes(n, count, seed, "pair_b")
    return _overlap_from_extremes(a[:, 0], a[:, 1], b[:, 0], b[:, 1])[0]


def _quantile(sorted_vals: np.ndarray, level: float) -> float:
    # inverted CDF: smallest x with F(x) >= level
    k = int(math.ceil(level * len(sorted_vals) - 1e-12)) - 1
    return float(sorted_vals[min(max(k, 0), len(sorted_vals) - 1)])


def psi_bm_from_sample(overlaps: np.ndarray, alphas: Sequence[float], n_boot: int = 200,
                       seed: int = 0, level: float = 0.95) -> list[Estimate]:
    """Empirical ``1/alpha`` quantiles of an overlap sample with bootstrap CIs.

    ``alpha = 1`` gives ``inf``: the overlap is almost surely finite but
    unbounded, so no finite value has probability one below it.  All
    quantiles come from the same sample, so they are monotone in ``alpha``.
    Ties are irrelevant in practice (the law is atomless away from grid
    effects); the inverted-CDF rule makes the estimator well defined anyway.
    """
    srt = np.sort(np.asarray(overlaps, dtype=np.float64))
    rng = stream_rng(seed, "psi_bootstrap")
    boots = np.sort(srt[rng.integers(0, srt.size, (n_boot, srt.size))], axis=1)
    out = []
    for a in alphas:
        if a < 1:
            raise ValueError("alpha must be at least 1")
        if a == 1:
            out.append(Estimate(f"psi_bm({a:g})", math.inf, (math.inf, math.inf), ("infinite",),
                                {"alpha": float(a)}))
            continue
        est = _quantile(srt, 1.0 / a)
        bq = np.array([_quantile(b, 1.0 / a) for b in boots])
        lo, hi = np.quantile(bq, [(1 - level) / 2, (1 + level) / 2])
        # percentile intervals of a quantile can miss the point estimate by a grid step
        lo, hi = min(lo, est), max(hi, est)
        out.append(Estimate(f"psi_bm({a:g})", est, (float(lo), float(hi)), (),
                            {"alpha": float(a), "count": int(srt.size)}))
    return out


def psi_bm_quantile(alpha: float | Sequence[float], n: int = DEFAULT_GRID, count: int = 100_000,
                    seed: int = 0, n_boot: int = 200) -> Estimate | list[Estimate]:
    """Monte Carlo ``psi_BM(alpha)``: ``1/alpha`` quantile of the range overlap."""
    scalar = np.ndim(alpha) == 0
    alphas = [float(alpha)] if scalar else [float(a) for a in alpha]
    if all(a == 1 for a in alphas):
        res = psi_bm_from_sample(np.zeros(1), alphas)
    else:
        res = psi_bm_from_sample(overlap_sample(n, count, seed), alphas, n_boot, seed)
    return res[0] if scalar else res


def load_psi_reference() -> dict:
    """Stored reference table of ``psi_BM`` with confidence intervals."""
    text = resources.files("bicovlab").joinpath("data/psi_bm_reference.json").read_text()
    return json.loads(text)


# ---------------------------------------------------------------------------
# limit theorems for cocycle sums
# ---------------------------------------------------------------------------

def _functionals(sums: np.ndarray, scale: float) -> dict[str, np.ndarray]:
    return {
        "endpoint": sums[:, -1] / scale,
        "sup": sums.max(axis=1) / scale,
        "range": (sums.max(axis=1) - sums.min(axis=1)) / scale,
    }


def walk_functionals(system: MarkovSystem, cocycle: FiniteRangeCocycle, N: int, samples: int,
                     seed: int, c: float = 1.0) -> dict[str, np.ndarray]:
    """Endpoint, sup and range of ``sigma_0..sigma_N`` scaled by ``c sqrt(N)``."""
    parts = [_functionals(b, c * math.sqrt(N)) for b in iter_forward_sums(system, cocycle, N, samples, seed)]
    return {k: np.concatenate([p[k] for p in parts]) for k in FUNCTIONALS}


def brownian_functionals(n: int, count: int, seed: int) -> dict[str, np.ndarray]:
    ext = brownian_extremes(n, count, seed, "reference")
    return {"endpoint": ext[:, 2], "sup": ext[:, 1], "range": ext[:, 1] - ext[:, 0]}


@dataclass(frozen=True)
class InvarianceRow:
    N: int
    functional: str
    ks: float
    pvalue: float
    c: float
    degenerate: bool


def invariance_gap(system: MarkovSystem, cocycle: FiniteRangeCocycle, N: int, samples: int,
                   seed: int = 0, functionals: Iterable[str] = FUNCTIONALS, c: float | None = None,
                   reference_count: int | None = None, variance_samples: int = 20_000
                   ) -> list[InvarianceRow]:
    """Two-sample KS distance between walk functionals and a Brownian reference.

    The walk is rescaled by ``c sqrt(N)``; ``c`` is the cocycle's stored
    effective standard deviation, or is estimated.  The reference is a
    Gaussian walk on the same ``N``-step grid so that discretization bias
    of the sup and range is shared by both sides; the endpoint is compared
    with the exact standard normal.  When ``c^2`` is below
    ``DEGENERATE_VARIANCE`` no rescaling is meaningful: rows carry
    ``degenerate=True`` and NaN distances.
    """
    functionals = tuple(functionals)
    for f in functionals:
        if f not in FUNCTIONALS:
            raise ValueError(f"unknown functional {f!r}")
    if c is None:
        if cocycle.effective_variance is not None:
            var = float(cocycle.effective_variance)
        else:
            var = effective_variance(system, cocycle, N, variance_samples, seed, n_boot=20)[0]
        c = math.sqrt(max(var, 0.0))
    if c * c < DEGENERATE_VARIANCE:
        return [InvarianceRow(N, f, math.nan, math.nan, c, True) for f in functionals]
    walk = walk_functionals(system, cocycle, N, samples, seed, c)
    ref = brownian_functionals(N, reference_count or 4 * samples, seed)
    rows = []
    for f in functionals:
        # the Gaussian walk endpoint is exactly standard normal on any grid
        res = stats.kstest(walk[f], "norm") if f == "endpoint" else stats.ks_2samp(walk[f], ref[f])
        rows.append(InvarianceRow(N, f, float(res.statistic), float(res.pvalue), c, False))
    return rows


def sup_cdf_gap(values: np.ndarray, probs: np.ndarray | None = None) -> float:
    """``sup_t |F(t) - Phi(t)|`` for a discrete law (empirical if ``probs`` is None).

    The supremum is attained at a jump of ``F``, from one side or the other,
    so it is enough to compare ``F(x)`` and ``F(x-)`` with ``Phi(x)`` at every atom.
    """
    values = np.asarray(values, dtype=np.float64)
    if probs is None:
        atoms, counts = np.unique(values, return_counts=True)
        p = counts / values.size
    else:
        order = np.argsort(values)
        atoms, p = values[order], np.asarray(probs, dtype=np.float64)[order]
    F = np.cumsum(p)
    F_left = F - p
    phi = stats.norm.cdf(atoms)
    return float(max(np.max(np.abs(F - phi)), np.max(np.abs(F_left - phi))))


def exact_sum_law(system: MarkovSystem, cocycle: FiniteRangeCocycle, N: int,
                  decimals: int = 9) -> tuple[np.ndarray, np.ndarray]:
    """Exact law of ``sigma_N`` by dynamic programming over (state, sum).

    The state is the last ``r - 1`` symbols (the current symbol for
    range-one cocycles).  Sums are merged after rounding to ``decimals``.
    Intended for small ``N``.
    """
    r, k = cocycle.range_, system.k
    P, pi = system.transitions, system.stationary
    # distribution over the first r-1 symbols (or the first symbol for r = 1)
    head = max(r - 1, 1)
    law: dict[tuple, dict[float, float]] = {}
    for idx in np.ndindex(*(k,) * head):
        pr = pi[idx[0]]
        for a, b in zip(idx[:-1], idx[1:]):
            pr *= P[a, b]
        if pr > 0:
            law[idx] = {0.0: float(pr)}
    for _ in range(N):
        new: dict[tuple, dict[float, float]] = {}
        for state, sums in law.items():
            if r == 1:
                step = cocycle.table[state[0]]
                for nxt in range(k):
                    if P[state[0], nxt] == 0:
                        continue
                    bucket = new.setdefault((nxt,), {})
                    for s, pr in sums.items():
                        key = round(s + step, decimals)
                        bucket[key] = bucket.get(key, 0.0) + pr * P[state[0], nxt]
            else:
                for nxt in range(k):
                    q = P[state[-1], nxt]
                    if q == 0:
                        continue
                    step = cocycle.table[state + (nxt,)]
                    ns = (state + (nxt,))[1:]
                    bucket = new.setdefault(ns, {})
                    for s, pr in sums.items():
                        key = round(s + step, decimals)
                        bucket[key] = bucket.get(key, 0.0) + pr * q
        law = new
    merged: dict[float, float] = {}
    for sums in law.values():
        for s, pr in sums.items():
            merged[s] = merged.get(s, 0.0) + pr
    vals = np.array(sorted(merged))
    return vals, np.array([merged[v] for v in vals])


def exact_berry_esseen_gap(system: MarkovSystem, cocycle: FiniteRangeCocycle, N: int,
                           c: float = 1.0) -> float:
    """Exact ``sup_t |P(sigma_N <= t c sqrt(N)) - Phi(t)|`` from :func:`exact_sum_law`."""
    vals, probs = exact_sum_law(system, cocycle, N)
    return sup_cdf_gap(vals / (c * math.sqrt(N)), probs)


def berry_esseen_gap(system: MarkovSystem, cocycle: FiniteRangeCocycle, N: int, samples: int,
                     seed: int = 0, c: float = 1.0) -> float:
    """Empirical ``sup_t |P(sigma_N <= t c sqrt(N)) - Phi(t)|``."""
    ends = np.concatenate([b[:, -1] for b in iter_forward_sums(system, cocycle, N, samples, seed)])
    return sup_cdf_gap(ends / (c * math.sqrt(N)))


def _wilson(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(mid - half, 0.0), min(mid + half, 1.0)


def max_tail_frequency(system: MarkovSystem, cocycle: FiniteRangeCocycle, N: int,
                       b: float | Sequence[float], samples: int, seed: int = 0
                       ) -> Estimate | list[Estimate]:
    """Frequency of ``max_{n<N} |sigma_n| >= b sqrt(N)`` with a Wilson interval.

    A sequence of ``b`` values is evaluated on one shared sample, so the
    frequencies are exactly nonincreasing in ``b``.
    """
    scalar = np.ndim(b) == 0
    bs = [float(b)] if scalar else [float(x) for x in b]
    if any(x <= 0 for x in bs):
        raise ValueError("b must be positive")
    mx = np.concatenate([np.abs(s[:, :N]).max(axis=1)
                         for s in iter_forward_sums(system, cocycle, N, samples, seed)])
    out = []
    for x in bs:
        k = int(np.count_nonzero(mx >= x * math.sqrt(N)))
        out.append(Estimate(f"max_tail(b={x:g})", k / samples, _wilson(k, samples), (),
                            {"b": x, "N": N}))
    return out[0] if scalar else out


def fourth_moment_ratio(system: MarkovSystem, cocycle: FiniteRangeCocycle, N: int, samples: int,
                        seed: int = 0) -> Estimate:
    """``E sigma_N^4 / N^2`` with a normal-approximation 95% interval."""
    ends = np.concatenate([b[:, -1] for b in iter_forward_sums(system, cocycle, N, samples, seed)])
    q = ends**4 / float(N) ** 2
    m = float(q.mean())
    se = float(q.std(ddof=1) / math.sqrt(q.size)) if q.size > 1 else 0.0
    return Estimate(f"fourth_moment(N={N})", m, (m - 1.96 * se, m + 1.96 * se), (), {"N": N})


def build_psi_reference(alphas: Sequence[float] = (1.25, 1.5, 2.0, 4.0, 8.0), n: int = DEFAULT_GRID,
                        count: int = 1_000_000, seed: int = 20240101, n_boot: int = 200) -> dict:
    """Compute the reference ``psi_BM`` table stored under ``data/``."""
    from . import __version__

    ov = overlap_sample(n, count, seed)
    rows = psi_bm_from_sample(ov, alphas, n_boot, seed)
    return {
        "description": "Monte Carlo 1/alpha quantiles of the range overlap of two independent Brownian paths",
        "grid": n, "pairs": count, "seed": seed, "bootstrap": n_boot, "ci_level": 0.95,
        "version": __version__,
        "mean_overlap": float(ov.mean()),
        "table": [{"alpha": r.extra["alpha"], "psi": r.value, "ci_low": r.ci[0], "ci_high": r.ci[1]}
                  for r in rows],
    }
