"""Markov base systems, finite-range cocycles, sceneries and skew-product samples.

Conventions
-----------
* A symbol path over the time window ``[a, b)`` is an integer array whose
  column ``j`` holds the symbol at time ``a + j``.
* Cocycle partial sums over ``[-N, N]`` are stored with ``sums[N] == 0``.
* The fibre is a step flow over a ``Z``-indexed scenery with cell width
  ``w``: the walker at displacement ``t`` reads the site ``round(t / w)``
  (round half to even).
* Randomness is drawn in fixed blocks of ``CHUNK`` samples, each block with
  its own stream derived from ``(seed, stream name, block index)``, so the
  output never depends on how work is scheduled.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy.integrate import trapezoid

from .pairspace import MAX_POINTS, SampledPairSpace

CHUNK = 1024


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

def stream_rng(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Generator for the named stream and block index under a master seed."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), tag, int(index)]))


def _blocks(count: int) -> Iterator[tuple[int, int, int]]:
    for b, lo in enumerate(range(0, count, CHUNK)):
        yield b, lo, min(lo + CHUNK, count)


# ---------------------------------------------------------------------------
# base system
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarkovSystem:
    """Stationary finite-state Markov shift."""

    transitions: np.ndarray
    stationary: np.ndarray

    @property
    def k(self) -> int:
        return int(self.transitions.shape[0])

    @property
    def reversed_transitions(self) -> np.ndarray:
        """Time-reversed kernel ``pi_j P_ji / pi_i``."""
        p, pi = self.transitions, self.stationary
        return (p.T * pi[None, :]) / pi[:, None]

    @property
    def is_iid(self) -> bool:
        return bool(np.all(np.abs(self.transitions - self.stationary[None, :]) < 1e-15))

    def entropy_rate(self) -> float:
        """Entropy rate in nats, ``sum_i pi_i H(P_i.)``."""
        p = self.transitions
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.where(p > 0, np.log(p), 0.0)
        return float(-(self.stationary[:, None] * p * logs).sum())

    def block_probability(self, block) -> float:
        block = list(block)
        prob = float(self.stationary[block[0]])
        for a, b in zip(block[:-1], block[1:]):
            prob *= float(self.transitions[a, b])
        return prob


def _reachability(adj: np.ndarray) -> np.ndarray:
    k = adj.shape[0]
    reach = adj | np.eye(k, dtype=bool)
    for _ in range(max(1, int(np.ceil(np.log2(k))) + 1)):
        reach = (reach.astype(np.int64) @ reach.astype(np.int64)) > 0
    return reach


def build_markov_system(transitions) -> MarkovSystem:
    """Validate a row-stochastic matrix and attach its stationary law.

    Raises ``ValueError`` with a diagnosis for reducible or periodic chains.
    """
    p = np.array(transitions, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] == 0:
        raise ValueError("transition matrix must be square and nonempty")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("transition probabilities must be finite and nonnegative")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("rows must sum to 1")
    k = p.shape[0]
    adj = p > 0
    if not _reachability(adj).all():
        raise ValueError("chain is reducible: some state cannot reach another")
    # primitive iff the (k-1)^2+1 power is positive (Wielandt bound)
    power = (k - 1) ** 2 + 1
    acc = np.eye(k, dtype=bool)
    base = adj.copy()
    e = power
    while e:
        if e & 1:
            acc = (acc.astype(np.int64) @ base.astype(np.int64)) > 0
        base = (base.astype(np.int64) @ base.astype(np.int64)) > 0
        e >>= 1
    if not acc.all():
        raise ValueError("chain is periodic: no power of the transition matrix is positive")
    pi = np.full(k, 1.0 / k)
    for _ in range(1_000_000):
        nxt = pi @ p
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() < 1e-12:
            pi = nxt
            break
        pi = nxt
    else:  # pragma: no cover - primitive chains converge
        raise RuntimeError("power iteration did not converge")
    if np.abs(pi @ p - pi).max() > 1e-8:
        raise RuntimeError("stationary vector failed the fixed-point check")
    return MarkovSystem(p, pi)


def iid_system(probs) -> MarkovSystem:
    """Markov system with identical rows (an i.i.d. process)."""
    probs = np.asarray(probs, dtype=np.float64)
    return build_markov_system(np.tile(probs, (probs.size, 1)))


# ---------------------------------------------------------------------------
# cocycles and sceneries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FiniteRangeCocycle:
    """Real function of the block ``(y_0, ..., y_{r-1})``.

    ``table`` has shape ``(k,) * r``.
    """

    table: np.ndarray
    effective_variance: float | None = None

    def __post_init__(self) -> None:
        t = np.asarray(self.table, dtype=np.float64)
        if t.ndim < 1 or len(set(t.shape)) != 1:
            raise ValueError("cocycle table must have shape (k,)*r with r >= 1")
        object.__setattr__(self, "table", t)

    @property
    def range_(self) -> int:
        return int(self.table.ndim)

    @property
    def k(self) -> int:
        return int(self.table.shape[0])

    @property
    def sup_norm(self) -> float:
        return float(np.abs(self.table).max())

    def stationary_mean(self, system: MarkovSystem) -> float:
        r = self.range_
        probs = system.stationary.copy()
        for _ in range(r - 1):
            probs = probs[..., None] * system.transitions.reshape((1,) * (probs.ndim - 1) + system.transitions.shape)
        return float((probs * self.table).sum())

    def steps(self, paths: np.ndarray) -> np.ndarray:
        """Values ``sigma(S^n y)`` for every start ``n`` with a full block in view."""
        paths = np.asarray(paths)
        r = self.range_
        length = paths.shape[-1] - r + 1
        if length < 0:
            raise ValueError("path shorter than the cocycle range")
        idx = tuple(paths[..., j : j + length] for j in range(r))
        return self.table[idx]


def step_cocycle(values) -> FiniteRangeCocycle:
    """Range-one cocycle ``sigma(y) = values[y_0]``."""
    return FiniteRangeCocycle(np.asarray(values, dtype=np.float64))


def coboundary_cocycle(f) -> FiniteRangeCocycle:
    """Range-two cocycle ``f(y_1) - f(y_0)``."""
    f = np.asarray(f, dtype=np.float64)
    return FiniteRangeCocycle(f[None, :] - f[:, None], effective_variance=0.0)


@dataclass(frozen=True)
class SceneryModel:
    """Law of a stationary colouring of ``Z``.

    ``kind='iid'`` uses ``probs``; ``kind='markov'`` uses ``transitions``.
    An alphabet of size one is the trivial scenery.
    """

    kind: str = "iid"
    probs: tuple = (1.0,)
    transitions: tuple | None = None
    cell_width: float = 1.0

    def __post_init__(self) -> None:
        if self.cell_width <= 0:
            raise ValueError("cell width must be positive")
        if self.kind == "iid":
            p = np.asarray(self.probs, dtype=np.float64)
            if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
                raise ValueError("scenery probabilities must form a distribution")
        elif self.kind == "markov":
            if self.transitions is None:
                raise ValueError("markov scenery needs transitions")
            build_markov_system(self.transitions)
        else:
            raise ValueError(f"unknown scenery kind {self.kind!r}")

    @classmethod
    def uniform(cls, k: int, cell_width: float = 1.0) -> "SceneryModel":
        return cls("iid", tuple([1.0 / k] * k), None, cell_width)

    @property
    def alphabet_size(self) -> int:
        if self.kind == "iid":
            return len(self.probs)
        return len(self.transitions)

    @property
    def entropy(self) -> float:
        """Entropy per site (nats)."""
        if self.kind == "iid":
            p = np.asarray(self.probs, dtype=np.float64)
            p = p[p > 0]
            return float(-(p * np.log(p)).sum())
        return build_markov_system(self.transitions).entropy_rate()

    def sample(self, seed: int, count: int, lo: int, hi: int, stream: str = "scenery") -> np.ndarray:
        """Colours on sites ``[lo, hi)`` for ``count`` independent sceneries."""
        if self.kind == "iid":
            probs = np.asarray(self.probs, dtype=np.float64)
            if probs.size == 1:
                return np.zeros((count, hi - lo), dtype=np.int16)
            cum = np.cumsum(probs)
            cum[-1] = 1.0
            out = np.empty((count, hi - lo), dtype=np.int16)
            for b, a, z in _blocks(count):
                u = stream_rng(seed, stream, b).random((z - a, hi - lo))
                out[a:z] = np.searchsorted(cum, u, side="right")
            return out
        system = build_markov_system(self.transitions)
        return sample_paths(system, (lo, hi), count, seed, stream=stream)


@dataclass(frozen=True)
class MetricConfig:
    """Knobs of the skew-product distance."""

    depth: int = 16  # truncation p of the 2-adic symbol metric
    radius: int = 0  # scenery comparison radius rho
    mode: str = "sum"


@dataclass(frozen=True)
class ProcessModel:
    """Markov base, cocycle and scenery law of a skew product."""

    base: MarkovSystem
    cocycle: FiniteRangeCocycle
    scenery: SceneryModel = field(default_factory=SceneryModel)
    name: str = "process"

    def __post_init__(self) -> None:
        if self.cocycle.k != self.base.k:
            raise ValueError("cocycle alphabet does not match base alphabet")
        mean = self.cocycle.stationary_mean(self.base)
        if abs(mean) > 1e-8:
            raise ValueError(f"cocycle has stationary mean {mean:.3g}, expected 0")

    @property
    def ell(self) -> float:
        """Default fattening radius ``max(||sigma||_inf, 1)``."""
        return max(self.cocycle.sup_norm, 1.0)


def simple_random_walk(scenery: SceneryModel | None = None, name: str = "srw") -> ProcessModel:
    """Fair +-1 steps over an i.i.d. base with the given scenery law."""
    return ProcessModel(iid_system([0.5, 0.5]), step_cocycle([-1.0, 1.0]), scenery or SceneryModel(), name)


def rotation_pair_space(q: int, p: int, N: int) -> SampledPairSpace:
    """Marginal pair space of the rotation ``i -> i + p (mod q)`` on ``{0, 1/q, ...}``.

    The circle distance is invariant under the rotation, so both dynamical
    metrics equal ``N`` times it; they are nonetheless summed along the
    actual orbits over ``[-N, 0)`` and ``[0, N)``, in integer units of ``1/q``.
    """
    if q < 1 or N < 1:
        raise ValueError("need q, N >= 1")
    pts = np.arange(q)

    def window(lo: int, hi: int) -> np.ndarray:
        tot = np.zeros((q, q), dtype=np.int64)
        for n in range(lo, hi):
            pos = (pts + n * p) % q
            gap = np.abs(pos[:, None] - pos[None, :])
            tot += np.minimum(gap, q - gap)
        return tot / q

    return SampledPairSpace.uniform(window(-N, 0), window(0, N), {"model": "rotation", "q": q, "p": p, "N": N})


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _window(window) -> tuple[int, int]:
    if isinstance(window, (int, np.integer)):
        return -int(window), int(window)
    a, b = (int(v) for v in window)
    return a, b


def sample_paths(system: MarkovSystem, window, count: int, seed: int, stream: str = "paths") -> np.ndarray:
    """Stationary symbol paths over a time window containing 0.

    ``window`` is ``N`` (meaning ``[-N, N)``) or a pair ``(a, b)`` with
    ``a <= 0 < b``.  Time 0 is drawn from the stationary law, later times by
    the transition kernel and earlier times by the reversed kernel.
    """
    a, b = _window(window)
    if not a <= 0 < b:
        raise ValueError("window must contain time 0")
    T, z0, k = b - a, -a, system.k
    dtype = np.int8 if k <= 127 else np.int32
    out = np.empty((count, T), dtype=dtype)
    cum_pi = np.cumsum(system.stationary)
    cum_pi[-1] = 1.0
    fwd = np.cumsum(system.transitions, axis=1)
    fwd[:, -1] = 1.0
    bwd = np.cumsum(system.reversed_transitions, axis=1)
    bwd[:, -1] = 1.0
    iid = system.is_iid
    for blk, lo, hi in _blocks(count):
        u = stream_rng(seed, stream, blk).random((hi - lo, T))
        if iid:
            out[lo:hi] = np.searchsorted(cum_pi, u, side="right")
            continue
        cur = np.searchsorted(cum_pi, u[:, z0], side="right")
        blkout = np.empty((hi - lo, T), dtype=np.int64)
        blkout[:, z0] = cur
        for j in range(z0 + 1, T):
            cur = (fwd[cur] <= u[:, j : j + 1]).sum(axis=1)
            blkout[:, j] = cur
        cur = blkout[:, z0]
        for j in range(z0 - 1, -1, -1):
            cur = (bwd[cur] <= u[:, j : j + 1]).sum(axis=1)
            blkout[:, j] = cur
        out[lo:hi] = np.minimum(blkout, k - 1)
    return out


def cocycle_sums(path: np.ndarray, cocycle: FiniteRangeCocycle, path_start: int, N: int) -> np.ndarray:
    """Partial sums ``sigma_n`` for ``n`` in ``[-N, N]`` (entry ``N`` is ``n = 0``).

    ``path`` covers times ``[path_start, path_start + T)`` and must include
    ``[-N, N + r - 1)``.
    """
    path = np.asarray(path)
    r = cocycle.range_
    lo = -N - path_start
    hi = N + r - 1 - path_start
    if lo < 0 or hi > path.shape[-1]:
        raise ValueError("path window too short for the cocycle sums")
    steps = cocycle.steps(path[..., lo:hi])
    partial = np.concatenate([np.zeros(steps.shape[:-1] + (1,)), np.cumsum(steps, axis=-1)], axis=-1)
    sums = partial - partial[..., N : N + 1]
    return sums


def forward_sums(path: np.ndarray, cocycle: FiniteRangeCocycle, N: int) -> np.ndarray:
    """``sigma_0, ..., sigma_N`` from a path starting at time 0."""
    steps = cocycle.steps(np.asarray(path)[..., : N + cocycle.range_ - 1])
    zeros = np.zeros(steps.shape[:-1] + (1,))
    return np.concatenate([zeros, np.cumsum(steps, axis=-1)], axis=-1)


def iter_forward_sums(system: MarkovSystem, cocycle: FiniteRangeCocycle, N: int, count: int, seed: int,
                      stream: str = "walk") -> Iterator[np.ndarray]:
    """Blocks of forward partial sums ``sigma_0..sigma_N`` (shape ``(b, N+1)``)."""
    r = cocycle.range_
    for blk, lo, hi in _blocks(count):
        sub_seed = int(np.random.SeedSequence([int(seed), zlib.crc32(stream.encode()), blk]).generate_state(1)[0])
        paths = sample_paths(system, (0, N + r - 1), hi - lo, sub_seed, stream="block")
        yield forward_sums(paths, cocycle, N)


def site_index(values: np.ndarray, cell_width: float) -> np.ndarray:
    """Scenery site read at displacement ``values`` (round half to even)."""
    return np.rint(np.asarray(values, dtype=np.float64) / cell_width).astype(np.int64)


@dataclass(frozen=True)
class RwrsSample:
    """One skew-product state seen through a finite window."""

    path: np.ndarray
    path_start: int
    sums: np.ndarray
    N: int
    scenery: np.ndarray
    scenery_start: int
    cell_width: float = 1.0

    def __post_init__(self) -> None:
        if self.sums.shape != (2 * self.N + 1,):
            raise ValueError("sums must cover [-N, N]")
        if self.sums[self.N] != 0:
            raise ValueError("sigma_0 must vanish")

    def sigma(self, n: int) -> float:
        return float(self.sums[n + self.N])

    def site(self, n: int) -> int:
        return int(site_index(self.sums[n + self.N], self.cell_width))

    def colour(self, site: int) -> int:
        j = site - self.scenery_start
        if not 0 <= j < self.scenery.size:
            raise IndexError(f"site {site} outside the scenery window")
        return int(self.scenery[j])

    def symbol(self, n: int) -> int:
        j = n - self.path_start
        if not 0 <= j < self.path.size:
            raise IndexError(f"time {n} outside the path window")
        return int(self.path[j])


@dataclass(frozen=True)
class RwrsBatch:
    """Stacked samples sharing window offsets."""

    paths: np.ndarray
    path_start: int
    sums: np.ndarray
    N: int
    sceneries: np.ndarray
    scenery_start: int
    cell_width: float = 1.0

    def __len__(self) -> int:
        return int(self.paths.shape[0])

    def __getitem__(self, i: int) -> RwrsSample:
        return RwrsSample(self.paths[i], self.path_start, self.sums[i], self.N,
                          self.sceneries[i], self.scenery_start, self.cell_width)

    def sites(self, lo: int, hi: int) -> np.ndarray:
        """Walker sites for times ``[lo, hi)`` (shape ``(m, hi - lo)``)."""
        return site_index(self.sums[:, lo + self.N : hi + self.N], self.cell_width)


def simulate_rwrs(process: ProcessModel, N: int, count: int, seed: int, metric: MetricConfig | None = None) -> RwrsBatch:
    """Draw ``count`` independent skew-product states seen over ``[-N, N]``.

    The path window is padded by the metric depth on both sides and the
    scenery window covers every site reachable within ``N`` steps, padded by
    the fattening radius and the comparison radius.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    metric = metric or MetricConfig()
    r = process.cocycle.range_
    pad = max(metric.depth, r - 1)
    a, b = -N - pad, N + pad
    paths = sample_paths(process.base, (a, b), count, seed, stream="base")
    sums = cocycle_sums(paths, process.cocycle, a, N)
    w = process.scenery.cell_width
    reach = N * process.cocycle.sup_norm + process.ell
    lo = int(np.floor(-reach / w)) - metric.radius - 1
    hi = int(np.ceil(reach / w)) + metric.radius + 2
    sceneries = process.scenery.sample(seed, count, lo, hi)
    return RwrsBatch(paths, a, sums, N, sceneries, lo, w)


def rwrs_name(sample: RwrsSample, N: int) -> list[tuple[int, int]]:
    """Pairs ``(y_n, colour at the walker)`` for ``n`` in ``[0, N)``."""
    if N > sample.N:
        raise ValueError("sample window shorter than the requested name")
    return [(sample.symbol(n), sample.colour(sample.site(n))) for n in range(N)]


# ---------------------------------------------------------------------------
# skew-product distances
# ---------------------------------------------------------------------------

def _base_local(sa: RwrsSample, sb: RwrsSample, n: int, depth: int) -> float:
    tot = 0.0
    for k in range(-depth, depth + 1):
        if sa.symbol(n + k) != sb.symbol(n + k):
            tot += 2.0 ** (-abs(k))
    return tot


def _fibre_local(sa: RwrsSample, sb: RwrsSample, n: int, radius: int) -> float:
    s, t = sa.site(n), sb.site(n)
    for j in range(-radius, radius + 1):
        if sa.colour(s + j) != sb.colour(t + j):
            return 1.0
    return 0.0


def skew_distance(sample_a: RwrsSample, sample_b: RwrsSample, window: tuple[int, int],
                  mode: str = "sum", depth: int = 16, radius: int = 0) -> float:
    """Distance between two skew-product states along the time window ``[a, b)``.

    Each time contributes the truncated 2-adic distance of the shifted symbol
    paths plus the discrete distance of the sceneries read at the walkers.
    """
    a, b = window
    if sample_a.N != sample_b.N or sample_a.path_start != sample_b.path_start:
        raise ValueError("samples are defined on different windows")
    vals = [_base_local(sample_a, sample_b, n, depth) + _fibre_local(sample_a, sample_b, n, radius)
            for n in range(a, b)]
    if mode == "sum":
        return float(sum(vals))
    if mode == "sup":
        return float(max(vals, default=0.0))
    raise ValueError(f"unknown mode {mode!r}")


def _onehot(codes: np.ndarray, dtype) -> np.ndarray:
    """Column-block one-hot encoding of an ``(m, T)`` code array (codes remapped per column)."""
    m, T = codes.shape
    offsets = np.zeros(T, dtype=np.int64)
    remapped = np.empty_like(codes, dtype=np.int64)
    total = 0
    for j in range(T):
        uniq, inv = np.unique(codes[:, j], return_inverse=True)
        remapped[:, j] = inv + total
        offsets[j] = total
        total += uniq.size
    out = np.zeros((m, total), dtype=dtype)
    rows = np.repeat(np.arange(m), T)
    out[rows, remapped.ravel()] = 1
    return out


def _seen_codes(batch: RwrsBatch, lo: int, hi: int, radius: int) -> np.ndarray:
    sites = batch.sites(lo, hi) - batch.scenery_start
    m = len(batch)
    rows = np.arange(m)[:, None]
    k = int(batch.sceneries.max()) + 1 if batch.sceneries.size else 1
    code = np.zeros(sites.shape, dtype=np.int64)
    for j in range(-radius, radius + 1):
        code = code * k + batch.sceneries[rows, sites + j]
    return code


def pairwise_skew_distances(batch: RwrsBatch, window: tuple[int, int], metric: MetricConfig | None = None) -> np.ndarray:
    """All pairwise :func:`skew_distance` values over ``window`` for a batch."""
    metric = metric or MetricConfig()
    a, b = window
    p, rho = metric.depth, metric.radius
    if a < -batch.N or b > batch.N or batch.path_start > a - p:
        raise ValueError("window not covered by the batch")
    m = len(batch)
    if metric.mode == "sup":
        out = np.zeros((m, m))
        for n in range(a, b):
            local = np.zeros((m, m))
            for k in range(-p, p + 1):
                col = batch.paths[:, n + k - batch.path_start]
                local += (col[:, None] != col[None, :]) * 2.0 ** (-abs(k))
            codes = _seen_codes(batch, n, n + 1, rho)[:, 0]
            local += codes[:, None] != codes[None, :]
            np.maximum(out, local, out=out)
        return out
    if metric.mode != "sum":
        raise ValueError(f"unknown mode {metric.mode!r}")
    # weighted Hamming on path symbols: weight of time j is sum_n 2^-|j-n|
    times = np.arange(a - p, b + p)
    n = np.arange(a, b)
    lag = np.abs(times[:, None] - n[None, :])
    c = np.where(lag <= p, 2.0 ** (-lag.astype(np.float64)), 0.0).sum(axis=1)
    cols = batch.paths[:, times - batch.path_start].astype(np.int64)
    onehot = _onehot(cols, np.float64)
    col_time = np.repeat(np.arange(times.size), [np.unique(cols[:, j]).size for j in range(times.size)])
    weighted = onehot * c[col_time][None, :]
    base = c.sum() - weighted @ onehot.T
    codes = _seen_codes(batch, a, b, rho)
    oh = _onehot(codes, np.float32)
    fibre = (b - a) - (oh @ oh.T).astype(np.float64)
    dist = base + fibre
    dist = np.maximum((dist + dist.T) / 2.0, 0.0)
    np.fill_diagonal(dist, 0.0)
    return dist


def sample_pair_space(process: ProcessModel, N: int, m: int, metric: MetricConfig | None = None,
                      seed: int = 0, return_batch: bool = False):
    """Marginal pair space of ``m`` sampled states: past metric over ``[-N, 0)``, future over ``[0, N)``."""
    if m > MAX_POINTS:
        raise MemoryError(f"m = {m} exceeds the cap of {MAX_POINTS} points")
    metric = metric or MetricConfig()
    batch = simulate_rwrs(process, N, m, seed, metric)
    d1 = pairwise_skew_distances(batch, (-N, 0), metric)
    d2 = pairwise_skew_distances(batch, (0, N), metric)
    meta = {"process": process.name, "N": N, "m": m, "seed": seed,
            "depth": metric.depth, "radius": metric.radius, "mode": metric.mode}
    space = SampledPairSpace.uniform(d1, d2, meta)
    return (space, batch) if return_batch else space


# ---------------------------------------------------------------------------
# occupation measures and rescaled trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OccupationMeasure:
    atoms: np.ndarray
    masses: np.ndarray


@dataclass(frozen=True)
class SmoothedOccupation:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0]) if self.grid.size > 1 else 0.0

    def total_mass(self) -> float:
        return float(trapezoid(self.density, self.grid))


def triangular_bump(u: np.ndarray, half_width: float) -> np.ndarray:
    """Mollifier ``max(0, 1 - |u|/l) / l`` supported on ``[-l, l]``."""
    return np.maximum(0.0, 1.0 - np.abs(u) / half_width) / half_width


def occupation_measure(values: np.ndarray, bandwidth: float | None = None, grid_step: float | None = None,
                       grid: np.ndarray | None = None):
    """Empirical law of the cocycle values ``values`` (one per time in the window).

    Without ``bandwidth`` the atoms and masses are returned; with it, the
    convolution with the triangular bump evaluated on a uniform grid.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("empty time window")
    atoms, counts = np.unique(values, return_counts=True)
    masses = counts / values.size
    if bandwidth is None:
        return OccupationMeasure(atoms, masses)
    if grid is None:
        h = grid_step or bandwidth / 20.0
        lo, hi = atoms[0] - bandwidth, atoms[-1] + bandwidth
        n = int(np.ceil((hi - lo) / h)) + 1
        grid = lo + h * np.arange(n)
    dens = np.zeros(grid.size)
    for a, w in zip(atoms, masses):
        dens += w * triangular_bump(grid - a, bandwidth)
    return SmoothedOccupation(np.asarray(grid, dtype=np.float64), dens, float(bandwidth))


def traj_rescale(sums: np.ndarray, N: int, direction: str = "forward", t: np.ndarray | None = None,
                 zero_index: int = 0) -> np.ndarray:
    """Rescaled piecewise-linear path ``t -> N^{-1/2} sigma_{+-Nt}`` on ``[0, 1]``.

    ``sums[zero_index + n]`` is ``sigma_n``.  The default evaluation grid is
    the breakpoints ``i / N``.
    """
    sums = np.asarray(sums, dtype=np.float64)
    if t is None:
        t = np.arange(N + 1) / N
    t = np.asarray(t, dtype=np.float64)
    if direction == "forward":
        if zero_index + N > sums.shape[-1] - 1:
            raise ValueError("sums do not cover [0, N]")
        x = N * t
        grid = np.arange(N + 1)
        vals = sums[..., zero_index : zero_index + N + 1]
    elif direction == "backward":
        if zero_index - N < 0:
            raise ValueError("sums do not cover [-N, 0]")
        x = N * t
        grid = np.arange(N + 1)
        vals = sums[..., zero_index - N : zero_index + 1][..., ::-1]
    else:
        raise ValueError(f"unknown direction {direction!r}")
    if vals.ndim == 1:
        return np.interp(x, grid, vals) / np.sqrt(N)
    return np.stack([np.interp(x, grid, v) for v in vals]) / np.sqrt(N)


def effective_variance(system: MarkovSystem, cocycle: FiniteRangeCocycle, N: int, samples: int, seed: int,
                       n_boot: int = 200, level: float = 0.95) -> tuple[float, tuple[float, float]]:
    """``Var(sigma_N) / N`` with a percentile bootstrap interval."""
    ends = np.concatenate([blk[:, -1] for blk in iter_forward_sums(system, cocycle, N, samples, seed)])
    est = float(ends.var() / N)
    rng = stream_rng(seed, "bootstrap")
    boots = np.empty(n_boot)
    for i in range(n_boot):
        boots[i] = ends[rng.integers(0, ends.size, ends.size)].var() / N
    lo, hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2])
    return est, (float(min(lo, est)), float(max(hi, est)))
