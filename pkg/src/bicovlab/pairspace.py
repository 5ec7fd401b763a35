"""Finite weighted (pair-)pseudometric spaces and their covering numbers.

A sampled space is a probability vector over ``m`` opaque points together
with one dense distance matrix; a sampled pair space carries two.  All balls
are open (strict ``<``).  Covering searches come in an exhaustive flavour,
capped at ``EXACT_LIMIT`` points, and a deterministic greedy flavour.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

EXACT_LIMIT = 20
MAX_POINTS = 20_000
# Mass comparisons "> a" are made against a + MASS_TOL so that sums of
# rational weights landing exactly on the target are not counted as exceeding it.
MASS_TOL = 1e-12

_FORMAT_TAG = "bicovlab-pairspace"
_FORMAT_VERSION = 1


def _check_weights(weights: np.ndarray) -> None:
    if weights.ndim != 1:
        raise ValueError("weights must be one-dimensional")
    if not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise ValueError("weights must be finite and nonnegative")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights sum to {weights.sum():.12g}, expected 1")


def _check_dist(dist: np.ndarray, m: int, name: str = "dist") -> None:
    if dist.shape != (m, m):
        raise ValueError(f"{name} has shape {dist.shape}, expected {(m, m)}")
    if not np.all(np.isfinite(dist)) or np.any(dist < 0):
        raise ValueError(f"{name} entries must be finite and nonnegative")
    if np.any(np.diag(dist) != 0):
        raise ValueError(f"{name} must have zero diagonal")
    if not np.array_equal(dist, dist.T):
        raise ValueError(f"{name} must be symmetric")


@dataclass(frozen=True)
class SampledSpace:
    """Weighted point cloud with a single pseudodistance matrix."""

    weights: np.ndarray
    dist: np.ndarray

    def __post_init__(self) -> None:
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        d = np.ascontiguousarray(self.dist, dtype=np.float64)
        if w.size > MAX_POINTS:
            raise MemoryError(f"m = {w.size} exceeds the cap of {MAX_POINTS} points")
        _check_weights(w)
        _check_dist(d, w.size)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dist", d)

    @property
    def m(self) -> int:
        return int(self.weights.size)

    @classmethod
    def uniform(cls, dist: np.ndarray) -> "SampledSpace":
        m = np.asarray(dist).shape[0]
        return cls(np.full(m, 1.0 / m), dist)


@dataclass(frozen=True)
class SampledPairSpace:
    """Weighted point cloud with two pseudodistance matrices.

    ``dist1`` plays the role of the past metric and ``dist2`` the future one.
    ``meta`` is free-form provenance (process name, N, seed, ...).
    """

    weights: np.ndarray
    dist1: np.ndarray
    dist2: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        d1 = np.ascontiguousarray(self.dist1, dtype=np.float64)
        d2 = np.ascontiguousarray(self.dist2, dtype=np.float64)
        if w.size > MAX_POINTS:
            raise MemoryError(f"m = {w.size} exceeds the cap of {MAX_POINTS} points")
        _check_weights(w)
        _check_dist(d1, w.size, "dist1")
        _check_dist(d2, w.size, "dist2")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dist1", d1)
        object.__setattr__(self, "dist2", d2)

    @property
    def m(self) -> int:
        return int(self.weights.size)

    @classmethod
    def uniform(cls, dist1: np.ndarray, dist2: np.ndarray, meta: dict | None = None) -> "SampledPairSpace":
        m = np.asarray(dist1).shape[0]
        return cls(np.full(m, 1.0 / m), dist1, dist2, dict(meta or {}))

    def with_weights(self, weights: np.ndarray) -> "SampledPairSpace":
        return SampledPairSpace(weights, self.dist1, self.dist2, dict(self.meta))

    def marginal(self, which: int) -> SampledSpace:
        return SampledSpace(self.weights, self.dist1 if which == 1 else self.dist2)


@dataclass(frozen=True)
class CoverWitness:
    """Centres realising a (bi-)covering value, with the mass they cover."""

    centers: tuple[int, ...]
    radius: float
    covered_mass: float


# ---------------------------------------------------------------------------
# elementary metrics
# ---------------------------------------------------------------------------

def base_hamming_metric(u: Sequence, v: Sequence) -> int:
    """Number of positions at which two equal-length symbol sequences differ."""
    if len(u) != len(v):
        raise ValueError(f"length mismatch: {len(u)} != {len(v)}")
    if isinstance(u, str) and isinstance(v, str):
        return sum(a != b for a, b in zip(u, v))
    return int(np.count_nonzero(np.asarray(u) != np.asarray(v)))


def dynamic_metric(
    orbit_a: Sequence,
    orbit_b: Sequence,
    base_dist: Callable[[object, object], float],
    mode: str = "sum",
) -> float:
    """Sum (or maximum) of ``base_dist`` along two aligned orbit segments."""
    if len(orbit_a) != len(orbit_b):
        raise ValueError(f"orbit length mismatch: {len(orbit_a)} != {len(orbit_b)}")
    vals = [float(base_dist(a, b)) for a, b in zip(orbit_a, orbit_b)]
    if mode == "sum":
        return float(sum(vals))
    if mode == "sup":
        return float(max(vals, default=0.0))
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# neighbourhoods
# ---------------------------------------------------------------------------

def _as_index(ids: Iterable[int] | np.ndarray, m: int) -> np.ndarray:
    idx = np.unique(np.asarray(list(ids) if not isinstance(ids, np.ndarray) else ids, dtype=np.int64))
    if idx.size and (idx[0] < 0 or idx[-1] >= m):
        raise IndexError("point id out of range")
    return idx


def _near(dist: np.ndarray, r: float) -> np.ndarray:
    # radius 0 is read as the zero-distance class rather than the empty open ball
    return dist < r if r > 0 else dist <= 0


def ball(dist: np.ndarray, seed: Iterable[int], r: float) -> np.ndarray:
    """Sorted ids within distance ``< r`` of some point of ``seed``."""
    idx = _as_index(seed, dist.shape[0])
    if idx.size == 0:
        return idx
    return np.flatnonzero(_near(dist[idx], r).any(axis=0))


def bi_neighbourhood(
    space: SampledPairSpace,
    seed: Iterable[int],
    delta: float,
    within: Iterable[int] | None = None,
) -> np.ndarray:
    """Points reachable by a ``dist1`` step then a ``dist2`` step, both ``< delta``.

    With ``within`` given, the intermediate point and the result are both
    constrained to that subset (the subspace bi-neighbourhood).
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    idx = _as_index(seed, space.m)
    if idx.size == 0:
        raise ValueError("seed must be nonempty")
    mid = _near(space.dist1[idx], delta).any(axis=0)
    if within is not None:
        inside = np.zeros(space.m, dtype=bool)
        inside[_as_index(within, space.m)] = True
        mid &= inside
    out = _near(space.dist2[mid], delta).any(axis=0)
    if within is not None:
        out &= inside
    return np.flatnonzero(out)


def bi_neighbourhood_matrix(
    space: SampledPairSpace,
    delta: float,
    within: np.ndarray | None = None,
) -> np.ndarray:
    """Boolean matrix whose row ``i`` is the bi-neighbourhood of ``{i}``.

    If ``within`` (sorted ids) is given, rows and columns are indexed by
    positions in ``within`` and intermediate points are restricted to it.
    """
    d1, d2 = space.dist1, space.dist2
    if within is not None:
        within = np.asarray(within, dtype=np.int64)
        d1 = d1[np.ix_(within, within)]
        d2 = d2[np.ix_(within, within)]
    a1 = _near(d1, delta).astype(np.float32)
    a2 = _near(d2, delta).astype(np.float32)
    # counts stay far below 2**24, so float32 products are exact
    return (a1 @ a2) > 0.5


def is_bi_separated(space: SampledPairSpace, i: int, j: int, delta: float) -> bool:
    """True iff the bi-neighbourhoods of ``{i}`` and ``{j}`` are disjoint."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    bi = bi_neighbourhood(space, [i], delta)
    bj = bi_neighbourhood(space, [j], delta)
    return np.intersect1d(bi, bj).size == 0


# ---------------------------------------------------------------------------
# set-cover core
# ---------------------------------------------------------------------------

def greedy_partial_cover(
    cover: np.ndarray,
    weights: np.ndarray,
    target: float | None,
) -> tuple[list[int], float]:
    """Greedy choice of rows of ``cover`` until covered mass exceeds ``target``.

    ``cover[c, j]`` says whether candidate ``c`` covers point ``j``.  With
    ``target=None`` every point with a ``True`` in some row must be covered
    (full cover, weights ignored).  Ties go to the lowest candidate index.
    Returns the chosen rows and the covered mass.
    """
    cover = np.asarray(cover, dtype=bool)
    w = np.asarray(weights, dtype=np.float64)
    n_cand = cover.shape[0]
    covered = np.zeros(cover.shape[1], dtype=bool)
    chosen: list[int] = []
    if target is None:
        need = cover.any(axis=0)
        cov_f = cover.astype(np.float32)
        while not np.array_equal(covered & need, need):
            gain = cov_f @ (~covered & need).astype(np.float32)
            c = int(np.argmax(gain))
            if gain[c] <= 0:
                break
            chosen.append(c)
            covered |= cover[c]
        return chosen, float(w[covered].sum())
    cov_f = cover.astype(np.float64)
    mass = 0.0
    while mass <= target + MASS_TOL and len(chosen) < n_cand:
        gain = cov_f @ np.where(covered, 0.0, w)
        c = int(np.argmax(gain))
        if gain[c] <= 0:
            break
        chosen.append(c)
        covered |= cover[c]
        mass = float(w[covered].sum())
    return chosen, mass


def exact_partial_cover(
    cover: np.ndarray,
    weights: np.ndarray,
    target: float | None,
) -> tuple[list[int], float]:
    """Minimum number of rows whose union has mass ``> target``.

    Iterative deepening with a branch-and-bound prune (current mass plus the
    best remaining marginal gains).  ``target=None`` asks for a full cover.
    Returns ``([], mass)`` with the best achievable mass if no cover exists.
    """
    cover = np.asarray(cover, dtype=bool)
    w = np.asarray(weights, dtype=np.float64)
    n_cand, n_pts = cover.shape
    if max(n_cand, n_pts) > EXACT_LIMIT:
        raise ValueError(f"exact search refused for more than {EXACT_LIMIT} points")
    if target is None:
        # full cover: unit weights on coverable points, target just below their count
        need = cover.any(axis=0)
        w = need.astype(np.float64)
        target = float(need.sum()) - 0.5
    full_mass = float(w[cover.any(axis=0)].sum())
    if full_mass <= target + MASS_TOL:
        return [], full_mass

    # bitmask encoding
    masks = [sum(1 << j for j in np.flatnonzero(cover[c])) for c in range(n_cand)]
    wl = w.tolist()

    def mass_of(mask: int) -> float:
        s, j = 0.0, 0
        while mask:
            if mask & 1:
                s += wl[j]
            mask >>= 1
            j += 1
        return s

    # drop duplicate candidates, keeping the lowest index
    uniq: list[int] = []
    seen: set[int] = set()
    for c in range(n_cand):
        if masks[c] and masks[c] not in seen:
            seen.add(masks[c])
            uniq.append(c)

    best: list[int] | None = None

    def dfs(start: int, depth: int, cur: int, cur_mass: float, picked: list[int]) -> bool:
        nonlocal best
        if cur_mass > target + MASS_TOL:
            best = list(picked)
            return True
        if depth == 0:
            return False
        gains = []
        for pos in range(start, len(uniq)):
            g = mass_of(masks[uniq[pos]] & ~cur)
            gains.append(g)
        if not gains:
            return False
        top = sorted(gains, reverse=True)[:depth]
        if cur_mass + sum(top) <= target + MASS_TOL:
            return False
        for off, pos in enumerate(range(start, len(uniq))):
            if gains[off] <= 0:
                continue
            c = uniq[pos]
            picked.append(c)
            if dfs(pos + 1, depth - 1, cur | masks[c], cur_mass + gains[off], picked):
                return True
            picked.pop()
        return False

    for k in range(1, len(uniq) + 1):
        if dfs(0, k, 0, 0.0, []):
            assert best is not None
            covered = 0
            for c in best:
                covered |= masks[c]
            return best, mass_of(covered)
    return [], full_mass


def _cover_result(cover, weights, target, exact, radius, centers_map=None):
    solver = exact_partial_cover if exact else greedy_partial_cover
    chosen, _ = solver(cover, weights, target)
    centers = chosen if centers_map is None else [int(centers_map[c]) for c in chosen]
    covered = cover[chosen].any(axis=0) if chosen else np.zeros(cover.shape[1], dtype=bool)
    return len(chosen), CoverWitness(tuple(int(c) for c in centers), float(radius), float(np.asarray(weights)[covered].sum()))


# ---------------------------------------------------------------------------
# covering numbers
# ---------------------------------------------------------------------------

def covering_number(
    space: SampledSpace,
    r: float,
    subset: Iterable[int] | None = None,
    exact: bool = False,
) -> tuple[int, CoverWitness]:
    """Fewest open ``r``-balls with centres in ``subset`` covering ``subset``."""
    if r <= 0:
        raise ValueError("r must be positive")
    idx = np.arange(space.m) if subset is None else _as_index(subset, space.m)
    if exact and idx.size > EXACT_LIMIT:
        raise ValueError(f"exact covering refused for more than {EXACT_LIMIT} points")
    cover = space.dist[np.ix_(idx, idx)] < r
    n, wit = _cover_result(cover, space.weights[idx], None, exact, r, idx)
    return n, wit


def partial_covering_number(
    space: SampledSpace,
    a: float,
    r: float,
    exact: bool = False,
) -> tuple[int, CoverWitness]:
    """Fewest open ``r``-balls whose union has mass ``> a``."""
    if not 0 < a < 1:
        raise ValueError("a must lie in (0, 1)")
    if r <= 0:
        raise ValueError("r must be positive")
    if exact and space.m > EXACT_LIMIT:
        raise ValueError(f"exact covering refused for more than {EXACT_LIMIT} points")
    return _cover_result(space.dist < r, space.weights, a, exact, r)


def bicov_partial(
    space: SampledPairSpace,
    a: float,
    delta: float,
    exact: bool = False,
    within: Iterable[int] | None = None,
    weights: np.ndarray | None = None,
) -> tuple[int, CoverWitness]:
    """Fewest bi-neighbourhoods (centres in ``within``) with mass ``> a``.

    ``weights`` overrides the space's weights (e.g. a reweighted measure);
    the target ``a`` is absolute mass under those weights.  With ``within``
    the bi-neighbourhoods are the subspace ones and the weights outside the
    subset are ignored.
    """
    if a < 0:
        raise ValueError("a must be nonnegative")
    if delta <= 0:
        raise ValueError("delta must be positive")
    w = space.weights if weights is None else np.asarray(weights, dtype=np.float64)
    if within is None:
        idx = np.arange(space.m)
        cover = bi_neighbourhood_matrix(space, delta)
    else:
        idx = _as_index(within, space.m)
        cover = bi_neighbourhood_matrix(space, delta, idx)
    if exact and idx.size > EXACT_LIMIT:
        raise ValueError(f"exact bi-covering refused for more than {EXACT_LIMIT} points")
    return _cover_result(cover, w[idx], a, exact, delta, idx)


def push_forward_space(
    space: SampledPairSpace,
    mapping: Sequence[int] | np.ndarray,
    target: SampledPairSpace,
) -> SampledPairSpace:
    """Target space carrying the image of ``space.weights`` under ``mapping``."""
    mp = np.asarray(mapping, dtype=np.int64)
    if mp.shape != (space.m,):
        raise ValueError("mapping must assign a target point to every source point")
    if mp.min() < 0 or mp.max() >= target.m:
        raise IndexError("mapping leaves the target space")
    w = np.bincount(mp, weights=space.weights, minlength=target.m)
    w = w / w.sum()
    return SampledPairSpace(w, target.dist1, target.dist2, dict(target.meta))


# ---------------------------------------------------------------------------
# concentration
# ---------------------------------------------------------------------------

def concentration_profile(
    space: SampledSpace,
    delta: float,
    n_random: int = 32,
    seed: int = 0,
) -> float:
    """Heuristic value of ``1 - min mass(B_delta(U))`` over half-mass sets ``U``.

    Candidates are all subsets (when ``m <= 12``), distance sublevel sets
    around each point, and ``n_random`` random half-mass sets.  The result is
    exact on tiny spaces and a lower estimate of the concentration function
    otherwise.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    m, w, near = space.m, space.weights, space.dist < delta
    best = np.inf

    def blow(mask: np.ndarray) -> float:
        return float(w[near[mask].any(axis=0)].sum())

    if m <= 12:
        for bits in range(1, 1 << m):
            mask = np.array([(bits >> j) & 1 for j in range(m)], dtype=bool)
            if w[mask].sum() >= 0.5 - MASS_TOL:
                best = min(best, blow(mask))
    else:
        for i in range(m):
            order = np.argsort(space.dist[i], kind="stable")
            k = int(np.searchsorted(np.cumsum(w[order]), 0.5 - MASS_TOL)) + 1
            mask = np.zeros(m, dtype=bool)
            mask[order[:k]] = True
            best = min(best, blow(mask))
        rng = np.random.default_rng(seed)
        for _ in range(n_random):
            order = rng.permutation(m)
            k = int(np.searchsorted(np.cumsum(w[order]), 0.5 - MASS_TOL)) + 1
            mask = np.zeros(m, dtype=bool)
            mask[order[:k]] = True
            best = min(best, blow(mask))
    return max(0.0, 1.0 - best)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_pair_space(path: str | Path, space: SampledPairSpace, header: dict | None = None) -> Path:
    """Write a text header followed by raw little-endian float64 arrays.

    Layout: ASCII lines ``key: value`` ending with a line ``END``; then
    ``weights`` (m values), ``dist1`` and ``dist2`` (m*m values each,
    row-major).  The ``meta`` line holds JSON.
    """
    path = Path(path)
    meta = dict(space.meta)
    meta.update(header or {})
    lines = [
        f"format: {_FORMAT_TAG}",
        f"version: {_FORMAT_VERSION}",
        f"m: {space.m}",
        "dtype: <f8",
        "order: weights,dist1,dist2 row-major",
        f"meta: {json.dumps(meta, sort_keys=True, default=str)}",
        "END",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for arr in (space.weights, space.dist1, space.dist2):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def load_pair_space(path: str | Path) -> SampledPairSpace:
    """Inverse of :func:`save_pair_space`; bit-exact."""
    with open(path, "rb") as fh:
        fields: dict[str, str] = {}
        while True:
            line = fh.readline()
            if not line:
                raise ValueError("truncated header")
            text = line.decode("ascii").rstrip("\n")
            if text == "END":
                break
            key, _, val = text.partition(": ")
            fields[key] = val
        if fields.get("format") != _FORMAT_TAG:
            raise ValueError("not a pair-space file")
        m = int(fields["m"])
        raw = np.frombuffer(fh.read(), dtype="<f8")
    if raw.size != m + 2 * m * m:
        raise ValueError("payload size does not match header")
    w = raw[:m].copy()
    d1 = raw[m : m + m * m].reshape(m, m).copy()
    d2 = raw[m + m * m :].reshape(m, m).copy()
    return SampledPairSpace(w, d1, d2, json.loads(fields.get("meta", "{}")))


def all_subsets(m: int, min_size: int = 1) -> Iterable[tuple[int, ...]]:
    """All subsets of ``range(m)`` of size at least ``min_size``, by size."""
    for k in range(min_size, m + 1):
        yield from itertools.combinations(range(m), k)


# ---------------------------------------------------------------------------
# small model spaces
# ---------------------------------------------------------------------------

def wedge_pair_space(points: np.ndarray, weights: np.ndarray | None = None) -> SampledPairSpace:
    """Points of ``[0,1]^3`` with ``d1 = |dx1| + |dx2|`` and ``d2 = |dx2| + |dx3|``.

    Neither pseudometric separates points on its own; together they see
    the middle coordinate twice.
    """
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError("expected an (m, 3) array")
    diff = np.abs(p[:, None, :] - p[None, :, :])
    d1, d2 = diff[..., 0] + diff[..., 1], diff[..., 1] + diff[..., 2]
    w = np.full(len(p), 1.0 / len(p)) if weights is None else weights
    return SampledPairSpace(w, d1, d2, {"model": "wedge"})


def cube_grid(xs: Sequence[float]) -> np.ndarray:
    """All points of ``xs^3`` in lexicographic order."""
    return np.array(list(itertools.product(xs, repeat=3)), dtype=np.float64)
