"""Scale ladders, meandering, discrete Cantor structures and the searches
that build them from cocycle trajectories.

Conventions
-----------
* An index ``omega`` in ``{0,1}^d`` is stored as the integer whose binary
  expansion, most significant bit first, is ``omega_1 ... omega_d``.  Two
  indices agree on their first ``i`` coordinates iff ``a >> (d-i) == b >> (d-i)``.
* ``sums[t]`` is the cocycle sum ``sigma_t`` for ``t`` relative to the start
  of the top-level block ``Q = [0; N_d)``.  Blocks of ``D_s`` inside ``Q`` are
  numbered ``0 .. N_d/N_s - 1``.
* The image ``sigma_J`` of a time block ``J`` is a finite set whose
  consecutive points are at most ``ell`` apart, so its open
  ``ell``-neighbourhood is the open interval ``(min - ell, max + ell)``.
  Two images are separated when their distance exceeds ``2 ell``, which is
  equivalent to disjointness of the closed fattened hulls.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .infotools import Estimate, approx_abs_continuity
from .procgen import FiniteRangeCocycle, MarkovSystem, iter_forward_sums

ENUM_BUDGET = 10**8
DEFAULT_LENGTH_BUDGET = 10**12


# ---------------------------------------------------------------------------
# scale ladder
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScaleLadder:
    """Nested block lengths ``N_0 = 1``, ``N_d = L_d N_{d-1}``."""

    multipliers: tuple[int, ...]
    exponent: float | None = None

    def __post_init__(self) -> None:
        if not self.multipliers:
            raise ValueError("ladder needs depth at least 1")
        if any(int(L) != L or L < 2 for L in self.multipliers):
            raise ValueError("multipliers must be integers >= 2")
        object.__setattr__(self, "multipliers", tuple(int(L) for L in self.multipliers))

    @property
    def depth(self) -> int:
        return len(self.multipliers)

    @property
    def lengths(self) -> tuple[int, ...]:
        out = [1]
        for L in self.multipliers:
            out.append(out[-1] * L)
        return tuple(out)

    def N(self, d: int) -> int:
        return self.lengths[d]

    def L(self, d: int) -> int:
        if not 1 <= d <= self.depth:
            raise IndexError("multiplier index out of range")
        return self.multipliers[d - 1]

    @staticmethod
    def alpha(d: int) -> float:
        return 1.0 / (d + 1) ** 2

    def kappa(self, r: int, d: int) -> float:
        """``prod_{i=r+1}^d (1 - alpha_i)``."""
        if not 0 <= r <= d:
            raise ValueError("need 0 <= r <= d")
        return math.prod(1.0 - self.alpha(i) for i in range(r + 1, d + 1))

    def to_dict(self) -> dict:
        return {"multipliers": list(self.multipliers), "exponent": self.exponent,
                "lengths": list(self.lengths)}


def make_ladder(depth: int, exponent: float | None = 18.0, multipliers: Sequence[int] | None = None,
                budget: int | None = DEFAULT_LENGTH_BUDGET) -> ScaleLadder:
    """Ladder with ``L_d = ceil((d+1)^exponent)`` or explicit multipliers.

    Raises ``OverflowError`` when ``N_depth`` exceeds ``budget``.  With the
    default exponent 18 only depth 1 fits a desk budget; ``log N_d`` grows
    like ``(d+1) log(d+1)``.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if multipliers is not None:
        mult = tuple(int(m) for m in multipliers)
        if len(mult) != depth:
            raise ValueError("need one multiplier per level")
        exponent = None
    else:
        mult = tuple(int(math.ceil((d + 1) ** exponent)) for d in range(1, depth + 1))
    total = math.prod(mult)
    if budget is not None and total > budget:
        raise OverflowError(f"N_{depth} = {total} exceeds the length budget {budget}")
    return ScaleLadder(mult, exponent)


# ---------------------------------------------------------------------------
# discrete Cantor structures
# ---------------------------------------------------------------------------

def _check_gaps(gaps: Sequence[float], depth: int) -> tuple[float, ...]:
    g = tuple(float(x) for x in gaps)
    if len(g) != depth:
        raise ValueError("need one gap bound per level")
    if any(a < b for a, b in zip(g[:-1], g[1:])):
        raise ValueError("gap bounds must be nonincreasing")
    return g


def _depth_of(n: int) -> int:
    d = int(round(math.log2(n))) if n > 0 else -1
    if d < 0 or 2**d != n:
        raise ValueError("need 2^d entries")
    return d


def common_prefix(a: int, b: int, depth: int) -> int:
    """Number of leading coordinates on which two indices agree."""
    x = a ^ b
    return depth if x == 0 else depth - x.bit_length()


@dataclass(frozen=True)
class DiscreteCantorSet:
    """Points ``t_omega`` indexed by ``{0,1}^d`` with gap bounds ``D_1 >= ... >= D_d``."""

    values: np.ndarray
    gaps: tuple[float, ...]
    provenance: dict = field(default_factory=dict)
    kind = "set"

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "gaps", _check_gaps(self.gaps, _depth_of(v.size)))

    @property
    def depth(self) -> int:
        return _depth_of(self.values.size)

    @property
    def proper(self) -> bool:
        return np.unique(self.values).size == self.values.size

    def to_dict(self) -> dict:
        return {"kind": "set", "depth": self.depth, "values": self.values.tolist(),
                "gaps": list(self.gaps), "provenance": self.provenance}


@dataclass(frozen=True)
class DiscreteCantorFamily:
    """Closed intervals ``K_omega = [lo, hi]`` indexed by ``{0,1}^d``."""

    intervals: np.ndarray
    gaps: tuple[float, ...]
    provenance: dict = field(default_factory=dict)
    kind = "family"

    def __post_init__(self) -> None:
        iv = np.asarray(self.intervals, dtype=np.float64).reshape(-1, 2)
        if np.any(iv[:, 0] > iv[:, 1]):
            raise ValueError("interval with lo > hi")
        object.__setattr__(self, "intervals", iv)
        object.__setattr__(self, "gaps", _check_gaps(self.gaps, _depth_of(len(iv))))

    @property
    def depth(self) -> int:
        return _depth_of(len(self.intervals))

    @property
    def domain_length(self) -> float:
        return float((self.intervals[:, 1] - self.intervals[:, 0]).sum())

    def pairwise_disjoint(self) -> bool:
        iv = self.intervals[np.argsort(self.intervals[:, 0])]
        return bool(np.all(iv[1:, 0] > iv[:-1, 1]))

    def to_dict(self) -> dict:
        return {"kind": "family", "depth": self.depth, "intervals": self.intervals.tolist(),
                "gaps": list(self.gaps), "provenance": self.provenance}


@dataclass(frozen=True)
class DiscreteCantorMatching:
    """A Cantor family together with a Cantor set of offsets, same depth and gaps."""

    family: DiscreteCantorFamily
    shifts: DiscreteCantorSet
    provenance: dict = field(default_factory=dict)
    kind = "matching"

    def __post_init__(self) -> None:
        if self.family.depth != self.shifts.depth:
            raise ValueError("family and offsets must have equal depth")
        if self.family.gaps != self.shifts.gaps:
            raise ValueError("family and offsets must share gap bounds")

    @property
    def depth(self) -> int:
        return self.family.depth

    @property
    def gaps(self) -> tuple[float, ...]:
        return self.family.gaps

    def to_dict(self) -> dict:
        return {"kind": "matching", "depth": self.depth, "intervals": self.family.intervals.tolist(),
                "values": self.shifts.values.tolist(), "gaps": list(self.gaps),
                "provenance": self.provenance}


CantorStructure = DiscreteCantorSet | DiscreteCantorFamily | DiscreteCantorMatching


def structure_from_dict(rec: dict) -> CantorStructure:
    kind = rec["kind"]
    prov = rec.get("provenance", {})
    if kind == "set":
        return DiscreteCantorSet(np.array(rec["values"]), tuple(rec["gaps"]), prov)
    if kind == "family":
        return DiscreteCantorFamily(np.array(rec["intervals"]), tuple(rec["gaps"]), prov)
    if kind == "matching":
        fam = DiscreteCantorFamily(np.array(rec["intervals"]), tuple(rec["gaps"]))
        return DiscreteCantorMatching(fam, DiscreteCantorSet(np.array(rec["values"]), tuple(rec["gaps"])), prov)
    raise ValueError(f"unknown structure kind {kind!r}")


def dumps_structure(s: CantorStructure) -> str:
    return json.dumps(s.to_dict())


def loads_structure(text: str) -> CantorStructure:
    return structure_from_dict(json.loads(text))


def check_gap_bounds(structure: CantorStructure, D: Sequence[float] | None = None
                     ) -> tuple[bool, tuple[int, int] | None]:
    """Exhaustive pair check of the gap-bound inequalities.

    For indices sharing exactly their first ``i`` coordinates (``i < d``)
    a set needs ``|t - t'| <= D_{i+1}`` and a family needs
    ``diam(K u K') <= D_{i+1}``; a matching needs both.  Returns the first
    violating pair in lexicographic order.
    """
    D = _check_gaps(structure.gaps if D is None else D, structure.depth)
    d = structure.depth
    n = 2**d
    if isinstance(structure, DiscreteCantorMatching):
        ok, bad = check_gap_bounds(structure.family, D)
        ok2, bad2 = check_gap_bounds(structure.shifts, D)
        if ok and ok2:
            return True, None
        cands = [b for b in (bad, bad2) if b is not None]
        return False, min(cands)
    for a in range(n):
        for b in range(a + 1, n):
            bound = D[common_prefix(a, b, d)]
            if isinstance(structure, DiscreteCantorSet):
                gap = abs(structure.values[a] - structure.values[b])
            else:
                iv = structure.intervals
                gap = max(iv[a, 1], iv[b, 1]) - min(iv[a, 0], iv[b, 0])
            if gap > bound:
                return False, (a, b)
    return True, None


def structure_distance(a: CantorStructure, b: CantorStructure) -> float:
    """Sup-norm distance of sets, max Hausdorff distance of families, max of both for matchings."""
    if type(a) is not type(b):
        raise ValueError("structures of different kinds")
    if a.depth != b.depth:
        raise ValueError("structures of different depth")
    if isinstance(a, DiscreteCantorSet):
        return float(np.max(np.abs(a.values - b.values)))
    if isinstance(a, DiscreteCantorFamily):
        return float(np.max(np.abs(a.intervals - b.intervals)))
    return max(structure_distance(a.family, b.family), structure_distance(a.shifts, b.shifts))


_POWERS = {"set": 1, "family": 2, "matching": 3}


def covering_bound_formula(kind: str, L: float, D: Sequence[float], delta: float,
                           enforce_window: bool = True) -> float:
    """``((2L/delta) (2D_1/delta) (2D_2/delta)^2 ... (2D_d/delta)^{2^{d-1}})^p``.

    ``p`` is 1, 2, 3 for sets, families, matchings.  The bound is claimed
    only for ``delta <= D_d/10`` and ``delta <= L/10``; outside that window
    a ``ValueError`` is raised unless ``enforce_window`` is false.
    """
    if kind not in _POWERS:
        raise ValueError(f"unknown kind {kind!r}")
    D = _check_gaps(D, len(D))
    if delta <= 0:
        raise ValueError("delta must be positive")
    if enforce_window and (delta > D[-1] / 10 or delta > L / 10):
        raise ValueError("delta outside the validity window (delta <= D_d/10, L/10)")
    with np.errstate(over="ignore"):
        b = np.float64(2 * L / delta)
        for i, Di in enumerate(D):
            for _ in range(2**i):
                b *= np.float64(2 * Di / delta)
        b = b ** _POWERS[kind]
    return float(b)


def enumerate_dcs_integer(K: tuple[int, int], D: Sequence[int], depth: int | None = None,
                          budget: int = ENUM_BUDGET, return_list: bool = False):
    """All integer-valued discrete Cantor sets in ``K = [a; b]`` with gap bounds ``D``.

    The search is a depth-first fill of ``t_0, t_1, ...`` that keeps only
    values consistent with every earlier coordinate.  The naive space size
    ``|K|^(2^depth)`` must not exceed ``budget``.  Returns the count, or the
    list of tuples when ``return_list`` is set.
    """
    a, b = int(K[0]), int(K[1])
    if b < a:
        raise ValueError("empty interval")
    depth = len(D) if depth is None else depth
    if depth < 1 or depth > 3 or len(D) != depth:
        raise ValueError("depth must be 1..3 with one bound per level")
    D = [int(x) for x in D]
    if any(x < y for x, y in zip(D[:-1], D[1:])):
        raise ValueError("gap bounds must be nonincreasing")
    size = b - a + 1
    if size ** (2**depth) > budget:
        raise ValueError(f"enumeration of {size}^{2**depth} tuples exceeds the budget {budget}")
    n = 2**depth
    vals = [0] * n
    out: list[tuple[int, ...]] = []
    count = 0

    def rec(j: int) -> None:
        nonlocal count
        if j == n:
            count += 1
            if return_list:
                out.append(tuple(vals))
            return
        lo, hi = a, b
        for i in range(j):
            g = D[common_prefix(i, j, depth)]
            lo, hi = max(lo, vals[i] - g), min(hi, vals[i] + g)
        for v in range(lo, hi + 1):
            vals[j] = v
            rec(j + 1)

    rec(0)
    return out if return_list else count


# ---------------------------------------------------------------------------
# meandering
# ---------------------------------------------------------------------------

def block_hulls(sums: np.ndarray, start: int, L: int, M: int) -> np.ndarray:
    """``(L, 2)`` array of ``[min, max]`` of ``sums`` over consecutive length-``M`` blocks."""
    seg = np.asarray(sums, dtype=np.float64)[start : start + L * M]
    if seg.size != L * M:
        raise ValueError("sums do not cover the interval")
    seg = seg.reshape(L, M)
    return np.stack([seg.min(axis=1), seg.max(axis=1)], axis=1)


def max_stabbing(intervals: np.ndarray) -> int:
    """Largest number of closed intervals sharing a point (endpoint sweep)."""
    iv = np.asarray(intervals, dtype=np.float64).reshape(-1, 2)
    if iv.size == 0:
        return 0
    # opening events sort before closing events at equal coordinates
    events = sorted([(lo, 0) for lo in iv[:, 0]] + [(hi, 1) for hi in iv[:, 1]])
    cur = best = 0
    for _, kind in events:
        if kind == 0:
            cur += 1
            best = max(best, cur)
        else:
            cur -= 1
    return best


def _needed(alpha: float, L: int) -> int:
    return max(int(math.ceil(alpha * L - 1e-12)), 0)


def is_meandering(sums: np.ndarray, start: int, L: int, M: int, alpha: float, ell: float) -> bool:
    """``(alpha, ell)``-meandering of ``sums`` over ``L`` blocks of length ``M`` from ``start``.

    Pairwise non-separated blocks have pairwise intersecting fattened hulls,
    and pairwise intersecting intervals share a point, so meandering fails
    exactly when some point lies in at least ``ceil(alpha L)`` fattened hulls.
    """
    if L < 1 or M < 1:
        raise ValueError("need L, M >= 1")
    need = _needed(alpha, L)
    if need > L:
        return True
    hulls = block_hulls(sums, start, L, M)
    fat = hulls + np.array([-ell, ell])
    return max_stabbing(fat) < need


def _set_distance(u: np.ndarray, v: np.ndarray) -> float:
    u, v = np.sort(u), np.sort(v)
    idx = np.searchsorted(v, u)
    best = math.inf
    for i, x in zip(idx, u):
        if i < v.size:
            best = min(best, v[i] - x)
        if i > 0:
            best = min(best, x - v[i - 1])
    return float(best)


def is_meandering_bruteforce(sums: np.ndarray, start: int, L: int, M: int, alpha: float, ell: float) -> bool:
    """Direct check of the subfamily quantifier over all subsets (``L <= 12``)."""
    if L > 12:
        raise ValueError("brute force limited to L <= 12")
    seg = np.asarray(sums, dtype=np.float64)[start : start + L * M].reshape(L, M)
    sep = np.zeros((L, L), dtype=bool)
    for i in range(L):
        for j in range(i + 1, L):
            sep[i, j] = sep[j, i] = _set_distance(seg[i], seg[j]) > 2 * ell
    for size in range(L + 1):
        if size < alpha * L - 1e-12:
            continue
        for sub in itertools.combinations(range(L), size):
            if not any(sep[i, j] for i, j in itertools.combinations(sub, 2)):
                return False
    return True


def _wilson(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(mid - half, 0.0), min(mid + half, 1.0)


def meandering_frequency(system: MarkovSystem, cocycle: FiniteRangeCocycle, M: int, L: int,
                         alpha: float | Sequence[float], samples: int, seed: int = 0,
                         ell: float | None = None) -> Estimate | list[Estimate]:
    """Monte Carlo frequency of meandering over ``[0; LM)`` with Wilson intervals.

    Several ``alpha`` values share one sample of trajectories.
    """
    ell = max(cocycle.sup_norm, 1.0) if ell is None else float(ell)
    scalar = np.ndim(alpha) == 0
    alphas = [float(alpha)] if scalar else [float(a) for a in alpha]
    stab = []
    for blk in iter_forward_sums(system, cocycle, L * M, samples, seed, stream="meander"):
        seg = blk[:, : L * M].reshape(-1, L, M)
        lo, hi = seg.min(axis=2) - ell, seg.max(axis=2) + ell
        for a_row, b_row in zip(lo, hi):
            stab.append(max_stabbing(np.stack([a_row, b_row], axis=1)))
    stab = np.array(stab)
    out = []
    for a in alphas:
        need = _needed(a, L)
        k = samples if need > L else int(np.count_nonzero(stab < need))
        out.append(Estimate(f"meander(L={L},alpha={a:g})", k / samples, _wilson(k, samples), (),
                            {"L": L, "M": M, "alpha": a, "ell": ell}))
    return out[0] if scalar else out


# ---------------------------------------------------------------------------
# good-time sets
# ---------------------------------------------------------------------------

def _tri_cdf(u: np.ndarray, l: float) -> np.ndarray:
    """CDF of the triangular density ``max(0, 1 - |u|/l)/l``."""
    u = np.clip(np.asarray(u, dtype=np.float64) / l, -1.0, 1.0)
    return np.where(u < 0, 0.5 * (1 + u) ** 2, 1 - 0.5 * (1 - u) ** 2)


def smoothed_mass(values: np.ndarray, ell: float, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Mass of ``[lo_k, hi_k]`` under the mollified occupation measure of ``values``."""
    atoms, counts = np.unique(np.asarray(values, dtype=np.float64), return_counts=True)
    w = counts / counts.sum()
    lo, hi = np.atleast_1d(lo), np.atleast_1d(hi)
    return (w[None, :] * (_tri_cdf(hi[:, None] - atoms[None, :], ell)
                          - _tri_cdf(lo[:, None] - atoms[None, :], ell))).sum(axis=1)


def is_smooth(values: np.ndarray, ell: float, M: float, eps: float, grid_step: float | None = None) -> bool:
    """Grid test of ``phi * gamma ~_{M,eps} U(B_ell(range))`` in both directions."""
    v = np.asarray(values, dtype=np.float64)
    a, b = v.min() - ell, v.max() + ell
    h = ell / 4 if grid_step is None else grid_step
    n = max(int(math.ceil((b - a) / h)), 1)
    edges = np.linspace(a, b, n + 1)
    p = smoothed_mass(v, ell, edges[:-1], edges[1:])
    q = np.diff(edges) / (b - a)
    return approx_abs_continuity(p, q, M, eps)[0] and approx_abs_continuity(q, p, M, eps)[0]


def is_spread(values: np.ndarray, ell: float) -> bool:
    """``[v_0 - n^{1/3}, v_0 + n^{1/3}]`` inside the open ``ell``-neighbourhood of the values."""
    v = np.asarray(values, dtype=np.float64)
    w = v.size ** (1.0 / 3.0)
    return bool(v[0] - w > v.min() - ell and v[0] + w < v.max() + ell)


@dataclass(frozen=True)
class GoodTimeSets:
    """Boolean masks over ``Q = [0; N_d)``."""

    mndr: dict[int, np.ndarray]
    mndr_all: np.ndarray
    spread: np.ndarray
    smooth: np.ndarray

    @property
    def combined(self) -> np.ndarray:
        return self.mndr_all & self.spread & self.smooth

    def fraction(self) -> float:
        return float(self.combined.mean())


def good_time_sets(sums: np.ndarray, ladder: ScaleLadder, r: int, d: int, ell: float,
                   M: float = 8.0, eps: float = 0.1, grid_step: float | None = None) -> GoodTimeSets:
    """The meandering, spread and smooth time sets inside ``Q = [0; N_d)``.

    ``H^mndr_s`` marks the ``D_s`` cells over which the trajectory is
    ``(alpha_s, ell)``-meandering relative to their ``D_{s-1}`` sub-blocks;
    ``H^spread`` and ``H^smooth`` mark the ``D_r`` cells passing the
    corresponding tests.  Each mask is a union of whole cells.
    """
    if not 1 <= r <= d <= ladder.depth:
        raise ValueError("need 1 <= r <= d <= ladder depth")
    Nd = ladder.N(d)
    s_arr = np.asarray(sums, dtype=np.float64)
    if s_arr.size < Nd:
        raise ValueError("sums do not cover the top-level block")
    s_arr = s_arr[:Nd]
    mndr = {}
    all_m = np.ones(Nd, dtype=bool)
    for s in range(r + 1, d + 1):
        Ns, Ls, Nsub = ladder.N(s), ladder.L(s), ladder.N(s - 1)
        mask = np.zeros(Nd, dtype=bool)
        for c in range(Nd // Ns):
            if is_meandering(s_arr, c * Ns, Ls, Nsub, ladder.alpha(s), ell):
                mask[c * Ns : (c + 1) * Ns] = True
        mndr[s] = mask
        all_m &= mask
    Nr = ladder.N(r)
    spread = np.zeros(Nd, dtype=bool)
    smooth = np.zeros(Nd, dtype=bool)
    for c in range(Nd // Nr):
        seg = s_arr[c * Nr : (c + 1) * Nr]
        spread[c * Nr : (c + 1) * Nr] = is_spread(seg, ell)
        smooth[c * Nr : (c + 1) * Nr] = is_smooth(seg, ell, M, eps, grid_step)
    return GoodTimeSets(mndr, all_m, spread, smooth)


# ---------------------------------------------------------------------------
# adapted Cantor families
# ---------------------------------------------------------------------------

def _hull(s_arr: np.ndarray, lo: int, hi: int) -> tuple[float, float]:
    seg = s_arr[lo:hi]
    return float(seg.min()), float(seg.max())


def _separated(h1: tuple[float, float], h2: tuple[float, float], ell: float) -> bool:
    return h2[0] - h1[1] > 2 * ell or h1[0] - h2[1] > 2 * ell


@dataclass(frozen=True)
class FamilyResult:
    """Outcome of :func:`find_adapted_family`.

    ``blocks`` lists the ``D_r`` block numbers in ``omega`` order.
    """

    success: bool
    blocks: list[int]
    family: DiscreteCantorFamily | None
    best_effort: bool
    failed_scale: int | None = None
    precondition: dict = field(default_factory=dict)


def find_adapted_family(J: Iterable[int], sums: np.ndarray, ladder: ScaleLadder, r: int, d: int,
                        ell: float, mndr_mask: np.ndarray | None = None) -> FamilyResult:
    """Search for a Cantor family of ``D_r`` blocks from ``J`` with separated images.

    Recursion over scales: at scale ``s`` keep the ``D_{s-1}`` cells that
    still hold a ``(1 - kappa_{r,s-1})`` share of their ``D_r`` blocks in
    ``J``, pick two of them with separated images (lower indices first) and
    recurse into both.  At ``s = r + 1`` the two chosen cells are blocks of
    ``J`` themselves.  Pairs whose recursion fails are skipped.
    """
    if not 1 <= r < d <= ladder.depth:
        raise ValueError("need 1 <= r < d <= ladder depth")
    s_arr = np.asarray(sums, dtype=np.float64)
    Nd, Nr = ladder.N(d), ladder.N(r)
    if s_arr.size < Nd:
        raise ValueError("sums do not cover the top-level block")
    Jset = sorted(set(int(j) for j in J))
    if any(j < 0 or j >= Nd // Nr for j in Jset):
        raise ValueError("block index outside Q")
    need = (1 - ladder.kappa(r, d)) * Nd / Nr
    pre = {"size": len(Jset), "required": need, "size_ok": len(Jset) >= need}
    if mndr_mask is not None:
        mm = np.asarray(mndr_mask, dtype=bool)
        pre["mndr_ok"] = all(mm[j * Nr : (j + 1) * Nr].all() for j in Jset)
    best_effort = not all(v for k, v in pre.items() if k.endswith("_ok"))
    Jmask = np.zeros(Nd // Nr, dtype=bool)
    Jmask[Jset] = True
    stuck: list[int] = []

    def rec(s: int, cell: int) -> list[int] | None:
        # cell is a D_s cell index; returns D_r block numbers in omega order
        Ns, Nsub = ladder.N(s), ladder.N(s - 1)
        per = Nsub // Nr
        subs = range(cell * (Ns // Nsub), (cell + 1) * (Ns // Nsub))
        if s == r + 1:
            cand = [c for c in subs if Jmask[c]]
        else:
            thr = (1 - ladder.kappa(r, s - 1)) * Nsub / Nr
            cand = [c for c in subs if Jmask[c * per : (c + 1) * per].sum() >= thr - 1e-9]
        hulls = {c: _hull(s_arr, c * Nsub, (c + 1) * Nsub) for c in cand}
        for i, a in enumerate(cand):
            for b in cand[i + 1 :]:
                if not _separated(hulls[a], hulls[b], ell):
                    continue
                if s == r + 1:
                    return [a, b]
                left = rec(s - 1, a)
                if left is None:
                    continue
                right = rec(s - 1, b)
                if right is None:
                    continue
                return left + right
        stuck.append(s)
        return None

    blocks = rec(d, 0)
    if blocks is None:
        # the top call always fails last; a lower scale is reported when some
        # candidate pair at that scale had no workable sub-pair
        scale = min(stuck) if stuck else d
        return FamilyResult(False, [], None, best_effort, scale, pre)
    fam = block_family(blocks, ladder, r, d)
    res = FamilyResult(True, blocks, fam, best_effort, None, pre)
    ok, why = verify_adapted_family(blocks, sums, ladder, r, d, ell, Jset)
    if not ok:
        raise AssertionError(f"search returned an invalid family: {why}")
    return res


def block_family(blocks: Sequence[int], ladder: ScaleLadder, r: int, d: int) -> DiscreteCantorFamily:
    """Time intervals ``[b N_r, (b+1) N_r - 1]`` with gap bounds ``N_d, ..., N_{r+1}``."""
    Nr = ladder.N(r)
    iv = np.array([[b * Nr, (b + 1) * Nr - 1] for b in blocks], dtype=np.float64)
    gaps = tuple(float(ladder.N(d - i)) for i in range(d - r))
    return DiscreteCantorFamily(iv, gaps, {"r": r, "d": d, "blocks": list(map(int, blocks))})


def verify_adapted_family(blocks: Sequence[int], sums: np.ndarray, ladder: ScaleLadder, r: int, d: int,
                          ell: float, J: Iterable[int] | None = None) -> tuple[bool, str]:
    """Independent check of membership, adaptedness and separated images."""
    depth = d - r
    blocks = [int(b) for b in blocks]
    if len(blocks) != 2**depth:
        return False, "wrong number of blocks"
    if J is not None and not set(blocks) <= set(int(j) for j in J):
        return False, "block outside J"
    Nr = ladder.N(r)
    starts = [b * Nr for b in blocks]
    for w1 in range(2**depth):
        for w2 in range(2**depth):
            if w1 == w2:
                continue
            for s in range(0, depth + 1):
                bits1 = [(w1 >> (depth - 1 - k)) & 1 for k in range(depth)]
                bits2 = [(w2 >> (depth - 1 - k)) & 1 for k in range(depth)]
                cell1 = starts[w1] // ladder.N(d - s)
                cell2 = starts[w2] // ladder.N(d - s)
                agree = bits1[:s] == bits2[:s]
                if agree and cell1 != cell2:
                    return False, f"indices {w1},{w2} agree to level {s} but lie in different cells"
                if s >= 1 and bits1[s - 1] != bits2[s - 1] and cell1 == cell2:
                    return False, f"indices {w1},{w2} differ at level {s} but share a cell"
    s_arr = np.asarray(sums, dtype=np.float64)
    vals = [s_arr[st : st + Nr] for st in starts]
    for i in range(len(vals)):
        for j in range(i + 1, len(vals)):
            if _set_distance(vals[i], vals[j]) <= 2 * ell:
                return False, f"images of {i} and {j} are not separated"
    fam = block_family(blocks, ladder, r, d)
    ok, bad = check_gap_bounds(fam)
    if not ok:
        return False, f"gap bound violated at {bad}"
    if not fam.pairwise_disjoint():
        return False, "blocks overlap"
    return True, ""


# ---------------------------------------------------------------------------
# covering the range with families
# ---------------------------------------------------------------------------

def _union_length(intervals: Sequence[tuple[float, float]]) -> float:
    tot, cur_lo, cur_hi = 0.0, None, None
    for lo, hi in sorted(intervals):
        if cur_hi is None or lo > cur_hi:
            if cur_hi is not None:
                tot += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    if cur_hi is not None:
        tot += cur_hi - cur_lo
    return tot


def _merge(intervals: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    out: list[list[float]] = []
    for lo, hi in sorted(intervals):
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return [(a, b) for a, b in out]


def _complement(base: tuple[float, float], covered: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    lo, hi = base
    out = []
    cur = lo
    for a, b in _merge(covered):
        if b <= cur:
            continue
        if a >= hi:
            break
        if a > cur:
            out.append((cur, min(a, hi)))
        cur = max(cur, b)
    if cur < hi:
        out.append((cur, hi))
    return out


@dataclass(frozen=True)
class CoverResult:
    families: list[list[int]]
    residual: float
    range_length: float
    success: bool
    stalled: bool
    properties: dict
    good_blocks: list[int]
    best_effort: bool = False


GOOD_FILTERS = ("mndr", "spread", "smooth")


def cover_with_families(sums: np.ndarray, ladder: ScaleLadder, r: int, d: int, ell: float, eta: float,
                        good_blocks: Iterable[int] | None = None, M1: float = 4.0, M2: float = 8.0,
                        eps2: float = 0.1, P: np.ndarray | None = None,
                        filters: Sequence[str] = GOOD_FILTERS, max_families: int = 10_000,
                        grid_step: float | None = None) -> CoverResult:
    """Collect adapted families until their images cover all but ``eta`` of the range.

    The good blocks are the ``D_r`` cells contained in ``P`` and in every
    good-time set.  Each round keeps the good blocks whose mollified
    occupation measure gives more than ``eta / (8 M1)`` to the uncovered
    part of the range, and extracts one family from them.  Stops with
    ``success`` when the uncovered length is at most ``eta`` times the range
    length, or with ``stalled`` when no family can be found.

    ``good_blocks`` replaces the good-time computation by an explicit block
    list.  ``filters`` selects which good-time sets are imposed; dropping
    some of them gives a best-effort run outside the asymptotic regime.
    """
    Nd, Nr = ladder.N(d), ladder.N(r)
    s_arr = np.asarray(sums, dtype=np.float64)[:Nd]
    if any(f not in GOOD_FILTERS for f in filters):
        raise ValueError(f"filters must be drawn from {GOOD_FILTERS}")
    gts = good_time_sets(s_arr, ladder, r, d, ell, M2, eps2, grid_step)
    ok_mask = np.ones(Nd, dtype=bool)
    if good_blocks is None:
        for name, mask in (("mndr", gts.mndr_all), ("spread", gts.spread), ("smooth", gts.smooth)):
            if name in filters:
                ok_mask &= mask
    else:
        ok_mask[:] = False
        for c in good_blocks:
            ok_mask[int(c) * Nr : (int(c) + 1) * Nr] = True
    if P is not None:
        ok_mask &= np.asarray(P, dtype=bool)[:Nd]
    J = [c for c in range(Nd // Nr) if ok_mask[c * Nr : (c + 1) * Nr].all()]
    rng_iv = (float(s_arr.min()) - ell, float(s_arr.max()) + ell)
    rng_len = rng_iv[1] - rng_iv[0]
    covered: list[tuple[float, float]] = []
    families: list[list[int]] = []
    stalled = False
    thr = eta / (8 * M1)
    while True:
        gaps_left = _complement(rng_iv, covered)
        residual = sum(b - a for a, b in gaps_left)
        if residual <= eta * rng_len + 1e-12 or len(families) >= max_families:
            break
        if gaps_left:
            lo = np.array([a for a, _ in gaps_left])
            hi = np.array([b for _, b in gaps_left])
            Jp = [c for c in J if smoothed_mass(s_arr[c * Nr : (c + 1) * Nr], ell, lo, hi).sum() > thr]
        else:
            Jp = []
        res = find_adapted_family(Jp, s_arr, ladder, r, d, ell, gts.mndr_all)
        if not res.success:
            stalled = True
            break
        new = [(_hull(s_arr, b * Nr, (b + 1) * Nr)[0] - ell, _hull(s_arr, b * Nr, (b + 1) * Nr)[1] + ell)
               for b in res.blocks]
        if _union_length(covered + new) <= _union_length(covered) + 1e-12:
            stalled = True
            break
        covered.extend(new)
        families.append(res.blocks)
    residual = sum(b - a for a, b in _complement(rng_iv, covered))
    success = residual <= eta * rng_len + 1e-12 and not stalled
    M = 16 * M1 * M2 / eta
    props = verify_cover(families, s_arr, ladder, r, d, ell, eta, M, P)
    best_effort = good_blocks is not None or set(filters) != set(GOOD_FILTERS)
    return CoverResult(families, residual, rng_len, success, stalled, props, J, best_effort)


def verify_cover(families: Sequence[Sequence[int]], sums: np.ndarray, ladder: ScaleLadder, r: int, d: int,
                 ell: float, eta: float, M: float, P: np.ndarray | None = None) -> dict:
    """Recompute the four cover properties and adaptedness from scratch."""
    Nd, Nr = ladder.N(d), ladder.N(r)
    s_arr = np.asarray(sums, dtype=np.float64)[:Nd]
    rng = (float(s_arr.min()) - ell, float(s_arr.max()) + ell)
    rng_len = rng[1] - rng[0]
    spread_ok = True
    sep_ok = True
    adapted_ok = True
    in_P = True
    total = 0.0
    images = []
    w = Nr ** (1.0 / 3.0)
    for fam in families:
        ok, _ = verify_adapted_family(fam, s_arr, ladder, r, d, ell)
        adapted_ok &= ok
        for b in fam:
            seg = s_arr[b * Nr : (b + 1) * Nr]
            lo, hi = seg.min() - ell, seg.max() + ell
            images.append((lo, hi))
            total += hi - lo
            if not (seg[0] - w > lo and seg[0] + w < hi):
                spread_ok = False
            if P is not None and not np.asarray(P, dtype=bool)[b * Nr : (b + 1) * Nr].all():
                in_P = False
        for i, a in enumerate(fam):
            for b in fam[i + 1 :]:
                if _set_distance(s_arr[a * Nr : (a + 1) * Nr], s_arr[b * Nr : (b + 1) * Nr]) <= 2 * ell:
                    sep_ok = False
    residual = rng_len - _union_length([(max(a, rng[0]), min(b, rng[1])) for a, b in images])
    return {
        "spread": bool(spread_ok),
        "separated": bool(sep_ok),
        "adapted": bool(adapted_ok),
        "inside_P": bool(in_P),
        "residual": float(residual),
        "residual_ok": bool(residual <= eta * rng_len + 1e-12),
        "efficiency": float(total / rng_len) if rng_len > 0 else math.inf,
        "efficiency_bound": float(M),
        "efficiency_ok": bool(total <= M * rng_len),
    }


# ---------------------------------------------------------------------------
# scenery matchings
# ---------------------------------------------------------------------------

def _colour(sample, site: int, sentinel: int) -> int:
    j = site - sample.scenery_start
    if 0 <= j < sample.scenery.size:
        return int(sample.scenery[j])
    return sentinel


def _site(value: float, w: float) -> int:
    return int(np.rint(value / w))


def agreement_set(sample_a, sample_b, N: int, depth: int, radius: int, ell: float) -> np.ndarray:
    """Times ``n`` in ``[0; N)`` where both coordinates agree exactly.

    Base symbols must agree on ``[n - depth, n + depth]`` and the sceneries
    must agree on ``radius + ceil(ell/w) + 1`` sites around the two walkers,
    so that agreement persists across every ``ell``-neighbourhood of an image.
    """
    w = sample_a.cell_width
    rad = radius + int(math.ceil(ell / w)) + 1
    out = np.zeros(N, dtype=bool)
    for n in range(N):
        try:
            same = all(sample_a.symbol(n + k) == sample_b.symbol(n + k) for k in range(-depth, depth + 1))
        except IndexError:
            same = False
        if not same:
            continue
        s, t = sample_a.site(n), sample_b.site(n)
        out[n] = all(_colour(sample_a, s + j, -1) == _colour(sample_b, t + j, -2) for j in range(-rad, rad + 1))
    return out


def scenery_agrees(sample_a, sample_b, interval: tuple[float, float], u: float, radius: int) -> bool:
    """Check ``d^X(T^z x, T^{z+u} x') = 0`` for every ``z`` in the open interval.

    The fibre distance compares the colour windows of radius ``radius``
    around ``site(z)`` and ``site(z + u)``.  Both site maps are piecewise
    constant, so it suffices to test one point in every piece and every
    breakpoint inside the interval.
    """
    w = sample_a.cell_width
    lo, hi = interval
    k0, k1 = int(math.floor(lo / w)) - 1, int(math.ceil(hi / w)) + 1
    bps = [(k + 0.5) * w for k in range(k0, k1 + 1)] + [(k + 0.5) * w - u for k in range(k0 - 2, k1 + 3)]
    bps = sorted(b for b in set(bps) if lo < b < hi)
    pts = list(bps)
    edges = [lo] + bps + [hi]
    pts += [(a + b) / 2 for a, b in zip(edges[:-1], edges[1:])]
    for z in pts:
        s, t = _site(z, w), _site(z + u, w)
        for j in range(-radius, radius + 1):
            if _colour(sample_a, s + j, -1) != _colour(sample_b, t + j, -2):
                return False
    return True


@dataclass(frozen=True)
class MatchingResult:
    matchings: list[DiscreteCantorMatching]
    success: bool
    report: dict
    cover: CoverResult | None = None


def extract_matchings(sample_a, sample_b, ladder: ScaleLadder, r: int, d: int, ell: float, eta: float,
                      delta: float, depth: int = 16, radius: int = 0, M1: float = 4.0, M2: float = 8.0,
                      eps2: float = 0.1, filters: Sequence[str] = GOOD_FILTERS,
                      pad: bool = False) -> MatchingResult:
    """Matchings ``(B_ell(sigma^y_{Q_w}), sigma^{y'}_{min Q_w} - sigma^y_{min Q_w})`` over ``[0; N_d)``.

    Builds the exact-agreement set ``P``, covers the range of ``sample_a``'s
    trajectory with families of blocks inside ``P``, and returns one
    matching per family together with a report of the closeness
    precondition and of properties (P1)-(P3).  Gap bounds are
    ``4 ell (N_d, ..., N_{r+1})``.
    """
    from .procgen import skew_distance

    Nd, Nr = ladder.N(d), ladder.N(r)
    if sample_a.N < Nd or sample_b.N < Nd:
        raise ValueError("samples shorter than N_d")
    dist = skew_distance(sample_a, sample_b, (0, Nd), depth=depth, radius=radius)
    sig_a = np.array([sample_a.sigma(n) for n in range(Nd + 1)])
    sig_b = np.array([sample_b.sigma(n) for n in range(Nd + 1)])
    traj_gap = float(np.max(np.abs(sig_a - sig_b)) / math.sqrt(Nd))
    report: dict = {"distance": dist, "distance_ok": dist <= delta * Nd,
                    "traj_gap": traj_gap, "traj_ok": traj_gap < 2 * eta}
    P = agreement_set(sample_a, sample_b, Nd, depth, radius, ell)
    report["P_fraction"] = float(P.mean())
    if not P.any():
        return MatchingResult([], False, {**report, "error": "empty agreement set"})
    cover = cover_with_families(sig_a[:Nd], ladder, r, d, ell, eta, None, M1, M2, eps2, P=P,
                                filters=filters)
    gaps = tuple(4 * ell * ladder.N(d - i) for i in range(d - r))
    matchings = []
    for fam in cover.families:
        iv, us = [], []
        for b in fam:
            t0 = b * Nr
            seg = sig_a[t0 : t0 + Nr]
            iv.append((seg.min() - ell, seg.max() + ell))
            us.append(sig_b[t0] - sig_a[t0])
        matchings.append(DiscreteCantorMatching(DiscreteCantorFamily(np.array(iv), gaps),
                                                DiscreteCantorSet(np.array(us), gaps),
                                                {"blocks": list(map(int, fam)), "r": r, "d": d}))
    J_iv = (float(sig_a[:Nd].min()) - eta * math.sqrt(Nd), float(sig_a[:Nd].max()) + eta * math.sqrt(Nd))
    J_len = J_iv[1] - J_iv[0]
    M = 16 * M1 * M2 / eta
    m_cap = M * J_len / (2 ** (d - r) * Nr ** (1.0 / 3.0))
    if pad and matchings and len(matchings) < math.floor(m_cap):
        matchings = matchings + [matchings[-1]] * (math.floor(m_cap) - len(matchings))
    report.update(verify_matchings(matchings, sample_a, sample_b, Nd, ell, eta, radius, J_iv))
    report.update({"count": len(matchings), "count_bound": m_cap, "count_ok": len(matchings) <= m_cap,
                   "cover_success": cover.success, "cover": cover.properties})
    success = cover.success and all(report[k] for k in ("P1", "P2", "P3", "gaps_ok"))
    return MatchingResult(matchings, success, report, cover)


def verify_matchings(matchings: Sequence[DiscreteCantorMatching], sample_a, sample_b, Nd: int, ell: float,
                     eta: float, radius: int, J_iv: tuple[float, float]) -> dict:
    """Independent check of (P1)-(P3), the gap bounds and disjointness."""
    p1 = all(np.all(np.abs(m.shifts.values) < 2 * eta * math.sqrt(Nd)) for m in matchings)
    gaps_ok = all(check_gap_bounds(m)[0] and m.family.pairwise_disjoint() for m in matchings)
    ivs = [tuple(iv) for m in matchings for iv in m.family.intervals]
    J_len = J_iv[1] - J_iv[0]
    uncovered = J_len - _union_length([(max(a, J_iv[0]), min(b, J_iv[1])) for a, b in ivs])
    p2 = uncovered < eta * J_len + 4 * eta * math.sqrt(Nd)
    p3 = all(scenery_agrees(sample_a, sample_b, tuple(iv), float(u), radius)
             for m in matchings for iv, u in zip(m.family.intervals, m.shifts.values))
    return {"P1": bool(p1), "P2": bool(p2), "P3": bool(p3), "gaps_ok": bool(gaps_ok),
            "uncovered": float(uncovered)}
