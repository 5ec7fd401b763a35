"""Bi-covering profile estimation by a two-player competition.

Min-er picks a reweighting ``mu'`` of the sample with ``dmu'/dmu <= alpha``;
Max-er answers with a subset ``U`` of ``mu'``-mass at least ``kappa``; the
payoff is the subspace bi-covering number of ``U`` at radius ``delta``,
with target mass ``kappa'`` measured as absolute ``mu'`` mass inside ``U``.
The profile is ``min_{mu'} max_U`` of the payoff.  Outer loops run over
finite strategy menus; exact enumeration is available on tiny spaces.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from . import brownlab
from .infotools import factorize, join_labels
from .pairspace import (MASS_TOL, CoverWitness, SampledPairSpace, _near, bi_neighbourhood,
                        bi_neighbourhood_matrix, bicov_partial)
from .procgen import (MetricConfig, ProcessModel, RwrsBatch, SceneryModel, build_markov_system,
                      sample_pair_space, stream_rng, traj_rescale)

DENSITY_TOL = 1e-9
EXHAUSTIVE_MAXER = 12
EXACT_PROFILE_LIMIT = 12
MAXER_STRATEGIES = ("full", "resistant", "random")


@dataclass(frozen=True)
class CompetitionConfig:
    """Parameters of the competition.

    ``delta`` is an absolute radius here; :func:`rate_curve` reads it per
    time step and multiplies by ``N``.
    """

    alpha: float = 2.0
    kappa: float = 0.5
    kappa_prime: float = 0.25
    delta: float = 0.1
    miner: str = "proof"  # "original" | "proof" | "exhaustive"
    maxer: str = "auto"  # "auto" | "exhaustive" | one of MAXER_STRATEGIES | "all"
    miner_budget: int = 8
    restarts: int = 4
    exact_inner: bool = False
    box: float = 1.0
    typical_eps: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.alpha < 1:
            raise ValueError("alpha must be at least 1")
        if not 0 < self.kappa_prime < self.kappa <= 1:
            raise ValueError("need 0 < kappa' < kappa <= 1")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.miner_budget < 1 or self.restarts < 0:
            raise ValueError("budgets must be positive")
        if self.miner not in ("original", "proof", "exhaustive"):
            raise ValueError(f"unknown Min-er strategy {self.miner!r}")
        if self.maxer not in ("auto", "exhaustive", "all") + MAXER_STRATEGIES:
            raise ValueError(f"unknown Max-er strategy {self.maxer!r}")


@dataclass(frozen=True)
class MinerCandidate:
    name: str
    weights: np.ndarray


@dataclass(frozen=True)
class BicovProfileResult:
    value: int
    weights: np.ndarray
    subset: np.ndarray
    witness: CoverWitness
    provenance: dict = field(default_factory=dict)
    exact: bool = False

    def verify(self, space: SampledPairSpace, config: CompetitionConfig) -> tuple[bool, str]:
        """Re-check density bound, ``mu'(U) >= kappa`` and the witness cover."""
        w, w0 = self.weights, space.weights
        if abs(w.sum() - 1) > 1e-9:
            return False, "weights do not sum to one"
        if not density_ok(w0, w, config.alpha):
            return False, "density bound violated"
        if w[self.subset].sum() < config.kappa - DENSITY_TOL:
            return False, "subset too light"
        if len(self.witness.centers) != self.value:
            return False, "witness size differs from value"
        cov = bi_neighbourhood(space, self.witness.centers, config.delta, within=self.subset)
        if w[cov].sum() <= config.kappa_prime + MASS_TOL:
            return False, "witness does not cover kappa'"
        return True, ""


def density_ok(base: np.ndarray, new: np.ndarray, alpha: float) -> bool:
    """Entrywise ``new <= alpha * base`` (so ``new`` vanishes where ``base`` does)."""
    return bool(np.all(new <= alpha * base + DENSITY_TOL))


def _conditional(w: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.where(mask, w, 0.0)
    return out / out.sum()


# ---------------------------------------------------------------------------
# proof-guided classes of sample points
# ---------------------------------------------------------------------------

def trajectory_classes(batch: RwrsBatch, N: int, box: float = 1.0,
                       times: Sequence[float] = (0.25, 0.5, 0.75, 1.0), scale: float = 1.0) -> np.ndarray:
    """Label points by the grid box holding their rescaled past and future paths."""
    t = np.asarray(times, dtype=np.float64)
    fw = traj_rescale(batch.sums, N, "forward", t, zero_index=batch.N)
    bw = traj_rescale(batch.sums, N, "backward", t, zero_index=batch.N)
    keys = np.floor(np.concatenate([fw, bw], axis=1) / (box * scale)).astype(np.int64)
    return factorize(keys)[0]


def _scenery_logprob(colours: np.ndarray, model: SceneryModel) -> float:
    if model.kind == "iid":
        p = np.asarray(model.probs, dtype=np.float64)
        with np.errstate(divide="ignore"):
            return float(np.log(p[colours]).sum())
    sysm = build_markov_system(model.transitions)
    with np.errstate(divide="ignore"):
        lp = math.log(sysm.stationary[colours[0]])
        return lp + float(np.log(sysm.transitions[colours[:-1], colours[1:]]).sum())


def scenery_classes(batch: RwrsBatch, model: SceneryModel, eps: float = 0.1) -> np.ndarray:
    """1 for points whose visited scenery is Shannon-McMillan typical, else 0.

    The visited stretch is the block of sites between the extreme walker
    positions over ``[-N, N]``; typical means ``|-log P / length - h| <= eps``.
    """
    h = model.entropy
    out = np.zeros(len(batch), dtype=np.int64)
    sites = batch.sites(-batch.N, batch.N + 1)
    for i in range(len(batch)):
        lo, hi = int(sites[i].min()), int(sites[i].max())
        seg = batch.sceneries[i, lo - batch.scenery_start : hi - batch.scenery_start + 1].astype(np.int64)
        rate = -_scenery_logprob(seg, model) / seg.size
        out[i] = int(abs(rate - h) <= eps)
    return out


def process_classes(batch: RwrsBatch, process: ProcessModel, N: int, box: float = 1.0,
                    eps: float = 0.1) -> dict[str, np.ndarray]:
    traj = trajectory_classes(batch, N, box)
    scen = scenery_classes(batch, process.scenery, eps)
    return {"trajectory": traj, "scenery": scen, "joint": join_labels(traj, scen)}


# ---------------------------------------------------------------------------
# players
# ---------------------------------------------------------------------------

def miner_candidates(space: SampledPairSpace, alpha: float, budget: int = 8,
                     classes: Mapping[str, np.ndarray] | None = None) -> list[MinerCandidate]:
    """Density-bounded reweightings offered by Min-er.

    Always the original weights.  For every labelling in ``classes``: the
    conditional law on each class of mass ``>= 1/alpha``, and on the union
    of the heaviest classes once it reaches ``1/alpha``.  At most ``budget``
    candidates are returned, each checked against the density bound.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    w = space.weights
    out = [MinerCandidate("original", w.copy())]
    if alpha <= 1 or not classes:
        return out
    need = 1.0 / alpha - DENSITY_TOL
    seen = {w.tobytes()}
    for name in sorted(classes):
        lab = np.asarray(classes[name])
        k = int(lab.max()) + 1 if lab.size else 0
        mass = np.bincount(lab, weights=w, minlength=k)
        order = sorted(range(k), key=lambda c: (-mass[c], c))
        cands = [(f"{name}[{c}]", lab == c) for c in order if mass[c] >= need]
        acc, chosen = 0.0, []
        for c in order:
            chosen.append(c)
            acc += mass[c]
            if acc >= need:
                break
        if acc >= need and len(chosen) > 1:
            cands.append((f"{name}[heaviest {len(chosen)}]", np.isin(lab, chosen)))
        for cname, mask in cands:
            cw = _conditional(w, mask)
            key = cw.tobytes()
            if key in seen or not density_ok(w, cw, alpha):
                continue
            seen.add(key)
            out.append(MinerCandidate(cname, cw))
            if len(out) >= budget:
                return out
    return out


def _inner(space: SampledPairSpace, weights: np.ndarray, U: np.ndarray, kappa_prime: float, delta: float,
           exact: bool) -> tuple[int, CoverWitness]:
    return bicov_partial(space, kappa_prime, delta, exact=exact, within=U, weights=weights)


def _grow_until(order: np.ndarray, w: np.ndarray, kappa: float) -> np.ndarray:
    acc = np.cumsum(w[order])
    k = int(np.searchsorted(acc, kappa - DENSITY_TOL)) + 1
    return np.sort(order[: min(k, order.size)])


def maxer_subset(space: SampledPairSpace, weights: np.ndarray, kappa: float, strategy: str = "resistant",
                 delta: float | None = None, kappa_prime: float | None = None, restarts: int = 4,
                 seed: int = 0, exact_inner: bool = False) -> np.ndarray:
    """Subset ``U`` with ``mu'(U) >= kappa`` chosen by Max-er.

    ``full`` keeps the whole support.  ``resistant`` drops points with the
    heaviest bi-neighbourhoods first, keeping mass ``>= kappa``.  ``random``
    draws random subsets of mass ``>= kappa`` and keeps the one with the
    largest inner estimate.  ``exhaustive`` tries every subset (tiny spaces).
    """
    if not 0 < kappa <= 1:
        raise ValueError("kappa must lie in (0, 1]")
    w = np.asarray(weights, dtype=np.float64)
    support = np.flatnonzero(w > 0)
    if strategy == "full" or kappa >= 1 - DENSITY_TOL:
        return support
    if delta is None or kappa_prime is None:
        raise ValueError("strategy needs delta and kappa_prime")
    if strategy == "resistant":
        bi = bi_neighbourhood_matrix(space, delta, support)
        load = bi.astype(np.float64) @ w[support]
        # lightest bi-neighbourhoods first, ties to lower ids
        order = support[np.lexsort((support, load))]
        return _grow_until(order, w, kappa)
    if strategy == "random":
        best, best_val = support, -1
        for r in range(max(restarts, 1)):
            order = stream_rng(seed, "maxer", r).permutation(support)
            U = _grow_until(order, w, kappa)
            val = _inner(space, w, U, kappa_prime, delta, exact_inner)[0]
            if val > best_val:
                best, best_val = U, val
        return best
    if strategy == "exhaustive":
        if support.size > EXHAUSTIVE_MAXER:
            raise ValueError(f"exhaustive Max-er refused above {EXHAUSTIVE_MAXER} points")
        best, best_val = support, -1
        for U in _heavy_subsets(support, w, kappa):
            val = _inner(space, w, U, kappa_prime, delta, exact_inner)[0]
            if val > best_val:
                best, best_val = U, val
        return best
    raise ValueError(f"unknown Max-er strategy {strategy!r}")


def _heavy_subsets(support: np.ndarray, w: np.ndarray, kappa: float):
    for size in range(1, support.size + 1):
        for sub in itertools.combinations(support.tolist(), size):
            U = np.array(sub, dtype=np.int64)
            if w[U].sum() >= kappa - DENSITY_TOL:
                yield U


def _maxer_menu(config: CompetitionConfig, m: int) -> tuple[str, ...]:
    if config.maxer == "auto":
        return ("exhaustive",) if m <= EXHAUSTIVE_MAXER else MAXER_STRATEGIES
    if config.maxer == "all":
        return MAXER_STRATEGIES
    return (config.maxer,)


def estimate_bicov_profile(space: SampledPairSpace, config: CompetitionConfig,
                           classes: Mapping[str, np.ndarray] | None = None) -> BicovProfileResult:
    """``min`` over Min-er candidates of ``max`` over Max-er strategies of the inner bi-covering number."""
    if config.miner == "exhaustive":
        return exact_bicov_profile(space, config)
    cands = miner_candidates(space, config.alpha, config.miner_budget,
                             classes if config.miner == "proof" else None)
    best: BicovProfileResult | None = None
    menu = _maxer_menu(config, space.m)
    for cand in cands:
        top = None
        for strat in menu:
            U = maxer_subset(space, cand.weights, config.kappa, strat, config.delta, config.kappa_prime,
                             config.restarts, config.seed, config.exact_inner)
            val, wit = _inner(space, cand.weights, U, config.kappa_prime, config.delta, config.exact_inner)
            if top is None or val > top[0]:
                top = (val, U, wit, strat)
        val, U, wit, strat = top
        if best is None or val < best.value:
            best = BicovProfileResult(val, cand.weights, U, wit,
                                      {"miner": cand.name, "maxer": strat, "candidates": len(cands),
                                       "maxer_menu": list(menu)}, False)
    assert best is not None
    ok, why = best.verify(space, config)
    if not ok:
        raise AssertionError(f"profile witness failed verification: {why}")
    return best


# ---------------------------------------------------------------------------
# exact profile on tiny spaces
# ---------------------------------------------------------------------------

def _bits(mask: int) -> list[int]:
    out, j = [], 0
    while mask:
        if mask & 1:
            out.append(j)
        mask >>= 1
        j += 1
    return out


def _exact_subspace_bicov(n1: list[int], n2: list[int], w: list[float], U: int, target: float
                          ) -> tuple[int, tuple[int, ...]]:
    ids = _bits(U)
    rows = {}
    for i in ids:
        out = 0
        for j in _bits(n1[i] & U):
            out |= n2[j]
        rows.setdefault(out & U, i)
    masks = list(rows)

    def mass(mask: int) -> float:
        return sum(w[j] for j in _bits(mask))

    for k in range(1, len(masks) + 1):
        for combo in itertools.combinations(range(len(masks)), k):
            cov = 0
            for c in combo:
                cov |= masks[c]
            if mass(cov) > target + MASS_TOL:
                return k, tuple(rows[masks[c]] for c in combo)
    return math.inf, ()


def exact_bicov_profile(space: SampledPairSpace, config: CompetitionConfig) -> BicovProfileResult:
    """Full enumeration over conditionals ``mu|_A``, subsets ``U`` and covers.

    Min-er ranges over ``A`` with ``mu(A) >= 1/alpha``; Max-er over
    ``U ⊆ A`` with ``mu_A(U) >= kappa``.  Subsets reaching outside ``A``
    only add weightless intermediate points, which can never raise the
    inner value, so they are skipped.
    """
    m = space.m
    if m > EXACT_PROFILE_LIMIT:
        raise ValueError(f"exact profile refused above {EXACT_PROFILE_LIMIT} points")
    near1 = _near(space.dist1, config.delta)
    near2 = _near(space.dist2, config.delta)
    n1 = [sum(1 << j for j in np.flatnonzero(near1[i])) for i in range(m)]
    n2 = [sum(1 << j for j in np.flatnonzero(near2[i])) for i in range(m)]
    w0 = space.weights
    best = None
    for A in range(1, 1 << m):
        ids = _bits(A)
        mA = float(w0[ids].sum())
        if mA < 1.0 / config.alpha - DENSITY_TOL:
            continue
        wA = np.zeros(m)
        wA[ids] = w0[ids] / mA
        wl = wA.tolist()
        top = None
        sub = A
        while sub:
            if sum(wl[j] for j in _bits(sub)) >= config.kappa - DENSITY_TOL:
                val, centers = _exact_subspace_bicov(n1, n2, wl, sub, config.kappa_prime)
                if top is None or val > top[0] or (val == top[0] and sub < top[1]):
                    top = (val, sub, centers)
            sub = (sub - 1) & A
        if top is None:
            continue
        if best is None or top[0] < best[0]:
            best = (top[0], A, top[1], top[2], wA)
    if best is None:
        raise ValueError("no admissible Min-er measure")
    val, A, U, centers, wA = best
    Uarr = np.array(_bits(U), dtype=np.int64)
    cov = bi_neighbourhood(space, centers, config.delta, within=Uarr) if centers else np.array([], dtype=np.int64)
    wit = CoverWitness(tuple(int(c) for c in centers), config.delta, float(wA[cov].sum()))
    return BicovProfileResult(int(val), wA, Uarr, wit, {"miner": f"conditional{_bits(A)}", "maxer": "exhaustive"},
                              True)


# ---------------------------------------------------------------------------
# rate experiments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateRow:
    N: int
    sqrt_N: float
    log_value: float
    ci: tuple[float, float]
    values: tuple[int, ...]


@dataclass(frozen=True)
class RateCurve:
    name: str
    rows: list[RateRow]
    slope: float
    slope_ci: tuple[float, float]
    intercept: float
    entropy: float

    def to_records(self) -> list[dict]:
        return [{"process": self.name, "N": r.N, "sqrt_N": r.sqrt_N, "log_value": r.log_value,
                 "ci_low": r.ci[0], "ci_high": r.ci[1], "slope": self.slope} for r in self.rows]


def _t_interval(x: np.ndarray, level: float = 0.95) -> tuple[float, float]:
    mean = float(x.mean())
    if x.size < 2 or np.all(x == x[0]):
        return mean, mean
    half = stats.t.ppf((1 + level) / 2, x.size - 1) * x.std(ddof=1) / math.sqrt(x.size)
    return mean - half, mean + half


def fit_slope(sqrt_n: np.ndarray, logs: np.ndarray, level: float = 0.95) -> tuple[float, tuple[float, float], float]:
    """OLS slope of ``logs`` on ``sqrt_n`` with a t-based interval."""
    sqrt_n, logs = np.asarray(sqrt_n, dtype=np.float64), np.asarray(logs, dtype=np.float64)
    if np.all(logs == logs[0]):
        return 0.0, (0.0, 0.0), float(logs[0])
    fit = stats.linregress(sqrt_n, logs)
    half = stats.t.ppf((1 + level) / 2, sqrt_n.size - 2) * fit.stderr
    return float(fit.slope), (float(fit.slope - half), float(fit.slope + half)), float(fit.intercept)


def rate_curve(process: ProcessModel, Ns: Sequence[int], config: CompetitionConfig, m: int,
               seeds: Sequence[int], metric: MetricConfig | None = None, name: str | None = None) -> RateCurve:
    """``log`` profile against ``sqrt N`` over repeated samples, with a fitted slope.

    ``config.delta`` is read per time step: the radius at length ``N`` is
    ``config.delta * N``.
    """
    Ns = [int(n) for n in Ns]
    if any(a >= b for a, b in zip(Ns[:-1], Ns[1:])):
        raise ValueError("N list must be increasing")
    rows, xs, ys = [], [], []
    for N in Ns:
        vals = []
        for s in seeds:
            space, batch = sample_pair_space(process, N, m, metric, seed=int(s), return_batch=True)
            cfg = replace(config, delta=config.delta * N, seed=int(s))
            classes = process_classes(batch, process, N, config.box, config.typical_eps) \
                if config.miner == "proof" else None
            vals.append(estimate_bicov_profile(space, cfg, classes).value)
        logs = np.log(np.array(vals, dtype=np.float64))
        rows.append(RateRow(N, math.sqrt(N), float(logs.mean()), _t_interval(logs), tuple(vals)))
        xs.extend([math.sqrt(N)] * len(vals))
        ys.extend(logs.tolist())
    slope, ci, icpt = fit_slope(np.array(xs), np.array(ys))
    return RateCurve(name or process.name, rows, slope, ci, icpt, process.scenery.entropy)


def theoretical_rate(alpha: float, h: float, reference: dict | None = None) -> float:
    """``psi_BM(alpha) * h`` from the stored table (log-log interpolation inside it).

    ``alpha = 1`` gives ``inf`` for ``h > 0`` and ``0`` for ``h = 0``
    (the convention ``0 * inf = 0``).  Values of ``alpha`` outside the table
    fall back to a fresh Monte Carlo quantile.
    """
    if alpha < 1:
        raise ValueError("alpha must be at least 1")
    if h < 0:
        raise ValueError("h must be nonnegative")
    if h == 0:
        return 0.0
    if alpha == 1:
        return math.inf
    ref = reference or brownlab.load_psi_reference()
    a = np.array([r["alpha"] for r in ref["table"]])
    p = np.array([r["psi"] for r in ref["table"]])
    if a.min() <= alpha <= a.max():
        psi = float(np.exp(np.interp(np.log(alpha), np.log(a), np.log(p))))
    else:
        psi = brownlab.psi_bm_quantile(alpha).value
    return psi * h
