"""Entropy, divergence and mutual information on finite samples, and the
covering algorithms that turn a mutual-information bound into a small cover.

Everything is in nats.  Estimators are plug-in: a sample (optionally
weighted) is treated as the exact finite probability space it defines, so
identities such as ``I = H(P) + H(Q) - H(P v Q)`` hold to rounding.
Partitions are represented by per-point integer labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .pairspace import MASS_TOL, SampledSpace, partial_covering_number

PROB_TOL = 1e-9
# bins per sample above which an estimate is flagged as undersampled
UNDERSAMPLING_RATIO = 10


@dataclass(frozen=True)
class Estimate:
    """A named estimator output with optional interval and warning flags."""

    name: str
    value: float
    ci: tuple[float, float] | None = None
    flags: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"name": self.name, "value": self.value, "flags": list(self.flags)}
        if self.ci is not None:
            out["ci_low"], out["ci_high"] = self.ci
        out.update(self.extra)
        return out


# ---------------------------------------------------------------------------
# distributions and labelings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalDistribution:
    """Finite distribution over observed outcomes.

    ``outcomes`` holds one row per distinct outcome; ``counts`` holds the
    (possibly fractional) total weight of each.
    """

    outcomes: np.ndarray
    counts: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.counts, dtype=np.float64)
        if c.ndim != 1 or len(c) != len(self.outcomes):
            raise ValueError("one count per outcome required")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise ValueError("counts must be finite and nonnegative")
        if c.sum() <= 0:
            raise ValueError("empty distribution")
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @property
    def probs(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.counts))

    @classmethod
    def from_samples(cls, samples, weights=None) -> "EmpiricalDistribution":
        arr = np.asarray(samples)
        if arr.ndim == 1:
            outcomes, inv = np.unique(arr, return_inverse=True)
        else:
            outcomes, inv = np.unique(arr, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        w = None if weights is None else np.asarray(weights, dtype=np.float64)
        counts = np.bincount(inv, weights=w, minlength=len(outcomes))
        return cls(outcomes, counts)

    @classmethod
    def from_probs(cls, probs) -> "EmpiricalDistribution":
        p = np.asarray(probs, dtype=np.float64)
        return cls(np.arange(len(p)), p)


def _prob_vector(dist) -> np.ndarray:
    if isinstance(dist, EmpiricalDistribution):
        return dist.probs
    p = np.asarray(dist, dtype=np.float64).ravel()
    if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
        raise ValueError("not a probability vector")
    return p


def factorize(labels) -> tuple[np.ndarray, int]:
    """Map arbitrary labels (1-D values or rows of a 2-D array) to ``0..k-1``."""
    arr = np.asarray(labels)
    if arr.ndim == 1:
        _, inv = np.unique(arr, return_inverse=True)
    else:
        _, inv = np.unique(arr, axis=0, return_inverse=True)
    inv = inv.reshape(-1).astype(np.int64)
    return inv, int(inv.max()) + 1 if inv.size else 0


def join_labels(*labelings) -> np.ndarray:
    """Labels of the common refinement ``P1 v P2 v ...``."""
    cols = [factorize(lab)[0] for lab in labelings]
    if not cols:
        raise ValueError("at least one labeling required")
    return factorize(np.stack(cols, axis=1))[0]


def block_codes(symbols: np.ndarray, alphabet: int | None = None) -> np.ndarray:
    """One integer label per row of a symbol array (row-wise block names)."""
    sym = np.asarray(symbols)
    if sym.ndim != 2:
        raise ValueError("expected a 2-D array of symbol rows")
    k = int(sym.max()) + 1 if alphabet is None else int(alphabet)
    if sym.shape[1] * math.log2(max(k, 2)) < 62:
        pw = k ** np.arange(sym.shape[1], dtype=np.int64)
        return sym.astype(np.int64) @ pw
    return factorize(sym)[0]


def _weights(n: int, weights) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or np.any(w < 0):
        raise ValueError("weights must be a nonnegative vector, one per sample")
    s = w.sum()
    if s <= 0:
        raise ValueError("weights have zero mass")
    return w / s


# ---------------------------------------------------------------------------
# entropy, divergence, mutual information
# ---------------------------------------------------------------------------

def _h(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def entropy(dist) -> float:
    """Shannon entropy in nats, with ``0 log 0 = 0``."""
    return _h(_prob_vector(dist))


def kl_divergence(p, q) -> float:
    """``D_KL(p | q)``; ``inf`` when ``p`` charges a point where ``q`` vanishes."""
    p, q = _prob_vector(p), _prob_vector(q)
    if p.shape != q.shape:
        raise ValueError("distributions live on different outcome sets")
    on = p > 0
    if np.any(q[on] <= 0):
        return math.inf
    return max(float((p[on] * np.log(p[on] / q[on])).sum()), 0.0)


def label_entropy(labels, weights=None) -> float:
    inv, k = factorize(labels)
    return _h(np.bincount(inv, weights=_weights(len(inv), weights), minlength=k))


def mutual_information(p_labels, q_labels, r_labels=None, weights=None) -> float:
    """Plug-in ``I(P; Q)`` or, with ``r_labels``, ``I(P; Q | R)``.

    Uses ``H(P) + H(Q) - H(P v Q)``; the conditional version is
    ``H(P v R) + H(Q v R) - H(P v Q v R) - H(R)``, which equals the
    cell-mass-weighted average of the within-cell informations.
    """
    p, q = factorize(p_labels)[0], factorize(q_labels)[0]
    if len(p) != len(q):
        raise ValueError("labelings must be on the same sample")
    w = _weights(len(p), weights)
    if r_labels is None:
        val = label_entropy(p, w) + label_entropy(q, w) - label_entropy(join_labels(p, q), w)
    else:
        r = factorize(r_labels)[0]
        if len(r) != len(p):
            raise ValueError("labelings must be on the same sample")
        val = (label_entropy(join_labels(p, r), w) + label_entropy(join_labels(q, r), w)
               - label_entropy(join_labels(p, q, r), w) - label_entropy(r, w))
    return max(val, 0.0)


def _joint_table(p: np.ndarray, q: np.ndarray, w: np.ndarray) -> np.ndarray:
    kp, kq = int(p.max()) + 1, int(q.max()) + 1
    return np.bincount(p * kq + q, weights=w, minlength=kp * kq).reshape(kp, kq)


def cell_divergences(s_labels, t_labels, weights=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-point ``D_KL(pi_T(mu|S(x)) | pi_T mu)`` and the ``S``-cell masses.

    Returns ``(kl_per_cell, cell_mass)`` indexed by factorized ``S`` label.
    """
    s, t = factorize(s_labels)[0], factorize(t_labels)[0]
    w = _weights(len(s), weights)
    joint = _joint_table(s, t, w)
    cell = joint.sum(axis=1)
    marg = joint.sum(axis=0)
    kl = np.zeros(len(cell))
    for c in np.flatnonzero(cell > 0):
        kl[c] = kl_divergence(joint[c] / cell[c], marg)
    return kl, cell


def mutual_information_kl(p_labels, q_labels, weights=None) -> float:
    """``I(P; Q)`` as the average divergence of conditional ``P``-laws.

    Averages ``D_KL(pi_P(mu|Q(x)) | pi_P mu)`` over ``x``; an independent
    route to the same number as :func:`mutual_information`.
    """
    kl, mass = cell_divergences(q_labels, p_labels, weights)
    return float((kl * mass).sum())


def mi_bias_bound(p_labels, q_labels) -> float:
    """Leading plug-in bias ``(|P||Q| - |P| - |Q| + 1) / (2 n)`` of ``I(P; Q)``."""
    p, kp = factorize(p_labels)
    q, kq = factorize(q_labels)
    return (kp * kq - kp - kq + 1) / (2.0 * len(p))


# ---------------------------------------------------------------------------
# approximate absolute continuity
# ---------------------------------------------------------------------------

def approx_abs_continuity(p, q, M: float, eps: float) -> tuple[bool, float]:
    """Test ``p(A) <= M q(A) + eps`` for every ``A``.

    The worst set is ``{i : p_i > M q_i}``, so the test reduces to the
    excess ``sum_i max(p_i - M q_i, 0)``, which is returned alongside.
    Inputs are nonnegative vectors (finite measures, not necessarily
    normalized).
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("measures live on different outcome sets")
    if M < 0 or eps < 0:
        raise ValueError("M and eps must be nonnegative")
    with np.errstate(invalid="ignore", over="ignore"):
        excess = np.where(q > 0, np.maximum(p - M * q, 0.0), p)
    worst = float(excess.sum())
    return worst <= eps + MASS_TOL, worst


def uniform_integrability_bound(D: float, C: float) -> tuple[float, float]:
    """Constants ``(M, eps)`` with ``nu << _{M,eps} mu`` whenever ``D_KL(nu|mu) <= D``."""
    if C <= 0:
        raise ValueError("C must be positive")
    if D < 0:
        raise ValueError("D must be nonnegative")
    M = math.exp(C) if C < 700 else math.inf
    return M, (D + math.exp(-1.0)) / C


# ---------------------------------------------------------------------------
# typical sets and block entropies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TypicalSet:
    names: np.ndarray
    probs: np.ndarray
    mass: float
    n_observed: int


def typical_set(names: np.ndarray, length: int, eps: float, h: float,
                prob: Callable[[np.ndarray], float] | None = None) -> TypicalSet:
    """Observed names with probability in ``(e^{-(h+eps)n}, e^{-(h-eps)n})``.

    Probabilities are empirical frequencies unless ``prob`` gives the exact
    probability of a name.  ``mass`` is the sample fraction that is typical.
    """
    names = np.asarray(names)
    if names.ndim != 2 or names.shape[1] != length:
        raise ValueError("names must be a (count, length) array")
    uniq, inv, counts = np.unique(names, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    if prob is None:
        pr = counts / len(names)
    else:
        pr = np.array([prob(u) for u in uniq], dtype=np.float64)
    lo = math.exp(-(h + eps) * length)
    hi = math.exp(-(h - eps) * length)
    # relative slack so exactly-equidistributed names are not lost to rounding
    keep = (pr > lo * (1 - 1e-12)) & (pr < hi * (1 + 1e-12))
    mass = float(keep[inv].mean())
    return TypicalSet(uniq[keep], pr[keep], mass, len(uniq))


@dataclass(frozen=True)
class BlockEntropyRow:
    N: int
    block_entropy: float
    rate: float
    increment: float
    bins: int
    undersampled: bool


def block_entropy_rate(symbols: np.ndarray, Ns: Iterable[int], alphabet: int | None = None,
                       weights=None) -> list[BlockEntropyRow]:
    """Plug-in ``H(P^[0;N))``, ``H/N`` and increments ``H_N - H_{N-1}``.

    ``symbols`` is a ``(samples, Nmax)`` array of stationary paths.  The
    increment is the conditional entropy of the ``N``-th symbol given the
    ``N - 1`` before it and decreases to the entropy rate.
    """
    sym = np.asarray(symbols)
    Ns = sorted(set(int(n) for n in Ns))
    if Ns[-1] > sym.shape[1] or Ns[0] < 1:
        raise ValueError("requested block length outside the sampled window")
    k = int(sym.max()) + 1 if alphabet is None else int(alphabet)
    n = sym.shape[0]
    cache: dict[int, tuple[float, int]] = {0: (0.0, 1)}

    def block(N: int) -> tuple[float, int]:
        if N not in cache:
            codes = block_codes(sym[:, :N], k)
            _, inv = np.unique(codes, return_inverse=True)
            counts = np.bincount(inv.reshape(-1), weights=_weights(n, weights))
            cache[N] = (_h(counts), int(k**N) if N * math.log2(max(k, 2)) < 62 else 2**62)
        return cache[N]

    rows = []
    for N in Ns:
        H, bins = block(N)
        rows.append(BlockEntropyRow(N, H, H / N, H - block(N - 1)[0], bins,
                                    bins > n / UNDERSAMPLING_RATIO))
    return rows


def spatial_entropy(spaces: Sequence[tuple[int, SampledSpace]], r: float, eps: float,
                    exact: bool = False) -> list[Estimate]:
    """Per-``N`` rates ``log cov_{1-eps}(space_N, r N) / N``.

    ``spaces`` pairs each ``N`` with the space carrying the (sum-type)
    dynamical metric over ``N`` steps.  Greedy covers give upper bounds on
    the covering number.  Since an ``m``-point sample has covering number
    at most ``m``, rates above ``log(m)/N`` cannot be resolved; such rows
    are flagged ``sample_limited``.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    out = []
    for N, space in spaces:
        k, wit = partial_covering_number(space, 1.0 - eps, r * N, exact=exact)
        flags = []
        if k >= (1.0 - eps) * space.m:
            flags.append("sample_limited")
        out.append(Estimate(f"spatial_entropy_N{N}", math.log(k) / N, None, tuple(flags),
                            {"N": N, "cover_size": k, "m": space.m, "radius": r * N}))
    return out


def hamming_space(names: np.ndarray, weights=None) -> SampledSpace:
    """Sampled space of names under the (unnormalized) Hamming metric."""
    from scipy.spatial.distance import pdist, squareform

    names = np.asarray(names)
    d = squareform(pdist(names, metric="hamming")) * names.shape[1]
    d = np.rint(d)
    return SampledSpace(_weights(len(names), weights), d)


# ---------------------------------------------------------------------------
# covering algorithms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SupportCoverResult:
    selected: list[int]
    covered_mass: float
    size_bound: float
    scores: list[float]


def _support_mask(support, n: int) -> np.ndarray:
    s = np.asarray(support)
    if s.dtype == bool:
        if s.shape != (n,):
            raise ValueError("support mask has the wrong length")
        return s
    mask = np.zeros(n, dtype=bool)
    mask[s.astype(np.int64)] = True
    return mask


def greedy_support_cover(components: Sequence[tuple], alpha: float, M: float, eps: float,
                         mu=None, nu=None, validate: bool = True) -> SupportCoverResult:
    """Select components whose supports carry more than ``alpha`` of ``mu``.

    ``components`` is a list of ``(measure, support)`` pairs over ``n``
    points, and ``nu`` their mixing weights (uniform by default).  The
    reference measure ``mu`` defaults to the mixture and otherwise must
    equal it.  Each step picks the component with the most mass on the
    still-uncovered set, which is at least ``1 - alpha`` by averaging.
    With every component ``<<_{M,eps} mu`` this stops after at most
    ``M / (1 - alpha - eps)`` steps.

    Raises
    ------
    ValueError
        If the mixture, support or absolute-continuity conditions fail, or
        ``alpha >= 1 - eps``.
    """
    if not components:
        raise ValueError("no components")
    meas = np.array([np.asarray(c[0], dtype=np.float64) for c in components])
    n = meas.shape[1]
    sup = np.array([_support_mask(c[1], n) for c in components])
    Z = len(components)
    nu_ = np.full(Z, 1.0 / Z) if nu is None else np.asarray(nu, dtype=np.float64)
    mix = nu_ @ meas
    mu_ = mix if mu is None else np.asarray(mu, dtype=np.float64)
    if validate:
        if not alpha < 1 - eps:
            raise ValueError("alpha must be below 1 - eps")
        if np.any(meas < 0) or np.any(nu_ < 0) or abs(nu_.sum() - 1) > PROB_TOL:
            raise ValueError("components and mixing weights must be nonnegative, weights summing to 1")
        if abs(mu_.sum() - 1) > PROB_TOL or np.max(np.abs(mix - mu_)) > PROB_TOL:
            raise ValueError("mu is not the mixture of the components")
        if np.any(np.where(sup, 0.0, meas) > 0):
            raise ValueError("a component charges points outside its support")
        for z in range(Z):
            ok, worst = approx_abs_continuity(meas[z], mu_, M, eps)
            if not ok:
                raise ValueError(f"component {z} is not <<_(M,eps) mu (excess {worst:.3g})")
    covered = np.zeros(n, dtype=bool)
    chosen: list[int] = []
    scores: list[float] = []
    mass = 0.0
    while mass <= alpha + MASS_TOL:
        gain = meas @ (~covered).astype(np.float64)
        z = int(np.argmax(gain))
        if gain[z] <= 0:
            break
        chosen.append(z)
        scores.append(float(gain[z]))
        covered |= sup[z]
        mass = float(mu_[covered].sum())
    bound = M / (1 - alpha - eps) if alpha < 1 - eps else math.inf
    return SupportCoverResult(chosen, mass, bound, scores)


def trim_locally_thick(weights, U, labels, alpha: float) -> np.ndarray:
    """Keep ``U`` only on cells where it has conditional mass ``>= (1-alpha) mu(U)``.

    Returns a boolean mask ``V``.  Zero-mass cells are dropped.  The result
    satisfies ``mu(V) >= alpha mu(U)`` and is locally ``(1-alpha) mu(U)``-thick
    in the partition; both are asserted.
    """
    if not 0.5 < alpha < 1:
        raise ValueError("alpha must lie in (1/2, 1)")
    lab = factorize(labels)[0]
    w = _weights(len(lab), weights)
    U = np.asarray(U, dtype=bool)
    mu_U = float(w[U].sum())
    if mu_U <= 0:
        raise ValueError("U must have positive mass")
    cell = np.bincount(lab, weights=w)
    in_u = np.bincount(lab, weights=np.where(U, w, 0.0), minlength=len(cell))
    gamma = (1 - alpha) * mu_U
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = np.where(cell > 0, in_u / cell, 0.0)
    good = (cell > 0) & (cond >= gamma)
    V = U & good[lab]
    assert float(w[V].sum()) >= alpha * mu_U - 1e-12
    assert np.all(cond[np.unique(lab[V])] >= gamma) if V.any() else True
    return V


def saturation_coverage(weights, s_labels, t_labels, U, points) -> float:
    """``mu(U & T(U & S(points)))`` for a point set ``points``."""
    s, t = factorize(s_labels)[0], factorize(t_labels)[0]
    w = _weights(len(s), weights)
    U = np.asarray(U, dtype=bool)
    pts = np.asarray(list(points), dtype=np.int64)
    inner = U & np.isin(s, s[pts]) if pts.size else np.zeros(len(s), dtype=bool)
    outer = U & np.isin(t, t[inner])
    return float(w[outer].sum())


@dataclass(frozen=True)
class EfficientCoverResult:
    """Output of :func:`efficient_cover` with the constants it used."""

    points: list[int]
    coverage: float
    target: float
    size_bound: float
    constants: dict
    cell_results: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.coverage > self.target and len(self.points) <= self.size_bound


def _efficient_cover_plain(w, s, t, U, alpha, eta) -> EfficientCoverResult:
    mu_U = float(w[U].sum())
    zeta = eta / 3
    kl, cell = cell_divergences(s, t, w)
    I = float((kl * cell).sum())
    D = I / zeta
    X1 = kl[s] <= D + 1e-12
    U1 = U & X1
    mu_U1 = float(w[U1].sum())
    gamma = zeta * mu_U1
    V = trim_locally_thick(w, U1, t, 1 - zeta)
    mu_V = float(w[V].sum())
    eps = zeta / 2
    C = (D + math.exp(-1.0)) / (eps * (alpha - eta))
    M = math.exp(C) if C < 700 else math.inf
    # components indexed by S-cells, measures on T-labels
    n_s, n_t = int(s.max()) + 1, int(t.max()) + 1
    joint_V = _joint_table(s, t, np.where(V, w, 0.0))
    if joint_V.shape[1] < n_t:
        joint_V = np.pad(joint_V, ((0, 0), (0, n_t - joint_V.shape[1])))
    target_law = joint_V.sum(axis=0) / mu_V
    live = np.flatnonzero(cell > 0)
    comps = [(joint_V[c] / (cell[c] * mu_V), joint_V[c] > 0) for c in live]
    # the trimming step certifies domination with constant e^C / gamma
    M_cert = M / gamma if gamma > 0 else math.inf
    res = greedy_support_cover(comps, 1 - zeta, M_cert, eps, mu=target_law, nu=cell[live])
    points = []
    for z in res.selected:
        c = live[z]
        cand = np.flatnonzero(U & (s == c))
        if cand.size:
            points.append(int(cand[0]))
    coverage = saturation_coverage(w, s, t, U, points)
    consts = {"I": I, "zeta": zeta, "D": D, "gamma": gamma, "mu_U": mu_U, "mu_U1": mu_U1,
              "mu_V": mu_V, "eps": eps, "C": C, "M": M, "M_certified": M_cert}
    return EfficientCoverResult(points, coverage, mu_U - eta, 2 * M / zeta, consts)


def efficient_cover(weights, s_labels, t_labels, U, alpha: float, eta: float,
                    r_labels=None) -> EfficientCoverResult:
    """Small ``S* in U`` with ``mu(U & T(U & S(S*))) > mu(U) - eta``.

    Follows the constructive argument: discard ``S``-cells whose
    conditional ``T``-law diverges by more than ``D = I / zeta`` (with
    ``zeta = eta / 3``), trim the rest to be locally thick in ``T``, then run
    :func:`greedy_support_cover` on the ``S``-cell components with
    ``eps = zeta / 2``, ``C = (D + 1/e) / (eps (alpha - eta))`` and
    ``M = e^C``, giving ``|S*| <= 2 M / zeta``.

    With ``r_labels`` (a partition coarser than both ``S`` and ``T``) cells
    of ``R`` with within-cell information above ``I(S;T|R) / zeta`` are
    discarded, the rest trimmed in ``R``, and the plain procedure is run
    inside each surviving ``R``-cell with ``eta = zeta``.

    Parameters
    ----------
    weights : array or None
        Point masses (uniform if ``None``).
    s_labels, t_labels, r_labels : arrays
        Partition labels per point.
    U : bool array
        Target set, with ``mu(U) >= alpha``.
    alpha, eta : float
        ``0 < eta < alpha <= 1``.
    """
    s, t = factorize(s_labels)[0], factorize(t_labels)[0]
    if len(s) != len(t):
        raise ValueError("labelings must be on the same sample")
    w = _weights(len(s), weights)
    U = np.asarray(U, dtype=bool)
    if not 0 < eta < alpha <= 1:
        raise ValueError("need 0 < eta < alpha <= 1")
    mu_U = float(w[U].sum())
    if mu_U < alpha - 1e-12:
        raise ValueError("mu(U) must be at least alpha")
    if r_labels is None:
        return _efficient_cover_plain(w, s, t, U, alpha, eta)

    r = factorize(r_labels)[0]
    zeta = eta / 3
    I = mutual_information(s, t, r, w)
    J = I / zeta
    rcell = np.bincount(r, weights=w)
    inside = np.zeros(len(rcell))
    for c in np.flatnonzero(rcell > 0):
        m = r == c
        inside[c] = mutual_information(s[m], t[m], weights=w[m])
    R0 = (rcell > 0) & (inside <= J + 1e-12)
    U0 = U & R0[r]
    mu_U0 = float(w[U0].sum())
    gamma = zeta * mu_U0
    V = trim_locally_thick(w, U0, r, 1 - zeta)
    points: list[int] = []
    cells = []
    bound = 0.0
    for c in np.unique(r[V]):
        m = r == c
        wc = w[m] / rcell[c]
        Vc = V[m]
        a_c = float(wc[Vc].sum())
        idx = np.flatnonzero(m)
        if a_c <= zeta:
            # target mu_C(V) - zeta is nonpositive: one point already beats it
            pick = [int(idx[np.flatnonzero(Vc)[0]])]
            cells.append({"cell": int(c), "degenerate": True, "points": pick})
            points.extend(pick)
            bound += 1
            continue
        sub = _efficient_cover_plain(wc, factorize(s[m])[0], factorize(t[m])[0], Vc, a_c, zeta)
        pick = [int(idx[p]) for p in sub.points]
        cells.append({"cell": int(c), "degenerate": False, "points": pick,
                      "coverage": sub.coverage, "target": sub.target})
        points.extend(pick)
        bound += sub.size_bound
    coverage = saturation_coverage(w, s, t, U, points)
    consts = {"I": I, "zeta": zeta, "J": J, "gamma": gamma, "mu_U": mu_U, "mu_U0": mu_U0,
              "mu_V": float(w[V].sum()), "n_R": int(np.count_nonzero(rcell > 0))}
    return EfficientCoverResult(points, coverage, mu_U - eta, bound, consts, cells)
