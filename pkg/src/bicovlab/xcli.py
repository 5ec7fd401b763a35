"""Command-line experiment runner.

``bicovlab list`` prints the catalog, ``bicovlab run`` executes one named
experiment from a YAML config and writes CSV/JSON records plus a manifest,
and ``bicovlab verify --suite acceptance`` runs the acceptance battery.

Every experiment splits into independent work units.  Each unit derives its
randomness from the master seed and its own parameters, and results are
merged in unit order, so the output does not depend on the worker count.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml

from . import __version__

CSV_HEAD = ("experiment",)
CSV_TAIL = ("metric", "value", "ci_lo", "ci_hi", "flags", "seconds")


class BudgetExceeded(RuntimeError):
    pass


@dataclass
class ReportRecord:
    experiment: str
    params: dict
    metric: str
    value: float
    ci_lo: float | None = None
    ci_hi: float | None = None
    flags: list[str] = field(default_factory=list)
    seconds: float | None = None

    def __post_init__(self) -> None:
        if self.ci_lo is not None and self.ci_hi is not None and not (
                self.ci_lo - 1e-12 <= self.value <= self.ci_hi + 1e-12 or math.isnan(self.value)):
            raise ValueError(f"{self.metric}: value {self.value} outside its interval")


@dataclass
class ExperimentConfig:
    experiment: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "results"
    workers: int = 1
    format: str = "csv"
    timings: bool = False

    def __post_init__(self) -> None:
        if self.experiment not in CATALOG:
            raise KeyError(f"unknown experiment {self.experiment!r}")
        for k, v in self.params.items():
            if isinstance(v, (list, tuple)) and len(v) == 0:
                raise ValueError(f"parameter grid {k!r} is empty")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    def digest(self) -> str:
        """Hash of everything that determines the records."""
        body = json.dumps({"experiment": self.experiment, "params": self.params, "seed": self.seed},
                          sort_keys=True, default=str)
        return hashlib.sha256(body.encode()).hexdigest()


@dataclass(frozen=True)
class Experiment:
    name: str
    description: str
    defaults: dict
    units: Callable[[dict, int], list[tuple]]
    run_unit: Callable[..., list[ReportRecord]]
    finalize: Callable[[dict, list[ReportRecord]], list[ReportRecord]] | None = None
    cost: Callable[[dict], float] | None = None
    max_cost: float = math.inf
    budget_seconds: float = 3600.0


# ---------------------------------------------------------------------------
# experiment bodies (module level so that worker processes can import them)
# ---------------------------------------------------------------------------

def _rec(exp, params, metric, value, ci=None, flags=()):
    lo, hi = (None, None) if ci is None else (float(ci[0]), float(ci[1]))
    return ReportRecord(exp, dict(params), metric, float(value), lo, hi, list(flags))


def _unit_seed(seed: int, *parts) -> int:
    h = hashlib.sha256(json.dumps([seed, *parts], default=str).encode()).digest()
    return int.from_bytes(h[:4], "little")


def _bernoulli_units(p, seed):
    return [("bernoulli-triviality", int(N), int(run), p, seed) for N in p["Ns"] for run in range(p["runs"])]


def _bernoulli_unit(exp, N, run, p, seed):
    from .engine import CompetitionConfig, estimate_bicov_profile
    from .procgen import MetricConfig, ProcessModel, iid_system, sample_pair_space, step_cocycle

    proc = ProcessModel(iid_system([0.5, 0.5]), step_cocycle([-1.0, 1.0]), name="bernoulli")
    s = _unit_seed(seed, exp, N, run)
    metric = MetricConfig(depth=p["depth"], radius=0)
    space = sample_pair_space(proc, N, p["m"], metric, seed=s)
    cfg = CompetitionConfig(p["alpha"], p["kappa"], p["kappa_prime"], p["delta"] * N, miner="original", seed=s)
    res = estimate_bicov_profile(space, cfg)
    return [_rec(exp, {"N": N, "run": run}, "bicov_profile", res.value)]


def _bernoulli_final(p, recs):
    out = []
    for N in p["Ns"]:
        vals = [r.value for r in recs if r.params["N"] == N]
        out.append(_rec("bernoulli-triviality", {"N": N}, "fraction_equal_one", float(np.mean([v == 1 for v in vals]))))
    return recs + out


def _rotation_units(p, seed):
    return [("rotation-bicov", int(N), float(d), p) for N in p["Ns"] for d in p["deltas"]]


def _rotation_unit(exp, N, d, p):
    from .pairspace import bicov_partial, partial_covering_number
    from .procgen import rotation_pair_space

    sp = rotation_pair_space(p["q"], p["p"], N)
    a = p["a"]
    base = sp.marginal(1)
    lower = partial_covering_number(base, a, 2 * d * N, exact=True)[0]
    mid = bicov_partial(sp, a, d * N, exact=True)[0]
    upper = partial_covering_number(base, a, d * N, exact=True)[0]
    prm = {"N": N, "delta": d}
    return [_rec(exp, prm, "cov_2delta", lower), _rec(exp, prm, "bicov_delta", mid),
            _rec(exp, prm, "cov_delta", upper)]


def _rate_units(p, seed):
    return [("rwrs-rate", int(K), int(N), int(s), p, seed) for K in p["alphabets"] for N in p["Ns"]
            for s in range(p["seeds"])]


def _rate_unit(exp, K, N, s, p, seed):
    from .engine import CompetitionConfig, estimate_bicov_profile, process_classes
    from .procgen import SceneryModel, sample_pair_space, simple_random_walk

    proc = simple_random_walk(SceneryModel.uniform(K), name=f"srw-k{K}")
    us = _unit_seed(seed, exp, K, N, s)
    space, batch = sample_pair_space(proc, N, p["m"], seed=us, return_batch=True)
    cfg = CompetitionConfig(p["alpha"], p["kappa"], p["kappa_prime"], p["delta"] * N, seed=us)
    res = estimate_bicov_profile(space, cfg, process_classes(batch, proc, N))
    return [_rec(exp, {"alphabet": K, "N": N, "rep": s}, "log_bicov_profile", math.log(res.value))]


def _rate_final(p, recs):
    from .engine import fit_slope, theoretical_rate

    out = list(recs)
    for K in p["alphabets"]:
        rows = [r for r in recs if r.params["alphabet"] == K]
        slope, ci, _ = fit_slope(np.sqrt([r.params["N"] for r in rows]), np.array([r.value for r in rows]))
        out.append(_rec("rwrs-rate", {"alphabet": K}, "slope", slope, ci))
        out.append(_rec("rwrs-rate", {"alphabet": K}, "theoretical_rate",
                        theoretical_rate(p["alpha"], math.log(K))))
    return out


def _psi_units(p, seed):
    return [("psi-bm", p, seed)]


def _psi_unit(exp, p, seed):
    from .brownlab import psi_bm_quantile

    ests = psi_bm_quantile(list(p["alphas"]), p["n"], p["count"], seed, p["n_boot"])
    return [_rec(exp, {"alpha": e.extra["alpha"]}, "psi_bm", e.value,
                 None if math.isinf(e.value) else e.ci, e.flags) for e in ests]


def _meander_units(p, seed):
    return [("meandering", int(L), p, seed) for L in p["Ls"]]


def _meander_unit(exp, L, p, seed):
    from .cantorlab import meandering_frequency
    from .procgen import simple_random_walk

    proc = simple_random_walk()
    ests = meandering_frequency(proc.base, proc.cocycle, p["M"], L, list(p["alphas"]), p["samples"],
                                _unit_seed(seed, exp, L))
    return [_rec(exp, {"L": L, "alpha": e.extra["alpha"]}, "meander_frequency", e.value, e.ci) for e in ests]


def _dcs_units(p, seed):
    return [("dcs-bounds", int(L), tuple(D)) for L in p["lengths"] for D in p["gaps"]]


def _dcs_unit(exp, L, D):
    from .cantorlab import covering_bound_formula, enumerate_dcs_integer

    if any(x > L for x in D) or any(a < b for a, b in zip(D[:-1], D[1:])):
        return []
    count = enumerate_dcs_integer((0, L), list(D))
    bound = covering_bound_formula("set", L, D, 1.0, enforce_window=False)
    prm = {"L": L, "D": "-".join(map(str, D))}
    return [_rec(exp, prm, "count", count), _rec(exp, prm, "unit_bound", bound,
                                                 flags=() if count <= bound else ("violated",))]


def _be_units(p, seed):
    return [("berry-esseen", int(N), p, seed) for N in p["Ns"]]


def _be_unit(exp, N, p, seed):
    from .brownlab import berry_esseen_gap, exact_berry_esseen_gap
    from .procgen import simple_random_walk

    proc = simple_random_walk()
    out = [_rec(exp, {"N": N}, "sup_cdf_gap",
                berry_esseen_gap(proc.base, proc.cocycle, N, p["samples"], _unit_seed(seed, exp, N)))]
    if N <= p["exact_up_to"]:
        out.append(_rec(exp, {"N": N}, "exact_sup_cdf_gap", exact_berry_esseen_gap(proc.base, proc.cocycle, N)))
    return out


def _be_final(p, recs):
    from .engine import fit_slope

    rows = [r for r in recs if r.metric == "sup_cdf_gap"]
    slope, ci, _ = fit_slope(np.log([r.params["N"] for r in rows]), np.log([r.value for r in rows]))
    return recs + [_rec("berry-esseen", {}, "loglog_slope", slope, ci)]


def _inv_units(p, seed):
    return [("invariance", int(N), p, seed) for N in p["Ns"]] + [("invariance", -1, p, seed)]


def _inv_unit(exp, N, p, seed):
    from .brownlab import invariance_gap
    from .procgen import (build_markov_system, coboundary_cocycle, effective_variance,
                          simple_random_walk)

    if N < 0:
        sysm = build_markov_system([[0.5, 0.5], [0.5, 0.5]])
        cob = coboundary_cocycle([0.0, 1.0])
        Nc = max(p["Ns"])
        var, ci = effective_variance(sysm, cob, Nc, p["samples"], _unit_seed(seed, exp, "cob"), n_boot=50)
        rows = invariance_gap(sysm, cob, Nc, p["samples"], seed, c=math.sqrt(var))
        flags = ("degenerate",) if rows[0].degenerate else ()
        return [_rec(exp, {"N": Nc, "cocycle": "coboundary"}, "effective_variance", var, ci, flags)]
    proc = simple_random_walk()
    rows = invariance_gap(proc.base, proc.cocycle, N, p["samples"], _unit_seed(seed, exp, N))
    return [_rec(exp, {"N": N, "cocycle": "srw", "functional": r.functional}, "ks_distance", r.ks) for r in rows]


def _mi_units(p, seed):
    return [("mutual-info", "iid", int(N), p, seed) for N in p["iid_Ns"]] + \
           [("mutual-info", "markov", int(N), p, seed) for N in p["markov_Ns"]]


def _mi_unit(exp, kind, N, p, seed):
    from .infotools import block_codes, mi_bias_bound, mutual_information
    from .procgen import build_markov_system, iid_system, sample_paths

    sysm = iid_system([0.5, 0.5]) if kind == "iid" else build_markov_system(p["transitions"])
    paths = sample_paths(sysm, (-N, N), p["samples"], _unit_seed(seed, exp, kind, N))
    a, b = block_codes(paths[:, :N], 2), block_codes(paths[:, N:], 2)
    mi, bias = mutual_information(a, b), mi_bias_bound(a, b)
    prm = {"process": kind, "N": N}
    return [_rec(exp, prm, "plugin_mi", mi), _rec(exp, prm, "bias_bound", bias),
            _rec(exp, prm, "bias_corrected_mi", mi - bias)]


def _cover_units(p, seed):
    return [("cover-lemmas", lemma, int(i), p, seed) for lemma in ("support", "trim", "efficient")
            for i in range(p["instances"])]


def _random_joint(rng, ns, nt, n):
    s = rng.integers(0, ns, n)
    t = (s + rng.integers(0, max(nt // 2, 1), n)) % nt
    w = rng.dirichlet(np.ones(n))
    return w, s, t


def _cover_unit(exp, lemma, i, p, seed):
    from .infotools import (efficient_cover, greedy_support_cover, saturation_coverage,
                            trim_locally_thick)

    rng = np.random.default_rng(_unit_seed(seed, exp, lemma, i))
    prm = {"lemma": lemma, "instance": i}
    if lemma == "support":
        k, n = int(rng.integers(2, 6)), int(rng.integers(3, 12))
        comps = []
        for _ in range(k):
            supp = rng.random(n) < 0.7
            supp[rng.integers(n)] = True
            v = np.where(supp, rng.random(n) + 0.1, 0.0)
            comps.append((v / v.sum(), supp))
        alpha, eps = float(rng.uniform(0.2, 0.7)), float(rng.uniform(0.01, 0.1))
        meas = np.array([c[0] for c in comps])
        mix = meas.mean(axis=0)
        M = float(np.max(np.divide(meas, mix, out=np.zeros_like(meas), where=mix > 0)))
        res = greedy_support_cover(comps, alpha, M, eps)
        ok = res.covered_mass > alpha and len(res.selected) <= M / (1 - alpha - eps)
        return [_rec(exp, prm, "postconditions_hold", float(ok))]
    if lemma == "trim":
        n = int(rng.integers(5, 40))
        w = rng.dirichlet(np.ones(n))
        U = rng.random(n) < 0.6
        U[rng.integers(n)] = True
        labels = rng.integers(0, 5, n)
        alpha = float(rng.uniform(0.55, 0.95))
        V = trim_locally_thick(w, U, labels, alpha)
        mu_u = float(w[U].sum())
        ok = bool(np.all(U[V])) and w[V].sum() >= alpha * mu_u - 1e-12
        for c in np.unique(labels[V]):
            cell = labels == c
            ok = ok and w[U & cell].sum() / w[cell].sum() >= (1 - alpha) * mu_u - 1e-12
        return [_rec(exp, prm, "postconditions_hold", float(ok))]
    n = int(rng.integers(10, 60))
    w, s, t = _random_joint(rng, int(rng.integers(2, 6)), int(rng.integers(2, 6)), n)
    U = rng.random(n) < 0.9
    mu_u = float(w[U].sum())
    alpha = float(rng.uniform(0.3, 1.0)) * mu_u
    eta = float(rng.uniform(0.05, 0.9)) * alpha
    res = efficient_cover(w, s, t, U, alpha, eta)
    ok = res.coverage > mu_u - eta
    return [_rec(exp, prm, "postconditions_hold", float(ok))]


def _fraction_final(name):
    def fin(p, recs):
        out = list(recs)
        groups = sorted({r.params.get("lemma", "") for r in recs})
        for g in groups:
            vals = [r.value for r in recs if r.params.get("lemma", "") == g]
            out.append(_rec(name, {"lemma": g}, "fraction_ok", float(np.mean(vals)) if vals else math.nan))
        return out
    return fin


def _match_units(p, seed):
    return [("matching-extraction", int(i), p, seed) for i in range(p["samples"])]


def _match_unit(exp, i, p, seed):
    from .cantorlab import cover_with_families, extract_matchings, find_adapted_family, make_ladder
    from .procgen import simple_random_walk, simulate_rwrs

    lad = make_ladder(len(p["multipliers"]), multipliers=p["multipliers"])
    r, d = p["r"], len(p["multipliers"])
    Nd = lad.N(d)
    batch = simulate_rwrs(simple_random_walk(), Nd, 1, _unit_seed(seed, exp, i))
    s = batch[0]
    sig = s.sums[s.N : s.N + Nd + 1]
    ell = 1.0
    fam = find_adapted_family(range(Nd // lad.N(r)), sig, lad, r, d, ell)
    cov = cover_with_families(sig, lad, r, d, ell, p["eta"], filters=tuple(p["filters"]))
    mat = extract_matchings(s, s, lad, r, d, ell, p["eta"], p["delta"], filters=tuple(p["filters"]))
    prm = {"sample": i}
    zero = all(np.all(m.shifts.values == 0) for m in mat.matchings)
    cover_ok = all(v for k, v in cov.properties.items() if k.endswith("_ok") or k in ("separated", "adapted"))
    return [_rec(exp, prm, "family_success", float(fam.success)),
            _rec(exp, prm, "cover_success", float(cov.success)),
            _rec(exp, prm, "cover_verified", float(cover_ok)),
            _rec(exp, prm, "matching_success", float(mat.success)),
            _rec(exp, prm, "identity_shifts_zero", float(zero))]


CATALOG: dict[str, Experiment] = {}


def _register(*exps: Experiment) -> None:
    for e in exps:
        CATALOG[e.name] = e


_register(
    Experiment("bernoulli-triviality", "profile of an i.i.d. +-1 process at radius delta*N",
               {"Ns": [32, 64], "m": 200, "runs": 2, "alpha": 2.0, "kappa": 0.5, "kappa_prime": 0.25,
                "delta": 0.1, "depth": 0},
               _bernoulli_units, _bernoulli_unit, _bernoulli_final,
               cost=lambda p: len(p["Ns"]) * p["runs"] * p["m"] ** 2 * max(p["Ns"]), max_cost=1e12),
    Experiment("rotation-bicov", "cov(2d) <= bicov(d) <= cov(d) for a finite rotation",
               {"q": 12, "p": 5, "Ns": [16, 32, 64, 128, 256], "deltas": [0.05, 0.1, 0.2], "a": 0.25},
               _rotation_units, _rotation_unit, cost=lambda p: p["q"], max_cost=20),
    Experiment("rwrs-rate", "log profile versus sqrt(N) for random walks in random sceneries",
               {"alphabets": [2, 4], "Ns": [16, 32, 64], "m": 200, "seeds": 2, "alpha": 2.0, "kappa": 0.5,
                "kappa_prime": 0.25, "delta": 2.0},
               _rate_units, _rate_unit, _rate_final,
               cost=lambda p: len(p["alphabets"]) * p["seeds"] * sum(p["Ns"]) * p["m"] ** 2, max_cost=1e13),
    Experiment("psi-bm", "1/alpha quantiles of the Brownian range overlap",
               {"alphas": [1.0, 1.25, 1.5, 2.0, 4.0, 8.0], "n": 256, "count": 2000, "n_boot": 50},
               _psi_units, _psi_unit, cost=lambda p: p["n"] * p["count"], max_cost=1e10),
    Experiment("meandering", "frequency of meandering simple-random-walk blocks",
               {"M": 16, "Ls": [8, 32, 128], "alphas": [0.25, 0.5], "samples": 500},
               _meander_units, _meander_unit, cost=lambda p: p["M"] * max(p["Ls"]) * p["samples"],
               max_cost=1e10),
    Experiment("dcs-bounds", "integer discrete Cantor set counts against the unit-scale bound",
               {"lengths": [3, 6, 12], "gaps": [[1], [3], [6], [3, 1], [6, 2]]},
               _dcs_units, _dcs_unit,
               cost=lambda p: max(p["lengths"]) ** (2 ** max(len(g) for g in p["gaps"])), max_cost=1e8),
    Experiment("berry-esseen", "sup-CDF gap of normalized simple-random-walk sums",
               {"Ns": [16, 64, 256], "samples": 20000, "exact_up_to": 64},
               _be_units, _be_unit, _be_final, cost=lambda p: sum(p["Ns"]) * p["samples"], max_cost=1e10),
    Experiment("invariance", "KS gaps of walk functionals against Brownian references",
               {"Ns": [64, 256], "samples": 5000},
               _inv_units, _inv_unit, cost=lambda p: sum(p["Ns"]) * p["samples"] * 5, max_cost=1e10),
    Experiment("mutual-info", "plug-in past/future mutual information of block names",
               {"iid_Ns": [4, 8], "markov_Ns": [2, 4, 6, 8], "samples": 20000,
                "transitions": [[0.9, 0.1], [0.2, 0.8]]},
               _mi_units, _mi_unit, cost=lambda p: p["samples"] * 2 ** (2 * max(p["markov_Ns"] + p["iid_Ns"])),
               max_cost=1e14),
    Experiment("cover-lemmas", "postconditions of the support-cover, trimming and efficient-cover routines",
               {"instances": 20}, _cover_units, _cover_unit, _fraction_final("cover-lemmas"),
               cost=lambda p: p["instances"], max_cost=1e5),
    Experiment("matching-extraction", "adapted families, covers and identity matchings on walk samples",
               {"samples": 5, "multipliers": [8, 8, 8], "r": 1, "eta": 0.3, "delta": 0.1,
                "filters": ["smooth"]},
               _match_units, _match_unit, cost=lambda p: p["samples"] * math.prod(p["multipliers"]),
               max_cost=1e8),
)


# ---------------------------------------------------------------------------
# running and writing
# ---------------------------------------------------------------------------

def _call(unit: tuple) -> tuple[list[ReportRecord], float]:
    exp = CATALOG[unit[0]]
    t0 = time.perf_counter()
    recs = exp.run_unit(*unit)
    return recs, time.perf_counter() - t0


def run_experiment(config: ExperimentConfig) -> tuple[list[ReportRecord], dict]:
    """Run all work units of one experiment; returns records and run metadata.

    Raises :class:`BudgetExceeded` before starting if the declared cost of
    the parameters is above the experiment's cap, and as soon as the wall
    time exceeds ``budget_seconds``.
    """
    exp = CATALOG[config.experiment]
    params = {**exp.defaults, **config.params}
    unknown = set(config.params) - set(exp.defaults) - {"budget_seconds"}
    if unknown:
        raise KeyError(f"unknown parameters for {exp.name}: {sorted(unknown)}")
    budget = float(params.pop("budget_seconds", exp.budget_seconds))
    if exp.cost is not None and exp.cost(params) > exp.max_cost:
        raise BudgetExceeded(f"{exp.name}: declared cost {exp.cost(params):.3g} exceeds cap {exp.max_cost:.3g}")
    units = exp.units(params, config.seed)
    t0 = time.perf_counter()
    records: list[ReportRecord] = []
    unit_times: list[float] = []

    def take(recs, secs):
        for r in recs:
            r.seconds = round(secs, 3) if config.timings else None
        records.extend(recs)
        unit_times.append(secs)
        if time.perf_counter() - t0 > budget:
            raise BudgetExceeded(f"{exp.name}: wall time exceeded {budget:.0f}s after {len(unit_times)} units")

    if config.workers == 1:
        for u in units:
            take(*_call(u))
    else:
        with ProcessPoolExecutor(config.workers) as pool:
            # map preserves unit order
            for recs, secs in pool.map(_call, units):
                take(recs, secs)
    if exp.finalize is not None:
        records = exp.finalize(params, records)
    meta = {"experiment": exp.name, "params": params, "seed": config.seed, "units": len(units),
            "wall_seconds": time.perf_counter() - t0}
    return records, meta


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def records_to_csv(records: Sequence[ReportRecord]) -> str:
    """CSV text with columns experiment, parameters (sorted), metric, value, ci_lo, ci_hi, flags, seconds."""
    keys = sorted({k for r in records for k in r.params})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(CSV_HEAD) + keys + list(CSV_TAIL))
    for r in records:
        w.writerow([r.experiment] + [_fmt(r.params.get(k)) for k in keys] +
                   [r.metric, _fmt(r.value), _fmt(r.ci_lo), _fmt(r.ci_hi), ";".join(r.flags), _fmt(r.seconds)])
    return buf.getvalue()


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    return x


def _json_restore(x):
    if isinstance(x, str) and x in ("inf", "-inf", "nan"):
        return float(x)
    if isinstance(x, dict):
        return {k: _json_restore(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_json_restore(v) for v in x]
    return x


def records_to_json(records: Sequence[ReportRecord]) -> str:
    return json.dumps([_json_safe(asdict(r)) for r in records], indent=1, sort_keys=True)


def records_from_json(text: str) -> list[ReportRecord]:
    return [ReportRecord(**_json_restore(d)) for d in json.loads(text)]


def write_outputs(records: Sequence[ReportRecord], fmt: str, out_dir: str | Path,
                  config: ExperimentConfig | None = None, meta: dict | None = None) -> list[Path]:
    """Write records as CSV or JSON plus a manifest; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = config.experiment if config else "records"
    paths = []
    if fmt == "csv":
        p = out / f"{name}.csv"
        p.write_text(records_to_csv(records))
    elif fmt == "json":
        p = out / f"{name}.json"
        p.write_text(records_to_json(records))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    paths.append(p)
    manifest = {"version": __version__, "format": fmt, "records": len(records)}
    if config is not None:
        manifest.update({"config_hash": config.digest(), "seed": config.seed, "experiment": config.experiment,
                         "workers": config.workers})
    if meta is not None:
        manifest["run"] = _json_safe(meta)
    m = out / f"{name}.manifest.json"
    m.write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str))
    paths.append(m)
    return paths


def load_config(path: str | Path | None) -> dict:
    """Read a YAML config (a mapping, optionally with a ``params`` sub-mapping)."""
    if path is None:
        return {}
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise ValueError("config must be a mapping")
    return data


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _catalog_text() -> str:
    return "\n".join(f"{n:22s} {e.description}" for n, e in CATALOG.items())


def _find_acceptance(path: str | None) -> Path | None:
    cands = [Path(path)] if path else [Path.cwd() / "tests" / "test_acceptance.py",
                                         Path(__file__).resolve().parents[2] / "tests" / "test_acceptance.py"]
    return next((c for c in cands if c.exists()), None)


def main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="bicovlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    sub.add_parser("list", help="print the experiment catalog")
    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--experiment", required=True)
    run.add_argument("--config")
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--workers", type=int)
    run.add_argument("--format", choices=("csv", "json"))
    run.add_argument("--timings", action="store_true", help="fill the seconds column (breaks byte identity)")
    ver = sub.add_parser("verify", help="run a test suite")
    ver.add_argument("--suite", default="acceptance", choices=("acceptance",))
    ver.add_argument("--path")
    args = ap.parse_args(argv)

    if args.cmd == "list":
        print(_catalog_text())
        return 0
    if args.cmd == "verify":
        target = _find_acceptance(args.path)
        if target is None:
            print("acceptance suite not found; pass --path", file=sys.stderr)
            return 2
        import pytest

        return int(pytest.main(["-q", "-s", str(target)]))

    if args.experiment not in CATALOG:
        print(f"unknown experiment {args.experiment!r}; available:\n{_catalog_text()}", file=sys.stderr)
        return 2
    try:
        raw = load_config(args.config)
        cfg = ExperimentConfig(
            experiment=args.experiment,
            params=raw.get("params", {}),
            seed=args.seed if args.seed is not None else int(raw.get("seed", 0)),
            out=args.out or raw.get("out", "results"),
            workers=args.workers or int(raw.get("workers", 1)),
            format=args.format or raw.get("format", "csv"),
            timings=args.timings or bool(raw.get("timings", False)),
        )
        records, meta = run_experiment(cfg)
        paths = write_outputs(records, cfg.format, cfg.out, cfg, meta)
    except (BudgetExceeded, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
