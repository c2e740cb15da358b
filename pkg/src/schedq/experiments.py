"""Monte Carlo experiments with structured, reproducible reports.

Replication ``r`` at scale position ``i`` always uses the substream
``SeedSpec(master_seed, i * replications + r)``, and results are collected
in replication order, so a report does not depend on the worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np

from .arrival import (
    TrafficConfig,
    decomposition_check,
    early_count,
    effective_margin,
    generate_traffic,
    late_count,
    leak_bound,
    mgf_bound,
)
from .distributions import (
    PerturbationSpec,
    SeedSpec,
    ServiceSpec,
    Stream,
    indexed_uniforms,
    negate,
    xi_minus_bound,
    xi_plus_bound,
)
from .stats import (
    ecdf,
    ecdf_sup_distance,
    half_normal_cdf,
    ks_distance,
    quantile,
)
from .workload import (
    beta_decomposition,
    brute_force_workload,
    customer_work,
    final_workload,
    reversed_max,
    workload_path,
)

__all__ = [
    "DEFAULTS",
    "KINDS",
    "ExperimentConfig",
    "ExperimentReport",
    "bounded_case_bound",
    "mgf_estimate",
    "prop1_statistic",
    "run_clt",
    "run_experiment",
    "run_identity",
    "run_loynes",
    "run_prop1",
    "run_reversal",
    "run_stability",
]

KINDS = ("prop1", "clt", "stability", "reversal", "identity", "loynes")

# Pilot-calibrated finite-scale tolerances; every one can be overridden.
DEFAULTS = {
    "prop1": {"scales": [100, 1000, 10000, 100000], "replications": 200,
              "thresholds": {"final_median": 1.0}},
    "clt": {"scales": [2500, 10000], "replications": 2000,
            "thresholds": {"ks": 0.08, "scaling_low": 1.5, "scaling_high": 2.5}},
    "stability": {"scales": [1000, 10000], "replications": 2000,
                  "thresholds": {"cdf_distance": 0.05, "growth_ratio": 2.0}},
    "reversal": {"scales": [1000, 10000], "replications": 2000,
                 "thresholds": {"cdf_distance": 0.05, "growth_ratio": 2.0}},
    "identity": {"scales": [50], "replications": 1000,
                 "thresholds": {"workload_error": 1e-9}},
    "loynes": {"scales": [200], "replications": 5000,
               "thresholds": {"ks": 0.03}},
}

IDENTITY_POINTS = 100
ORACLE_PROBES = 5


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    h: float
    perturbation: PerturbationSpec
    services: ServiceSpec | None = None
    scales: tuple = ()
    replications: int = 0
    master_seed: int = 0
    thresholds: dict = field(default_factory=dict)
    workers: int = 1
    truncation_margin: int = 0
    leak_budget: float = 1e-9
    expectation: str | None = None
    phase: float | None = None
    probes: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS + ("generate", "workload"):
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        d = DEFAULTS.get(self.kind, {"scales": [100], "replications": 1, "thresholds": {}})
        if self.services is None:
            object.__setattr__(self, "services", ServiceSpec.deterministic(self.h))
        if not self.scales:
            object.__setattr__(self, "scales", tuple(d["scales"]))
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if self.replications == 0:
            object.__setattr__(self, "replications", d["replications"])
        object.__setattr__(self, "thresholds", {**d["thresholds"], **dict(self.thresholds)})
        object.__setattr__(self, "probes", tuple(float(p) for p in self.probes))
        if not self.h > 0:
            raise ValueError("h must be positive")
        if any(b <= a for a, b in zip(self.scales, self.scales[1:])) or self.scales[0] <= 0:
            raise ValueError("scales must be positive and strictly increasing")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if any(not v > 0 for v in self.thresholds.values()):
            raise ValueError("thresholds must be positive")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.expectation not in (None, "stable", "unstable"):
            raise ValueError("expectation must be 'stable', 'unstable' or null")

    def traffic(self, window_end: float | None = None) -> TrafficConfig:
        return TrafficConfig(
            h=self.h, perturbation=self.perturbation,
            window_end=self.scales[-1] if window_end is None else window_end,
            truncation_margin=self.truncation_margin, leak_budget=self.leak_budget,
        )

    def seed(self, scale_pos: int, rep: int) -> SeedSpec:
        return SeedSpec(self.master_seed, scale_pos * self.replications + rep)

    def to_dict(self) -> dict:
        # worker count is left out: reports must not depend on it
        d = {
            "kind": self.kind,
            "h": self.h,
            "perturbation": self.perturbation.to_dict(),
            "services": self.services.to_dict(),
            "scales": list(self.scales),
            "replications": self.replications,
            "master_seed": self.master_seed,
            "thresholds": dict(sorted(self.thresholds.items())),
            "truncation_margin": self.truncation_margin,
            "leak_budget": self.leak_budget,
            "expectation": self.expectation,
        }
        if self.phase is not None:
            d["phase"] = self.phase
        if self.probes:
            d["probes"] = list(self.probes)
        return d


@dataclass
class ExperimentReport:
    config: dict
    per_scale: list
    verdicts: dict
    leak_bound: float
    elapsed_seconds: float | None = None
    statistics: list = field(default_factory=list, repr=False)  # (scale, replication, value)

    @property
    def passed(self) -> bool:
        return bool(self.verdicts.get("passed", False))

    def to_dict(self, timing: bool = True) -> dict:
        return {
            "config": self.config,
            "per_scale": self.per_scale,
            "verdicts": self.verdicts,
            "leak_bound": self.leak_bound,
            "elapsed_seconds": self.elapsed_seconds if timing else None,
        }

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def statistics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("scale", "replication", "value"))
        for scale, rep, value in self.statistics:
            w.writerow((scale if isinstance(scale, str) else repr(scale), rep, repr(value)))
        return buf.getvalue()


def _map(fn, items, workers: int) -> list:
    items = list(items)
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def _summary(values) -> dict:
    e = ecdf(values)
    return {"median": quantile(e, 0.5), "q10": quantile(e, 0.1), "q90": quantile(e, 0.9),
            "mean": float(np.mean(e.values)), "max": float(e.values[-1])}


def _leak(cfg: ExperimentConfig) -> float:
    return float(leak_bound(cfg.perturbation, cfg.h, effective_margin(cfg.traffic())))


def _finish(cfg, per_scale, verdicts, stats, t0, leak=None) -> ExperimentReport:
    return ExperimentReport(
        config=cfg.to_dict(), per_scale=per_scale, verdicts=verdicts,
        leak_bound=_leak(cfg) if leak is None else leak,
        elapsed_seconds=time.perf_counter() - t0, statistics=stats,
    )


# ---------------------------------------------------------------------------
# per-replication work items (module level so they pickle)


def prop1_statistic(epochs: np.ndarray, h: float, n: float) -> float:
    """max over u in [0, n] of |h N(u) - u| with N(u) = #epochs in (0, u].

    Each epoch is visited from both sides; with the endpoints 0 and n this
    covers every local extremum of the piecewise-linear path.
    """
    e = epochs[(epochs > 0.0) & (epochs <= n)]
    k = np.searchsorted(e, e, side="right")  # count by each epoch, ties included
    k_left = np.searchsorted(e, e, side="left")
    best = abs(h * e.size - n)
    if e.size:
        best = max(best, float(np.max(np.abs(h * k - e))), float(np.max(np.abs(h * k_left - e))))
    return best


def _prop1_rep(cfg: ExperimentConfig, pos: int, n: float, rep: int) -> float:
    s = generate_traffic(cfg.traffic(n), cfg.seed(pos, rep))
    return prop1_statistic(s.epochs, cfg.h, n) / math.log(n)


def _workload_rep(cfg: ExperimentConfig, pos: int, t: float, rep: int) -> float:
    seed = cfg.seed(pos, rep)
    s = generate_traffic(cfg.traffic(t), seed)
    return final_workload(s.epochs, customer_work(s, cfg.services, seed), t)


def _reversed_rep(cfg: ExperimentConfig, pos: int, t: float, rep: int) -> float:
    s = generate_traffic(cfg.traffic(t), cfg.seed(pos, rep))
    return reversed_max(s.epochs, cfg.h, t)


def _identity_rep(cfg: ExperimentConfig, pos: int, window: float, rep: int):
    seed = cfg.seed(pos, rep)
    tc = cfg.traffic(window)
    s = generate_traffic(tc, seed)
    u = indexed_uniforms(seed.with_stream(Stream.PROBE), 0, 2 * IDENTITY_POINTS - 1)
    ts = u[:IDENTITY_POINTS] * window
    # grid boundaries: every scheduled and actual time in the window, plus 0 and T
    edges = np.concatenate([s.scheduled, s.actual, [0.0, window]])
    edges = edges[(edges >= 0.0) & (edges <= window)]
    decomp = sum(not decomposition_check(s, float(t)) for t in np.concatenate([ts, edges]))

    sn = generate_traffic(replace(tc, perturbation=negate(cfg.perturbation)), seed)
    ss = u[IDENTITY_POINTS:] * window
    sedges = np.concatenate([sn.actual, np.arange(0.0, window + cfg.h, cfg.h)])
    sedges = sedges[(sedges >= 0.0) & (sedges <= window)]
    beta = 0
    gamma = 0
    for x in np.concatenate([ss, sedges]):
        b = beta_decomposition(sn, cfg.h, float(x))
        beta += not b.identity_holds
        gamma += b.beta1 > b.gamma1 or b.beta3 > b.gamma2 or b.beta4 > b.y_bound

    probes = np.sort(np.append(ts[:ORACLE_PROBES], window))
    engine = workload_path(s, cfg.services, seed, probes).values
    oracle = [brute_force_workload(s, cfg.services, seed, float(t)) for t in probes]
    err = float(np.max(np.abs(engine - np.asarray(oracle))))
    return decomp, beta, gamma, err


def _collect(fn, cfg: ExperimentConfig, pos: int, scale: float) -> list:
    return _map(partial(fn, cfg, pos, scale), range(cfg.replications), cfg.workers)


# ---------------------------------------------------------------------------
# experiments


def run_prop1(cfg: ExperimentConfig) -> ExperimentReport:
    """Normalized maximal discrepancy max |h N(ns) - ns| / log n across n."""
    if any(n <= 1 for n in cfg.scales):
        raise ValueError("prop1 scales need n > 1 so that log n > 0")
    t0 = time.perf_counter()
    per_scale, stats, medians = [], [], []
    for pos, n in enumerate(cfg.scales):
        vals = _collect(_prop1_rep, cfg, pos, n)
        stats += [(n, r, v) for r, v in enumerate(vals)]
        summ = _summary(vals)
        medians.append(summ["median"])
        per_scale.append({"scale": n, "replications": len(vals), **summ})
    tail = medians[-3:]
    decreasing = all(b < a for a, b in zip(tail, tail[1:]))
    below = medians[-1] < cfg.thresholds["final_median"]
    verdicts = {"median_decreasing": decreasing, "final_median_below": below,
                "passed": decreasing and below}
    return _finish(cfg, per_scale, verdicts, stats, t0)


def run_clt(cfg: ExperimentConfig) -> ExperimentReport:
    """Compare t^{-1/2} W(t) with the half-normal law of sigma X(1)."""
    v = cfg.services
    if v.variance == 0.0:
        raise ValueError("deterministic services have a degenerate diffusion limit; "
                         "use the stability experiment")
    if not math.isclose(v.mean, cfg.h, rel_tol=1e-12):
        raise ValueError(f"critical loading needs E V = h, got E V = {v.mean}, h = {cfg.h}")
    sigma = math.sqrt(v.variance / cfg.h)
    ref = partial(half_normal_cdf, sigma=sigma)
    t0 = time.perf_counter()
    per_scale, stats, medians = [], [], {}
    for pos, t in enumerate(cfg.scales):
        w = _collect(_workload_rep, cfg, pos, t)
        stats += [(t, r, x) for r, x in enumerate(w)]
        scaled = np.asarray(w) / math.sqrt(t)
        ks = ks_distance(ecdf(scaled), ref)
        summ = _summary(w)
        medians[t] = summ["median"]
        per_scale.append({"scale": t, "replications": len(w), "sigma": sigma, "ks": ks, **summ})
    th = cfg.thresholds
    ratios = {}
    for t in cfg.scales:
        if 4 * t in medians:
            ratios[repr(t)] = medians[4 * t] / medians[t] if medians[t] > 0 else math.inf
    ks_ok = per_scale[-1]["ks"] <= th["ks"]
    scaling_ok = all(th["scaling_low"] <= r <= th["scaling_high"] for r in ratios.values())
    verdicts = {"ks_at_largest_scale": ks_ok, "median_scaling_ratios": ratios,
                "median_scaling_ok": scaling_ok, "passed": ks_ok and scaling_ok}
    return _finish(cfg, per_scale, verdicts, stats, t0)


def bounded_case_bound(spec: PerturbationSpec, h: float) -> float | None:
    """a.s. bound h(2 floor(c/h) + 3) on W when xi lies in [-c, c]; None if
    either tail is unbounded."""
    c = max(xi_plus_bound(spec), xi_minus_bound(spec))
    if math.isinf(c):
        return None
    return h * (2 * math.floor(c / h) + 3)


def _require_sd1(cfg: ExperimentConfig) -> None:
    v = cfg.services
    if v.family != "deterministic" or not math.isclose(v.mean, cfg.h, rel_tol=1e-12):
        raise ValueError("this experiment needs S/D/1 traffic: deterministic services equal to h")


def run_stability(cfg: ExperimentConfig) -> ExperimentReport:
    """Check whichever branch of the S/D/1 stability dichotomy applies."""
    _require_sd1(cfg)
    branch = "stable" if math.isfinite(xi_plus_bound(cfg.perturbation)) else "unstable"
    bound = bounded_case_bound(cfg.perturbation, cfg.h)
    t0 = time.perf_counter()
    per_scale, stats, samples = [], [], []
    for pos, t in enumerate(cfg.scales):
        w = _collect(_workload_rep, cfg, pos, t)
        stats += [(t, r, x) for r, x in enumerate(w)]
        samples.append(ecdf(w))
        row = {"scale": t, "replications": len(w), **_summary(w)}
        if bound is not None:
            row["bound"] = bound
            row["bound_exceedances"] = int(sum(x > bound for x in w))
        per_scale.append(row)
    th = cfg.thresholds
    medians = [r["median"] for r in per_scale]
    dist = ecdf_sup_distance(samples[-2], samples[-1]) if len(samples) > 1 else None
    growth = medians[-1] / medians[0] if medians[0] > 0 else math.inf
    increasing = all(b > a for a, b in zip(medians, medians[1:]))
    verdicts = {
        "branch": branch,
        "expectation": cfg.expectation,
        "cdf_distance": dist,
        "median_growth_ratio": growth if math.isfinite(growth) else None,
    }
    if branch == "stable":
        cdf_ok = dist is not None and dist <= th["cdf_distance"]
        bound_ok = None if bound is None else all(r["bound_exceedances"] == 0 for r in per_scale)
        verdicts.update(cdf_stabilized=cdf_ok, bound_respected=bound_ok)
        branch_ok = cdf_ok and bound_ok is not False
    else:
        grow_ok = increasing and growth >= th["growth_ratio"]
        verdicts.update(median_increasing=increasing, median_growth_ok=grow_ok)
        branch_ok = grow_ok
    verdicts["branch_checks_passed"] = branch_ok
    verdicts["passed"] = branch_ok and cfg.expectation in (None, branch)
    return _finish(cfg, per_scale, verdicts, stats, t0)


def run_reversal(cfg: ExperimentConfig) -> ExperimentReport:
    """Stability of the traffic and of its time reversal (law of -xi)."""
    _require_sd1(cfg)
    t0 = time.perf_counter()
    fwd = run_stability(replace(cfg, kind="stability", expectation=None))
    rev = run_stability(replace(cfg, kind="stability", expectation=None,
                                perturbation=negate(cfg.perturbation)))
    applicable = fwd.verdicts["branch"] != rev.verdicts["branch"]
    per_scale = ([{"direction": "forward", **r} for r in fwd.per_scale]
                 + [{"direction": "reversed", **r} for r in rev.per_scale])
    verdicts = {
        "forward": fwd.verdicts,
        "reversed": rev.verdicts,
        "asymmetry": "exhibited" if applicable else "asymmetry not applicable",
        "passed": fwd.passed and rev.passed,
    }
    stats = [("forward",) + s for s in fwd.statistics] + [("reversed",) + s for s in rev.statistics]
    stats = [(f"{d}:{scale!r}", r, v) for d, scale, r, v in stats]
    leak = max(fwd.leak_bound, rev.leak_bound)
    return _finish(cfg, per_scale, verdicts, stats, t0, leak=leak)


def run_identity(cfg: ExperimentConfig) -> ExperimentReport:
    """Exact per-path identities plus the engine/oracle workload comparison."""
    t0 = time.perf_counter()
    per_scale, stats = [], []
    total = {"decomposition": 0, "beta": 0, "gamma": 0}
    worst = 0.0
    for pos, window in enumerate(cfg.scales):
        out = _collect(_identity_rep, cfg, pos, window)
        d = sum(o[0] for o in out)
        b = sum(o[1] for o in out)
        g = sum(o[2] for o in out)
        err = max(o[3] for o in out)
        stats += [(window, r, o[3]) for r, o in enumerate(out)]
        total["decomposition"] += d
        total["beta"] += b
        total["gamma"] += g
        worst = max(worst, err)
        per_scale.append({"scale": window, "replications": len(out), "decomposition_violations": d,
                          "beta_identity_violations": b, "gamma_bound_violations": g,
                          "max_workload_error": err})
    err_ok = worst <= cfg.thresholds["workload_error"]
    verdicts = {
        "decomposition_violations": total["decomposition"],
        "beta_identity_violations": total["beta"],
        "gamma_bound_violations": total["gamma"],
        "max_workload_error": worst,
        "workload_error_ok": err_ok,
        "passed": not any(total.values()) and err_ok,
    }
    return _finish(cfg, per_scale, verdicts, stats, t0)


def run_loynes(cfg: ExperimentConfig) -> ExperimentReport:
    """Forward W(t) versus the reversed running max M(t) on independent paths."""
    _require_sd1(cfg)
    neg = replace(cfg, perturbation=negate(cfg.perturbation))
    t0 = time.perf_counter()
    per_scale, stats = [], []
    for pos, t in enumerate(cfg.scales):
        w = _collect(_workload_rep, cfg, 2 * pos, t)
        m = _collect(_reversed_rep, neg, 2 * pos + 1, t)
        stats += [(t, r, x) for r, x in enumerate(w)]
        stats += [(t, cfg.replications + r, x) for r, x in enumerate(m)]
        dist = ecdf_sup_distance(ecdf(w), ecdf(m))
        per_scale.append({"scale": t, "replications": len(w), "ks": dist,
                          "forward_median": quantile(ecdf(w), 0.5),
                          "reversed_median": quantile(ecdf(m), 0.5)})
    ok = all(r["ks"] <= cfg.thresholds["ks"] for r in per_scale)
    return _finish(cfg, per_scale, {"ks_ok": ok, "passed": ok}, stats, t0)


RUNNERS = {
    "prop1": run_prop1,
    "clt": run_clt,
    "stability": run_stability,
    "reversal": run_reversal,
    "identity": run_identity,
    "loynes": run_loynes,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    try:
        runner = RUNNERS[cfg.kind]
    except KeyError:
        raise ValueError(f"{cfg.kind!r} is not a Monte Carlo experiment") from None
    return runner(cfg)


# ---------------------------------------------------------------------------
# exponential moments of E(0), L(0)


def _el_rep(tc: TrafficConfig, master_seed: int, rep: int) -> tuple[int, int]:
    s = generate_traffic(tc, SeedSpec(master_seed, rep))
    return early_count(s, 0.0), late_count(s, 0.0)


def mgf_estimate(spec: PerturbationSpec, h: float, theta: float, replications: int,
                 master_seed: int = 0, workers: int = 1, z: float = 2.3263478740408408) -> dict:
    """Monte Carlo estimates of E exp(theta E(0)) and E exp(theta L(0)).

    Each comes with a one-sided upper confidence bound (mean + z sd / sqrt(n);
    the default z is the 0.99 normal quantile) and the analytic bound.
    """
    tc = TrafficConfig(h=h, perturbation=spec, window_end=h)
    counts = np.asarray(_map(partial(_el_rep, tc, master_seed), range(replications), workers))
    out = {}
    for col, name, tail in ((0, "early", spec.mean_minus), (1, "late", spec.mean_plus)):
        x = np.exp(theta * counts[:, col])
        mean = float(x.mean())
        sd = float(x.std(ddof=1)) if replications > 1 else 0.0
        out[name] = {"mean": mean, "upper": mean + z * sd / math.sqrt(replications),
                     "bound": mgf_bound(theta, tail, h)}
    return out
