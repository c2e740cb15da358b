"""Workload of the unit-rate single-server queue fed by a :class:`TrafficSample`.

The engine is the forward (Lindley) recursion over arrival epochs.  An
independent brute-force maximization and the time-reversed running maximum
used for S/D/1 stability live here as well.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .arrival import TrafficSample, WindowError
from .distributions import SeedSpec, ServiceSpec, sample_services

__all__ = [
    "REVERSAL_COLUMNS",
    "WORKLOAD_COLUMNS",
    "BetaCounts",
    "ReversalDiagnostics",
    "WorkloadPath",
    "beta_decomposition",
    "brute_force_workload",
    "customer_work",
    "final_workload",
    "reversed_max",
    "reversed_running_max",
    "workload_path",
]

WORKLOAD_COLUMNS = ("kind", "time", "workload")
REVERSAL_COLUMNS = (
    "s", "reversed_count", "floor_count", "drift", "netput", "running_max",
    "beta0", "beta1", "beta2", "beta3", "beta4", "y_bound", "y_bound_displayed",
)


def customer_work(sample: TrafficSample, services: ServiceSpec, seed: SeedSpec) -> np.ndarray:
    """Service requirement of each arrival epoch, in epoch order."""
    v = sample_services(services, (sample.j_lo, sample.j_hi), seed)
    return v[sample.epoch_index - sample.j_lo]


def _check_probes(sample: TrafficSample, probes) -> np.ndarray:
    p = np.asarray(probes, dtype=np.float64).reshape(-1)
    if p.size and np.any(np.diff(p) < 0):
        raise ValueError("probes must be sorted ascending")
    if p.size and (p[0] < 0.0 or p[-1] > sample.window_end):
        raise WindowError(f"probes must lie in [0, {sample.window_end}]")
    return p


@dataclass(frozen=True)
class WorkloadPath:
    probes: np.ndarray
    values: np.ndarray
    epochs: np.ndarray
    post_jump: np.ndarray  # W just after each arrival
    running_max: float

    def rows(self):
        out = [("probe", t, w) for t, w in zip(self.probes.tolist(), self.values.tolist())]
        out += [("epoch", t, w) for t, w in zip(self.epochs.tolist(), self.post_jump.tolist())]
        out.sort(key=lambda r: (r[1], r[0] == "probe"))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(WORKLOAD_COLUMNS)
            for kind, t, val in self.rows():
                w.writerow([kind, repr(t), repr(val)])


def _lindley(epochs: list, work: list):
    w = 0.0
    last = 0.0
    post = []
    for a, v in zip(epochs, work):
        w -= a - last
        if w < 0.0:
            w = 0.0
        w += v
        last = a
        post.append(w)
    return post


def workload_path(sample: TrafficSample, services: ServiceSpec, seed: SeedSpec, probes) -> WorkloadPath:
    """Evaluate W at each probe time by the forward recursion, W(0) = 0."""
    p = _check_probes(sample, probes)
    epochs = sample.epochs
    work = customer_work(sample, services, seed)
    post = np.asarray(_lindley(epochs.tolist(), work.tolist()), dtype=np.float64)
    values = np.zeros_like(p)
    if epochs.size:
        # last arrival at or before each probe
        k = np.searchsorted(epochs, p, side="right") - 1
        seen = k >= 0
        kk = k[seen]
        values[seen] = np.maximum(post[kk] - (p[seen] - epochs[kk]), 0.0)
    running = float(post.max()) if post.size else 0.0
    return WorkloadPath(p, values, epochs.copy(), post, running)


def final_workload(epochs: np.ndarray, work: np.ndarray, t: float) -> float:
    """W(t) from epochs already restricted to [0, t]; the experiments' hot path."""
    w = 0.0
    last = 0.0
    for a, v in zip(epochs.tolist(), work.tolist()):
        w -= a - last
        if w < 0.0:
            w = 0.0
        w += v
        last = a
    return max(w - (t - last), 0.0)


def brute_force_workload(sample: TrafficSample, services: ServiceSpec, seed: SeedSpec, t: float) -> float:
    """max over s in [0, t] of (work arriving in [s, t]) - (t - s).

    The objective is piecewise linear in s and jumps only at arrivals, so the
    candidates 0, t and every arrival epoch <= t suffice.
    """
    if not 0.0 <= t <= sample.window_end:
        raise WindowError(f"time {t} outside window [0, {sample.window_end}]")
    v = sample_services(services, (sample.j_lo, sample.j_hi), seed)
    arrivals = [(a, v[j - sample.j_lo]) for a, j in zip(sample.actual.tolist(), sample.indices.tolist())
                if 0.0 <= a <= t]
    best = 0.0
    for s in [0.0, t] + [a for a, _ in arrivals]:
        total = 0.0
        for a, work in arrivals:
            if a >= s:
                total += work
        best = max(best, total - (t - s))
    return best


# ---------------------------------------------------------------------------
# time reversal (S/D/1)


def reversed_max(epochs: np.ndarray, h: float, t: float) -> float:
    """max over s in [0, t] of h * #{epochs in (0, s]} - s.

    Lambda(s) - s decreases between jumps, so only s = 0 and the epochs in
    (0, t] need to be visited.
    """
    lo = np.searchsorted(epochs, 0.0, side="right")
    hi = np.searchsorted(epochs, t, side="right")
    e = epochs[lo:hi]
    if e.size == 0:
        return 0.0
    # epochs sharing a time all count by that time
    ranks = np.searchsorted(e, e, side="right")
    return max(0.0, float(np.max(h * ranks - e)))


@dataclass(frozen=True)
class BetaCounts:
    """Index counts splitting Lambda(s)/h - floor(s/h).

    ``beta0`` is customer 0, which neither the negative-index sum nor the
    positive-index sums cover; ``beta4`` runs over 1 <= j <= k(s).
    ``y_bound`` is a bound on ``beta4`` in terms of earliness;
    ``y_bound_displayed`` is the lateness-based count sum over j >= 1 of
    I(xi_{k-j} > (j - 2) h), kept for comparison only since it does not
    bound ``beta4``.
    """

    s: float
    reversed_count: int
    floor_count: int
    beta0: int
    beta1: int
    beta2: int
    beta3: int
    beta4: int
    gamma1: int
    gamma2: int
    y_bound: int
    y_bound_displayed: int

    @property
    def identity_holds(self) -> bool:
        lhs = self.reversed_count - self.floor_count
        return lhs == self.beta0 + self.beta1 + self.beta2 - self.beta3 - self.beta4


def _gammas(sample_negated: TrafficSample, h: float) -> tuple[int, int]:
    # original perturbation is xi = -(stored draw)
    idx = sample_negated.indices
    orig = -sample_negated.xi
    neg = idx <= -1
    pos = idx >= 1
    gamma1 = int(np.count_nonzero(-orig[neg] > (-idx[neg] - 1) * h))
    gamma2 = int(np.count_nonzero(orig[pos] >= (idx[pos] - 1) * h))
    return gamma1, gamma2


def beta_decomposition(sample_negated: TrafficSample, h: float, s: float, _gammas_cache=None) -> BetaCounts:
    """Split the reversed arrival count in (0, s] by customer index.

    ``sample_negated`` realizes the points ``(j + U) h - xi_j``, i.e. it was
    generated from the negated perturbation law.
    """
    if not 0.0 <= s <= sample_negated.window_end:
        raise WindowError(f"time {s} outside window [0, {sample_negated.window_end}]")
    idx = sample_negated.indices
    p = sample_negated.actual
    k = math.floor(s / h)
    in_s = (p > 0.0) & (p <= s)
    neg = idx <= -1
    mid = (idx >= 1) & (idx <= k)
    beta0 = int(np.count_nonzero(in_s & (idx == 0)))
    beta1 = int(np.count_nonzero(in_s & neg))
    beta2 = int(np.count_nonzero(in_s & (idx > k)))
    beta3 = int(np.count_nonzero(mid & (p <= 0.0)))
    beta4 = int(np.count_nonzero(mid & (p > s)))
    # beta4 <= sum over 1 <= j <= k of I(-xi_j > (k - j - 1) h); customer j
    # lands after s >= k h only if it is early by more than (k - j - 1) h
    orig = -sample_negated.xi
    j = np.arange(1, k + 1)
    y_bound = int(np.count_nonzero(-orig[j - sample_negated.j_lo] > (k - j - 1) * h))
    jd = np.arange(1, k - sample_negated.j_lo + 1)
    y_disp = int(np.count_nonzero(orig[k - jd - sample_negated.j_lo] > (jd - 2) * h))
    g1, g2 = _gammas_cache if _gammas_cache is not None else _gammas(sample_negated, h)
    return BetaCounts(
        s=s, reversed_count=int(np.count_nonzero(in_s)), floor_count=k,
        beta0=beta0, beta1=beta1, beta2=beta2, beta3=beta3, beta4=beta4,
        gamma1=g1, gamma2=g2, y_bound=y_bound, y_bound_displayed=y_disp,
    )


@dataclass(frozen=True)
class ReversalDiagnostics:
    t: float
    running_max: float  # M(t)
    grid: tuple  # BetaCounts at each eval_grid point
    gamma1: int
    gamma2: int

    def to_csv(self, path, h: float) -> None:
        running = 0.0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REVERSAL_COLUMNS)
            for b in self.grid:
                net = h * b.reversed_count - b.s
                running = max(running, net)
                w.writerow([repr(b.s), b.reversed_count, b.floor_count, repr(b.s), repr(net), repr(running),
                            b.beta0, b.beta1, b.beta2, b.beta3, b.beta4, b.y_bound,
                            b.y_bound_displayed])


def reversed_running_max(sample_negated: TrafficSample, h: float, t: float, eval_grid=(),
                         services: ServiceSpec | None = None) -> ReversalDiagnostics:
    """M(t) = max over s in [0, t] of Lambda(s) - s on the reversed traffic,
    with the beta/Gamma counts at each ``eval_grid`` point.

    Only defined for S/D/1: ``services`` must be deterministic (default V = h).
    """
    if services is not None and (services.family != "deterministic" or not math.isclose(services.mean, h)):
        raise ValueError("reversed running max requires deterministic services equal to h")
    if not 0.0 <= t <= sample_negated.window_end:
        raise WindowError(f"time {t} outside window [0, {sample_negated.window_end}]")
    grid = sorted(float(s) for s in eval_grid)
    if grid and (grid[0] < 0.0 or grid[-1] > t):
        raise WindowError("eval_grid must lie in [0, t]")
    gammas = _gammas(sample_negated, h)
    counts = tuple(beta_decomposition(sample_negated, h, s, gammas) for s in grid)
    m = reversed_max(sample_negated.epochs, h, t)
    if counts:
        # grid points are candidates too; never above the epoch-based max
        m = max(m, max(h * b.reversed_count - b.s for b in counts))
    return ReversalDiagnostics(t=t, running_max=m, grid=counts, gamma1=gammas[0], gamma2=gammas[1])
