"""Time-stationary scheduled traffic on a finite window [0, T].

Customer ``j`` is scheduled at ``(j + U) h`` and actually arrives at
``(j + U) h + xi_j``.  The doubly-infinite index line is cut to
``[-m, ceil(T/h) + m]`` where the margin ``m`` is chosen from the
perturbation's tails (see :func:`leak_bound`).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .distributions import (
    PerturbationSpec,
    SeedSpec,
    Stream,
    indexed_uniforms,
    negate,
    sample_perturbations,
)

__all__ = [
    "ARRIVAL_COLUMNS",
    "TrafficConfig",
    "TrafficSample",
    "TruncationError",
    "WindowError",
    "auto_margin",
    "count",
    "decomposition_check",
    "early_count",
    "effective_margin",
    "generate_traffic",
    "late_count",
    "leak_bound",
    "mgf_bound",
    "schedule_count",
]

ARRIVAL_COLUMNS = ("index", "scheduled_time", "perturbation", "actual_time", "in_window")


class TruncationError(RuntimeError):
    """No admissible truncation margin could be found."""


class WindowError(ValueError):
    """A query time falls outside the simulated window."""


@dataclass(frozen=True)
class TrafficConfig:
    h: float
    perturbation: PerturbationSpec
    window_end: float
    truncation_margin: int = 0
    leak_budget: float = 1e-9
    max_margin: int = 1_000_000

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not self.window_end > 0:
            raise ValueError("window_end must be positive")
        if self.truncation_margin < 0:
            raise ValueError("truncation_margin must be non-negative")
        if not 0 < self.leak_budget < 1:
            raise ValueError("leak_budget must lie in (0, 1)")


@lru_cache(maxsize=1024)
def leak_bound(spec: PerturbationSpec, h: float, m: int) -> float:
    """Bound on the expected number of points from outside the index range
    ``[-m, ceil(T/h) + m]`` that land in [0, T].

    A customer ``k >= m`` slots before the window needs ``xi >= k h``; summing
    over ``k`` gives ``P(xi+ >= m h) + E(xi+ - m h)^+ / h``, and likewise for
    the left tail on the far side.  The bound does not depend on T.
    """
    if m < 1:
        return math.inf
    x = m * h
    total = 0.0
    for s in (spec, negate(spec)):
        total += s.upper_tail(x) + s.upper_excess(x) / h
    return total


@lru_cache(maxsize=256)
def auto_margin(spec: PerturbationSpec, h: float, budget: float = 1e-9, max_margin: int = 1_000_000) -> int | None:
    """Smallest margin whose :func:`leak_bound` is within ``budget``; None if
    that needs more than ``max_margin`` slots."""
    if leak_bound(spec, h, max_margin) > budget:
        return None
    lo, hi = 0, 1
    while leak_bound(spec, h, hi) > budget:
        lo, hi = hi, min(2 * hi, max_margin)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if leak_bound(spec, h, mid) <= budget:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True, eq=False)
class TrafficSample:
    """One realized arrival path.

    ``xi[i]`` is the perturbation of customer ``j_lo + i``.  ``epochs`` are the
    actual times inside [0, T], sorted, and ``epoch_index`` the customer
    indices in the same order (ties broken by customer index).
    """

    h: float
    window_end: float
    phase: float
    j_lo: int
    j_hi: int
    xi: np.ndarray
    perturbation: PerturbationSpec
    margin: int
    leak_bound: float
    scheduled: np.ndarray = field(init=False, repr=False)
    actual: np.ndarray = field(init=False, repr=False)
    epochs: np.ndarray = field(init=False, repr=False)
    epoch_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        idx = np.arange(self.j_lo, self.j_hi + 1)
        sched = (idx + self.phase) * self.h
        actual = sched + self.xi
        inside = np.flatnonzero((actual >= 0.0) & (actual <= self.window_end))
        order = inside[np.argsort(actual[inside], kind="stable")]
        for name, arr in (("scheduled", sched), ("actual", actual),
                          ("epochs", actual[order]), ("epoch_index", idx[order])):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.xi.setflags(write=False)

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.j_lo, self.j_hi + 1)

    @property
    def in_window(self) -> np.ndarray:
        return (self.actual >= 0.0) & (self.actual <= self.window_end)

    def to_csv(self, path) -> None:
        """One row per customer index in range, columns ``ARRIVAL_COLUMNS``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(ARRIVAL_COLUMNS)
            for row in zip(self.indices.tolist(), self.scheduled.tolist(), self.xi.tolist(),
                           self.actual.tolist(), self.in_window.astype(int).tolist()):
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3]), row[4]])


def effective_margin(cfg: TrafficConfig) -> int:
    """Margin actually used: the larger of the configured and automatic ones."""
    auto = auto_margin(cfg.perturbation, cfg.h, cfg.leak_budget, cfg.max_margin)
    if auto is not None:
        return max(cfg.truncation_margin, auto)
    if cfg.truncation_margin == 0:
        raise TruncationError(
            f"{cfg.perturbation.family} tails need more than {cfg.max_margin} slots to reach "
            f"leak budget {cfg.leak_budget}; raise leak_budget or set truncation_margin"
        )
    return cfg.truncation_margin


def generate_traffic(cfg: TrafficConfig, seed: SeedSpec, phase: float | None = None) -> TrafficSample:
    """Realize the scheduled traffic on ``[0, cfg.window_end]``.

    ``phase`` forces U (deterministic tests); otherwise U is drawn from the
    U-stream of ``seed``.
    """
    m = effective_margin(cfg)
    if phase is None:
        phase = float(indexed_uniforms(seed.with_stream(Stream.U), 0, 0)[0])
    elif not 0.0 <= phase < 1.0:
        raise ValueError("phase must lie in [0, 1)")
    j_lo = -m
    j_hi = math.ceil(cfg.window_end / cfg.h) + m
    xi = sample_perturbations(cfg.perturbation, (j_lo, j_hi), seed)
    return TrafficSample(
        h=cfg.h, window_end=cfg.window_end, phase=phase, j_lo=j_lo, j_hi=j_hi, xi=xi,
        perturbation=cfg.perturbation, margin=m, leak_bound=leak_bound(cfg.perturbation, cfg.h, m),
    )


def _check_window(sample: TrafficSample, *times: float) -> None:
    for t in times:
        if not 0.0 <= t <= sample.window_end:
            raise WindowError(f"time {t} outside window [0, {sample.window_end}]")


def count(sample: TrafficSample, a: float, b: float, closed: str = "both") -> int:
    """Number of arrival epochs in the interval from a to b.

    ``closed`` is one of ``"both"`` ([a, b]), ``"right"`` ((a, b]),
    ``"left"`` ([a, b)) or ``"neither"``.
    """
    _check_window(sample, a, b)
    if a > b:
        raise ValueError("need a <= b")
    if closed not in ("both", "right", "left", "neither"):
        raise ValueError(f"bad closed flag {closed!r}")
    ep = sample.epochs
    lo = np.searchsorted(ep, a, side="left" if closed in ("both", "left") else "right")
    hi = np.searchsorted(ep, b, side="right" if closed in ("both", "right") else "left")
    return int(max(hi - lo, 0))


def schedule_count(sample: TrafficSample, t: float) -> int:
    """Number of scheduled times in (0, t]."""
    s = sample.scheduled
    return int(np.searchsorted(s, t, side="right") - np.searchsorted(s, 0.0, side="right"))


def early_count(sample: TrafficSample, t: float) -> int:
    """E(t): customers scheduled after t who arrived at or before t."""
    _check_window(sample, t)
    cut = np.searchsorted(sample.scheduled, t, side="right")
    return int(np.count_nonzero(sample.actual[cut:] <= t))


def late_count(sample: TrafficSample, t: float) -> int:
    """L(t): customers scheduled at or before t who arrive after t."""
    _check_window(sample, t)
    cut = np.searchsorted(sample.scheduled, t, side="right")
    return int(np.count_nonzero(sample.actual[:cut] > t))


def decomposition_check(sample: TrafficSample, t: float) -> bool:
    """Exact test of N(t) = #sched in (0,t] + (E(t) - L(t)) - (E(0) - L(0))."""
    n = count(sample, 0.0, t, closed="right")
    rhs = (schedule_count(sample, t)
           + early_count(sample, t) - late_count(sample, t)
           - early_count(sample, 0.0) + late_count(sample, 0.0))
    return n == rhs


def mgf_bound(theta: float, mean_tail: float, h: float) -> float:
    """exp((e^theta - 1)(mean_tail / h + 1)), the bound on E exp(theta E(0))
    (mean_tail = E xi-) or on E exp(theta L(0)) (mean_tail = E xi+)."""
    if theta <= 0 or h <= 0 or mean_tail < 0:
        raise ValueError("need theta > 0, h > 0, mean_tail >= 0")
    return math.exp(math.expm1(theta) * (mean_tail / h + 1.0))
