"""Empirical distributions and the reference laws used by the limit tests."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

__all__ = [
    "EcdfSummary",
    "ecdf",
    "ecdf_eval",
    "ecdf_sup_distance",
    "half_normal_cdf",
    "ks_distance",
    "quantile",
    "reflected_walk_endpoints",
    "std_normal_cdf",
]


@dataclass(frozen=True, eq=False)
class EcdfSummary:
    values: np.ndarray

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=np.float64).reshape(-1))
        if v.size == 0:
            raise ValueError("empirical distribution of an empty sample")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return int(self.values.size)

    def __call__(self, x):
        return ecdf_eval(self, x)


def ecdf(sample) -> EcdfSummary:
    return EcdfSummary(sample)


def ecdf_eval(e: EcdfSummary, x):
    """Fraction of the sample <= x (right-continuous step function)."""
    r = np.searchsorted(e.values, x, side="right") / e.n
    return float(r) if np.ndim(r) == 0 else r


def quantile(e: EcdfSummary, p: float) -> float:
    """Order statistic number ceil(p n), clamped to [1, n]."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p={p} outside [0, 1]")
    i = min(max(math.ceil(p * e.n), 1), e.n)
    return float(e.values[i - 1])


def std_normal_cdf(x):
    """Phi(x), via the complementary error function (accurate far below 1e-7)."""
    return special.ndtr(x)


def half_normal_cdf(x, sigma: float):
    """cdf of sigma |Z|: zero for x < 0, else 2 Phi(x / sigma) - 1.

    This is the law of sigma X(1) for reflected Brownian motion X started at 0.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x, dtype=np.float64)
    # erf form keeps precision near 0
    out = np.where(x < 0, 0.0, special.erf(np.maximum(x, 0.0) / (sigma * math.sqrt(2.0))))
    return float(out) if out.ndim == 0 else out


def ks_distance(e: EcdfSummary, reference_cdf: Callable) -> float:
    """Exact one-sample Kolmogorov-Smirnov statistic sup |F_n - F|.

    ``reference_cdf`` may be vectorized or scalar-only, and need not be
    continuous: both sides are compared at every sample point and just to
    its left.
    """
    x = np.unique(e.values)
    below = np.nextafter(x, -np.inf)
    f = _evaluate(reference_cdf, x)
    f_left = _evaluate(reference_cdf, below)
    n = e.n
    fn = np.searchsorted(e.values, x, side="right") / n
    fn_left = np.searchsorted(e.values, x, side="left") / n
    return float(max(np.max(np.abs(fn - f)), np.max(np.abs(fn_left - f_left))))


def _evaluate(cdf: Callable, x: np.ndarray) -> np.ndarray:
    try:
        f = np.asarray(cdf(x), dtype=np.float64)
        if f.shape == x.shape:
            return f
    except (TypeError, ValueError):
        pass
    return np.fromiter((cdf(v) for v in x), dtype=np.float64, count=x.size)


def ecdf_sup_distance(a: EcdfSummary, b: EcdfSummary) -> float:
    """sup_x |F_a(x) - F_b(x)| between two empirical cdfs (handles ties)."""
    grid = np.union1d(a.values, b.values)
    return float(np.max(np.abs(ecdf_eval(a, grid) - ecdf_eval(b, grid))))


def reflected_walk_endpoints(reps: int, steps: int, rng: np.random.Generator, chunk: int = 250) -> np.ndarray:
    """steps**-0.5 times the endpoint of a Gaussian walk reflected at 0.

    The reflected endpoint is S_n - min(0, S_1, ..., S_n); this approaches
    |Z| as ``steps`` grows.
    """
    out = np.empty(reps)
    for start in range(0, reps, chunk):
        m = min(chunk, reps - start)
        s = np.cumsum(rng.standard_normal((m, steps)), axis=1)
        low = np.minimum(s.min(axis=1), 0.0)
        out[start : start + m] = (s[:, -1] - low) / math.sqrt(steps)
    return out
