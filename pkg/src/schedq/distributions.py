"""Perturbation and service-time laws, plus counter-based random streams.

Every draw is addressed by an integer customer index.  Uniforms for index
``j`` come from a Philox block keyed on ``(master_seed, replication_index,
stream_label)`` with the block number placed in the counter, so any
sub-range of indices can be regenerated without touching the rest of the
line.  Variates are produced by inverse transform from those uniforms.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping

import numpy as np
from scipy import special

__all__ = [
    "BLOCK_SIZE",
    "InadmissibleSpecError",
    "PERTURBATION_FAMILIES",
    "SERVICE_FAMILIES",
    "PerturbationSpec",
    "SeedSpec",
    "ServiceSpec",
    "Stream",
    "indexed_uniforms",
    "negate",
    "sample_perturbations",
    "sample_services",
    "xi_minus_bound",
    "xi_plus_bound",
]

BLOCK_SIZE = 4096
_MASK64 = (1 << 64) - 1


class InadmissibleSpecError(ValueError):
    """Raised for parameterizations outside the finite-mean regime."""


class Stream(enum.IntEnum):
    XI = 0
    V = 1
    U = 2
    PROBE = 3


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    replication_index: int = 0
    stream_label: int = Stream.XI

    def __post_init__(self):
        if self.replication_index < 0:
            raise ValueError("replication_index must be non-negative")
        if self.stream_label < 0:
            raise ValueError("stream_label must be non-negative")

    def with_stream(self, label: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, self.replication_index, int(label))


@lru_cache(maxsize=4096)
def _philox_key(master_seed: int, replication_index: int, stream_label: int) -> tuple[int, int]:
    m = master_seed & _MASK64
    ss = np.random.SeedSequence([m, replication_index, stream_label])
    k = ss.generate_state(2, np.uint64)
    return int(k[0]), int(k[1])


def _zigzag(b: int) -> int:
    return 2 * b if b >= 0 else -2 * b - 1


def _block_uniforms(key: tuple[int, int], block: int) -> np.ndarray:
    bitgen = np.random.Philox(
        key=np.array(key, dtype=np.uint64),
        counter=np.array([0, 0, _zigzag(block), 0], dtype=np.uint64),
    )
    raw = bitgen.random_raw(BLOCK_SIZE)
    # midpoint of a 53-bit grid cell: strictly inside (0, 1)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def indexed_uniforms(seed: SeedSpec, lo: int, hi: int) -> np.ndarray:
    """Uniforms on (0, 1) for the integer indices ``lo..hi`` inclusive."""
    if hi < lo:
        raise ValueError(f"empty index range [{lo}, {hi}]")
    key = _philox_key(int(seed.master_seed), int(seed.replication_index), int(seed.stream_label))
    b_lo, b_hi = lo // BLOCK_SIZE, hi // BLOCK_SIZE
    if b_lo == b_hi:
        u = _block_uniforms(key, b_lo)
    else:
        u = np.concatenate([_block_uniforms(key, b) for b in range(b_lo, b_hi + 1)])
    start = lo - b_lo * BLOCK_SIZE
    return u[start : start + (hi - lo + 1)]


# ---------------------------------------------------------------------------
# perturbation laws

PERTURBATION_FAMILIES = {
    "point-mass": ("value",),
    "uniform": ("a", "b"),
    "exponential": ("mean",),
    "negated-exponential": ("mean",),
    "shifted-pareto": ("alpha", "beta"),
    "two-sided-pareto": ("weight_right", "weight_left", "alpha_right", "beta_right", "alpha_left", "beta_left"),
    "normal": ("mu", "sigma"),
}


def _p_right(p):
    return p["weight_right"] / (p["weight_right"] + p["weight_left"])


def _pareto_sf(x, alpha, beta):
    return (1.0 + x / beta) ** (-alpha)


def _pareto_excess(x, alpha, beta):
    # E[(P - x)^+] for P >= 0 with P(P > y) = (1 + y/beta)^-alpha, x >= 0
    return beta / (alpha - 1.0) * (1.0 + x / beta) ** (1.0 - alpha)


def _pareto_ppf(u, alpha, beta):
    return beta * np.expm1(-np.log1p(-u) / alpha)


@dataclass(frozen=True)
class PerturbationSpec:
    """Law of a single perturbation xi.

    ``params`` holds the family-specific parameters listed in
    ``PERTURBATION_FAMILIES``.  A two-sided Pareto is a sign mixture with
    right/left weights (normalized on use); one with zero left weight is
    stored as ``shifted-pareto`` so that :func:`negate` is an exact involution.
    """

    family: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in PERTURBATION_FAMILIES:
            raise InadmissibleSpecError(f"unknown perturbation family {self.family!r}")
        names = PERTURBATION_FAMILIES[self.family]
        missing = [n for n in names if n not in self.params]
        extra = [n for n in self.params if n not in names]
        if missing or extra:
            raise InadmissibleSpecError(
                f"{self.family} takes parameters {names}; missing {missing}, unexpected {extra}"
            )
        p = {n: float(self.params[n]) for n in names}
        if not all(math.isfinite(v) for v in p.values()):
            raise InadmissibleSpecError("parameters must be finite")
        self._validate(p)
        if self.family == "two-sided-pareto" and p["weight_left"] == 0.0:
            object.__setattr__(self, "family", "shifted-pareto")
            p = {"alpha": p["alpha_right"], "beta": p["beta_right"]}
        object.__setattr__(self, "params", p)

    def _validate(self, p):
        fam = self.family
        if fam == "uniform" and not p["a"] < p["b"]:
            raise InadmissibleSpecError("uniform requires a < b")
        if fam in ("exponential", "negated-exponential") and p["mean"] <= 0:
            raise InadmissibleSpecError("exponential mean must be positive")
        if fam == "normal" and p["sigma"] <= 0:
            raise InadmissibleSpecError("normal sigma must be positive")
        alphas = [v for k, v in p.items() if k.startswith("alpha")]
        betas = [v for k, v in p.items() if k.startswith("beta")]
        if any(a <= 1.0 for a in alphas):
            raise InadmissibleSpecError(
                "Pareto tail index must exceed 1: the perturbation needs E|xi| < infinity"
            )
        if any(b <= 0 for b in betas):
            raise InadmissibleSpecError("Pareto scale beta must be positive")
        if fam == "two-sided-pareto" and not (
            p["weight_right"] >= 0 and p["weight_left"] >= 0 and p["weight_right"] + p["weight_left"] > 0
        ):
            raise InadmissibleSpecError("two-sided weights must be non-negative and not both zero")

    def __hash__(self):
        return hash((self.family, tuple(sorted(self.params.items()))))

    def __eq__(self, other):
        if not isinstance(other, PerturbationSpec):
            return NotImplemented
        return self.family == other.family and dict(self.params) == dict(other.params)

    # convenience constructors
    @classmethod
    def point_mass(cls, value=0.0):
        return cls("point-mass", {"value": value})

    @classmethod
    def uniform(cls, a, b):
        return cls("uniform", {"a": a, "b": b})

    @classmethod
    def exponential(cls, mean=1.0):
        return cls("exponential", {"mean": mean})

    @classmethod
    def negated_exponential(cls, mean=1.0):
        return cls("negated-exponential", {"mean": mean})

    @classmethod
    def shifted_pareto(cls, alpha, beta=1.0):
        return cls("shifted-pareto", {"alpha": alpha, "beta": beta})

    @classmethod
    def negated_pareto(cls, alpha, beta=1.0):
        return cls(
            "two-sided-pareto",
            {"weight_right": 0.0, "weight_left": 1.0, "alpha_right": alpha, "beta_right": beta,
             "alpha_left": alpha, "beta_left": beta},
        )

    @classmethod
    def normal(cls, mu=0.0, sigma=1.0):
        return cls("normal", {"mu": mu, "sigma": sigma})

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PerturbationSpec":
        return cls(d["family"], dict(d.get("params", {})))

    # moments
    @property
    def mean(self) -> float:
        p, fam = self.params, self.family
        if fam == "point-mass":
            return p["value"]
        if fam == "uniform":
            return 0.5 * (p["a"] + p["b"])
        if fam == "exponential":
            return p["mean"]
        if fam == "negated-exponential":
            return -p["mean"]
        if fam == "shifted-pareto":
            return p["beta"] / (p["alpha"] - 1.0)
        if fam == "two-sided-pareto":
            right = p["beta_right"] / (p["alpha_right"] - 1.0)
            left = p["beta_left"] / (p["alpha_left"] - 1.0)
            pr = _p_right(p)
            return pr * right - (1.0 - pr) * left
        return p["mu"]

    @property
    def variance(self) -> float:
        p, fam = self.params, self.family
        if fam == "point-mass":
            return 0.0
        if fam == "uniform":
            return (p["b"] - p["a"]) ** 2 / 12.0
        if fam in ("exponential", "negated-exponential"):
            return p["mean"] ** 2
        if fam == "normal":
            return p["sigma"] ** 2
        if fam == "shifted-pareto":
            a, b = p["alpha"], p["beta"]
            if a <= 2.0:
                return math.inf
            return b * b * a / ((a - 1.0) ** 2 * (a - 2.0))
        pr = _p_right(p)
        second = 0.0
        for w, a, b in ((pr, p["alpha_right"], p["beta_right"]),
                        (1.0 - pr, p["alpha_left"], p["beta_left"])):
            if w == 0.0:
                continue
            if a <= 2.0:
                return math.inf
            second += w * 2.0 * b * b / ((a - 1.0) * (a - 2.0))
        return second - self.mean**2

    @property
    def mean_plus(self) -> float:
        """E[max(xi, 0)]."""
        return self.upper_excess(0.0)

    @property
    def mean_minus(self) -> float:
        """E[max(-xi, 0)]."""
        return negate(self).upper_excess(0.0)

    # right-tail functionals, x >= 0
    def upper_tail(self, x: float) -> float:
        """P(xi >= x) for x >= 0."""
        if x < 0:
            raise ValueError("upper_tail is defined for x >= 0")
        p, fam = self.params, self.family
        if fam == "point-mass":
            return 1.0 if p["value"] >= x else 0.0
        if fam == "uniform":
            a, b = p["a"], p["b"]
            return float(min(1.0, max(0.0, (b - x) / (b - a))))
        if fam == "exponential":
            return math.exp(-x / p["mean"])
        if fam == "negated-exponential":
            return 0.0
        if fam == "shifted-pareto":
            return _pareto_sf(x, p["alpha"], p["beta"])
        if fam == "two-sided-pareto":
            if x == 0.0:
                return _p_right(p)
            return _p_right(p) * _pareto_sf(x, p["alpha_right"], p["beta_right"])
        return float(special.ndtr((p["mu"] - x) / p["sigma"]))

    def upper_excess(self, x: float) -> float:
        """E[(xi - x)^+] for x >= 0."""
        if x < 0:
            raise ValueError("upper_excess is defined for x >= 0")
        p, fam = self.params, self.family
        if fam == "point-mass":
            return max(p["value"] - x, 0.0)
        if fam == "uniform":
            a, b = p["a"], p["b"]
            if x >= b:
                return 0.0
            if x <= a:
                return 0.5 * (a + b) - x
            return (b - x) ** 2 / (2.0 * (b - a))
        if fam == "exponential":
            return p["mean"] * math.exp(-x / p["mean"])
        if fam == "negated-exponential":
            return 0.0
        if fam == "shifted-pareto":
            return _pareto_excess(x, p["alpha"], p["beta"])
        if fam == "two-sided-pareto":
            return _p_right(p) * _pareto_excess(x, p["alpha_right"], p["beta_right"])
        d, s = p["mu"] - x, p["sigma"]
        return float(d * special.ndtr(d / s) + s * math.exp(-0.5 * (d / s) ** 2) / math.sqrt(2 * math.pi))

    def ppf(self, u: np.ndarray) -> np.ndarray:
        """Inverse cdf applied to uniforms on (0, 1)."""
        u = np.asarray(u, dtype=np.float64)
        p, fam = self.params, self.family
        if fam == "point-mass":
            return np.full_like(u, p["value"])
        if fam == "uniform":
            return p["a"] + (p["b"] - p["a"]) * u
        if fam == "exponential":
            return -p["mean"] * np.log1p(-u)
        if fam == "negated-exponential":
            return p["mean"] * np.log1p(-u)
        if fam == "shifted-pareto":
            return _pareto_ppf(u, p["alpha"], p["beta"])
        if fam == "two-sided-pareto":
            q = 1.0 - _p_right(p)
            out = np.empty_like(u)
            left = u < q
            # u in (0, q): left branch, smaller u means more negative
            if q > 0:
                out[left] = -_pareto_ppf(1.0 - u[left] / q, p["alpha_left"], p["beta_left"])
            if q < 1:
                out[~left] = _pareto_ppf((u[~left] - q) / (1.0 - q), p["alpha_right"], p["beta_right"])
            return out
        return p["mu"] + p["sigma"] * special.ndtri(u)


def negate(spec: PerturbationSpec) -> PerturbationSpec:
    """Law of -xi."""
    p, fam = spec.params, spec.family
    if fam == "point-mass":
        return PerturbationSpec.point_mass(-p["value"] + 0.0)
    if fam == "uniform":
        return PerturbationSpec.uniform(-p["b"] + 0.0, -p["a"] + 0.0)
    if fam == "exponential":
        return PerturbationSpec.negated_exponential(p["mean"])
    if fam == "negated-exponential":
        return PerturbationSpec.exponential(p["mean"])
    if fam == "shifted-pareto":
        return PerturbationSpec.negated_pareto(p["alpha"], p["beta"])
    if fam == "two-sided-pareto":
        return PerturbationSpec(
            "two-sided-pareto",
            {"weight_right": p["weight_left"], "weight_left": p["weight_right"],
             "alpha_right": p["alpha_left"], "beta_right": p["beta_left"],
             "alpha_left": p["alpha_right"], "beta_left": p["beta_right"]},
        )
    return PerturbationSpec.normal(-p["mu"] + 0.0, p["sigma"])


def xi_plus_bound(spec: PerturbationSpec) -> float:
    """Essential supremum of max(xi, 0); ``math.inf`` when unbounded."""
    p, fam = spec.params, spec.family
    if fam == "point-mass":
        return max(p["value"], 0.0)
    if fam == "uniform":
        return max(p["b"], 0.0)
    if fam == "negated-exponential":
        return 0.0
    if fam == "two-sided-pareto" and p["weight_right"] == 0.0:
        return 0.0
    return math.inf


def xi_minus_bound(spec: PerturbationSpec) -> float:
    return xi_plus_bound(negate(spec))


def sample_perturbations(spec: PerturbationSpec, index_range: tuple[int, int], seed: SeedSpec) -> np.ndarray:
    """Draw xi_j for every j in the inclusive ``index_range``.

    The value for index ``j`` depends only on ``(seed, j, spec)``.
    """
    lo, hi = index_range
    if hi < lo:
        raise ValueError(f"empty index range [{lo}, {hi}]")
    return spec.ppf(indexed_uniforms(seed.with_stream(Stream.XI), lo, hi))


# ---------------------------------------------------------------------------
# service laws

SERVICE_FAMILIES = ("deterministic", "exponential", "uniform", "lognormal")


@dataclass(frozen=True)
class ServiceSpec:
    family: str
    mean: float
    variance: float | None = None

    def __post_init__(self):
        if self.family not in SERVICE_FAMILIES:
            raise InadmissibleSpecError(f"unknown service family {self.family!r}")
        if not (self.mean > 0 and math.isfinite(self.mean)):
            raise InadmissibleSpecError("service mean must be positive and finite")
        var = self.variance
        if var is None:
            var = {"deterministic": 0.0, "exponential": self.mean**2}.get(self.family)
            if var is None:
                raise InadmissibleSpecError(f"{self.family} services need an explicit variance")
        var = float(var)
        if var < 0 or not math.isfinite(var):
            raise InadmissibleSpecError("service variance must be finite and non-negative")
        if (var == 0.0) != (self.family == "deterministic"):
            raise InadmissibleSpecError("variance is zero exactly for deterministic services")
        if self.family == "exponential" and not math.isclose(var, self.mean**2):
            raise InadmissibleSpecError("exponential services have variance mean**2")
        if self.family == "uniform" and math.sqrt(3.0 * var) > self.mean:
            raise InadmissibleSpecError("uniform services would take negative values")
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "variance", var)

    @classmethod
    def deterministic(cls, value: float) -> "ServiceSpec":
        return cls("deterministic", value, 0.0)

    def to_dict(self) -> dict:
        return {"family": self.family, "mean": self.mean, "variance": self.variance}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ServiceSpec":
        return cls(d["family"], d["mean"], d.get("variance"))

    def ppf(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        m, v = self.mean, self.variance
        if self.family == "deterministic":
            return np.full_like(u, m)
        if self.family == "exponential":
            return -m * np.log1p(-u)
        if self.family == "uniform":
            half = math.sqrt(3.0 * v)
            return (m - half) + 2.0 * half * u
        s2 = math.log1p(v / m**2)
        return np.exp(math.log(m) - 0.5 * s2 + math.sqrt(s2) * special.ndtri(u))


def sample_services(spec: ServiceSpec, index_range: tuple[int, int], seed: SeedSpec) -> np.ndarray:
    """Service requirement V_j for each customer index in ``index_range``."""
    lo, hi = index_range
    if hi < lo:
        raise ValueError(f"empty index range [{lo}, {hi}]")
    if spec.family == "deterministic":
        return np.full(hi - lo + 1, spec.mean)
    return spec.ppf(indexed_uniforms(seed.with_stream(Stream.V), lo, hi))
