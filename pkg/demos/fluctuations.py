"""
Counting fluctuations of scheduled traffic
==========================================

Arrivals scheduled every h time units but each one late or early by an
i.i.d. amount.  The discrepancy between the arrival count and the schedule
stays tiny: its running maximum grows no faster than log n.
"""

import math

import numpy as np

from schedq.arrival import TrafficConfig, count, generate_traffic
from schedq.distributions import PerturbationSpec, SeedSpec
from schedq.experiments import prop1_statistic

h = 1.0
xi = PerturbationSpec.exponential(1.0)

# a single path on [0, 20]
sample = generate_traffic(TrafficConfig(h, xi, 20.0), SeedSpec(2024))
print("phase U =", round(sample.phase, 4))
print("first arrivals:", np.round(sample.epochs[:6], 3))
print("N(0, 20] =", count(sample, 0.0, 20.0, closed="right"))

# the normalized maximal discrepancy for growing horizons
for n in (1e2, 1e3, 1e4, 1e5):
    vals = []
    for r in range(40):
        s = generate_traffic(TrafficConfig(h, xi, n), SeedSpec(7, r))
        vals.append(prop1_statistic(s.epochs, h, n) / math.log(n))
    print(f"n = {n:>8.0f}   median max|hN(ns) - ns| / log n = {np.median(vals):.3f}")

# a renewal process with the same rate for comparison: discrepancy ~ sqrt(n)
rng = np.random.default_rng(0)
for n in (1e2, 1e4):
    gaps = rng.exponential(h, size=int(2 * n))
    t = np.cumsum(gaps)
    t = t[t <= n]
    print(f"Poisson, n = {n:>6.0f}: max discrepancy / log n = "
          f"{prop1_statistic(t, h, n) / math.log(n):.3f}")
