import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from schedq.arrival import TrafficConfig, WindowError, generate_traffic
from schedq.distributions import PerturbationSpec, SeedSpec, ServiceSpec, negate
from schedq.workload import (
    REVERSAL_COLUMNS,
    brute_force_workload,
    beta_decomposition,
    customer_work,
    final_workload,
    reversed_max,
    reversed_running_max,
    workload_path,
)


def _sample(spec, T=30.0, h=1.0, rep=0, phase=None, budget=1e-9):
    return generate_traffic(TrafficConfig(h, spec, T, leak_budget=budget), SeedSpec(17, rep), phase=phase)


def test_hand_computed_lindley():
    epochs = np.array([1.0, 1.5, 4.0])
    work = np.array([2.0, 2.0, 1.0])
    # W(1+) = 2, W(1.5+) = 1.5 + 2, W(4+) = 1 + 1
    assert final_workload(epochs, work, 4.0) == 2.0
    assert final_workload(epochs, work, 5.0) == 1.0
    assert final_workload(epochs, work, 7.0) == 0.0
    assert final_workload(np.array([]), np.array([]), 3.0) == 0.0


def test_dd1_lattice():
    s = generate_traffic(TrafficConfig(1.0, PerturbationSpec.point_mass(0.0), 10.0), SeedSpec(0), phase=0.5)
    path = workload_path(s, ServiceSpec.deterministic(1.0), SeedSpec(0), [0.0, 0.5, 0.75, 2.5, 9.9, 10.0])
    assert path.values.tolist() == pytest.approx([0.0, 1.0, 0.75, 1.0, 0.6, 0.5])
    assert path.running_max == 1.0


@settings(max_examples=30, deadline=None)
@given(rep=st.integers(0, 5000), fam=st.sampled_from(["exp", "unif", "normal"]),
       svc=st.sampled_from(["det", "exp", "logn"]))
def test_engine_matches_brute_force(rep, fam, svc):
    spec = {"exp": PerturbationSpec.exponential(1.0), "unif": PerturbationSpec.uniform(-2, 2),
            "normal": PerturbationSpec.normal(0, 1.5)}[fam]
    services = {"det": ServiceSpec.deterministic(1.0), "exp": ServiceSpec("exponential", 1.0),
                "logn": ServiceSpec("lognormal", 1.0, 2.0)}[svc]
    s = _sample(spec, T=25.0, rep=rep)
    seed = SeedSpec(17, rep)
    probes = np.array([0.0, 3.3, 11.0, 17.25, 25.0])
    engine = workload_path(s, services, seed, probes).values
    for t, w in zip(probes, engine):
        assert abs(w - brute_force_workload(s, services, seed, float(t))) <= 1e-9
    w_final = final_workload(s.epochs, customer_work(s, services, seed), 25.0)
    assert w_final == pytest.approx(engine[-1], abs=1e-12)


def test_workload_is_non_negative_and_drains_at_unit_rate():
    s = _sample(PerturbationSpec.exponential(1.0))
    probes = np.linspace(0, 30, 3001)
    w = workload_path(s, ServiceSpec("exponential", 1.0), SeedSpec(17, 0), probes).values
    assert np.all(w >= 0)
    # between probes W can drop by at most the elapsed time
    assert np.all(np.diff(w) >= -(probes[1] - probes[0]) - 1e-12)


def test_probe_validation():
    s = _sample(PerturbationSpec.uniform(-1, 1), T=5.0)
    v = ServiceSpec.deterministic(1.0)
    with pytest.raises(ValueError):
        workload_path(s, v, SeedSpec(0), [2.0, 1.0])
    with pytest.raises(WindowError):
        workload_path(s, v, SeedSpec(0), [1.0, 6.0])
    with pytest.raises(WindowError):
        brute_force_workload(s, v, SeedSpec(0), 7.0)


def test_workload_csv(tmp_path):
    s = _sample(PerturbationSpec.uniform(-1, 1), T=5.0)
    path = workload_path(s, ServiceSpec.deterministic(1.0), SeedSpec(0), [0.0, 2.5, 5.0])
    p = tmp_path / "w.csv"
    path.to_csv(p)
    rows = list(csv.reader(p.open()))
    assert rows[0] == ["kind", "time", "workload"]
    assert sum(r[0] == "probe" for r in rows[1:]) == 3
    assert sum(r[0] == "epoch" for r in rows[1:]) == s.epochs.size
    times = [float(r[1]) for r in rows[1:]]
    assert times == sorted(times)


def _grid_reversed_max(epochs, h, t, n=20001):
    # dense grid plus epochs; Lambda(s) - s peaks at an epoch
    grid = np.union1d(np.linspace(0, t, n), epochs[(epochs > 0) & (epochs <= t)])
    lam = np.searchsorted(epochs[epochs > 0], grid, side="right") * h
    return max(0.0, float(np.max(lam - grid)))


@pytest.mark.parametrize("rep", range(5))
def test_reversed_max_against_grid(rep):
    s = _sample(negate(PerturbationSpec.uniform(-2, 2)), T=40.0, rep=rep)
    assert reversed_max(s.epochs, 1.0, 40.0) == pytest.approx(_grid_reversed_max(s.epochs, 1.0, 40.0))


def test_reversed_max_with_ties():
    # three points at time 1: Lambda(1) = 3h
    assert reversed_max(np.array([1.0, 1.0, 1.0, 5.0]), 1.0, 10.0) == 2.0


def test_reversed_max_equals_forward_on_same_epochs():
    # for V = h the forward workload at t equals the reversed max of the
    # reflected epochs t - a; exact pathwise check of the Loynes argument
    s = _sample(PerturbationSpec.uniform(-2, 2), T=50.0)
    t = 50.0
    work = np.full(s.epochs.size, 1.0)
    fwd = final_workload(s.epochs, work, t)
    refl = np.sort(t - s.epochs)
    assert fwd == pytest.approx(reversed_max(refl, 1.0, t), abs=1e-12)


@pytest.mark.parametrize("spec", [PerturbationSpec.uniform(-2, 2), PerturbationSpec.exponential(1.0),
                                  PerturbationSpec.negated_pareto(1.5), PerturbationSpec.normal(0.3, 2.0)],
                         ids=lambda s: s.family)
@pytest.mark.parametrize("h", [0.5, 1.0])
def test_beta_identity_and_bounds(spec, h):
    for rep in range(5):
        # the Pareto tail needs a looser leak budget to keep the range finite
        sn = _sample(negate(spec), T=20.0, h=h, rep=rep, budget=1e-2)
        for s in np.concatenate([np.linspace(0, 20, 41), sn.epochs]):
            b = beta_decomposition(sn, h, float(s))
            assert b.identity_holds
            direct = int(np.count_nonzero((sn.actual > 0) & (sn.actual <= s)))
            assert b.reversed_count == direct
            assert b.floor_count == math.floor(s / h)
            assert b.beta1 <= b.gamma1
            assert b.beta3 <= b.gamma2
            assert b.beta4 <= b.y_bound
            assert 0 <= b.beta0 <= 1
            assert b.y_bound_displayed >= 0


def test_beta_hand_example():
    # xi = 0, U = 0.5, h = 1: reversed points at j + 0.5
    sn = generate_traffic(TrafficConfig(1.0, PerturbationSpec.point_mass(0.0), 10.0), SeedSpec(0), phase=0.5)
    b = beta_decomposition(sn, 1.0, 3.0)
    # points 0.5, 1.5, 2.5 in (0, 3]: indices 0, 1, 2
    assert (b.reversed_count, b.floor_count) == (3, 3)
    assert (b.beta0, b.beta1, b.beta2, b.beta3, b.beta4) == (1, 0, 0, 0, 1)
    # gamma2 counts xi_1 = 0 >= 0; y_bound counts j = 3 only (-xi_3 = 0 > -h)
    assert (b.gamma1, b.gamma2, b.y_bound) == (0, 1, 1)


def test_reversed_running_max_diagnostics(tmp_path):
    spec = PerturbationSpec.uniform(-2, 2)
    sn = _sample(negate(spec), T=30.0)
    grid = np.linspace(0, 30, 61)
    d = reversed_running_max(sn, 1.0, 30.0, grid)
    assert d.running_max == pytest.approx(_grid_reversed_max(sn.epochs, 1.0, 30.0))
    assert len(d.grid) == 61
    p = tmp_path / "r.csv"
    d.to_csv(p, 1.0)
    rows = list(csv.reader(p.open()))
    assert tuple(rows[0]) == REVERSAL_COLUMNS
    assert float(rows[-1][5]) <= d.running_max + 1e-12


def test_reversed_running_max_needs_sd1():
    sn = _sample(PerturbationSpec.uniform(-1, 1), T=5.0)
    with pytest.raises(ValueError):
        reversed_running_max(sn, 1.0, 5.0, services=ServiceSpec("exponential", 1.0))
    with pytest.raises(WindowError):
        reversed_running_max(sn, 1.0, 6.0)


def test_lindley_spec_example():
    epochs = np.array([0.5, 0.6])
    work = np.array([1.0, 1.0])
    assert final_workload(epochs[:1], work[:1], 0.5) == 1.0
    assert final_workload(epochs, work, 0.6) == pytest.approx(1.9)
    assert final_workload(epochs, work, 2.0) == pytest.approx(0.5)
    assert final_workload(np.array([1.0]), np.array([2.0]), 3.5) == 0.0


def test_reversed_max_lattice():
    sn = generate_traffic(TrafficConfig(1.0, PerturbationSpec.point_mass(0.0), 10.0), SeedSpec(0), phase=0.5)
    for t in (0.5, 1.0, 3.7, 10.0):
        assert reversed_max(sn.epochs, 1.0, t) == 0.5
    assert reversed_max(sn.epochs, 1.0, 0.4) == 0.0


def test_beta_spec_example():
    sn = generate_traffic(TrafficConfig(1.0, PerturbationSpec.point_mass(0.0), 10.0), SeedSpec(0), phase=0.5)
    b = beta_decomposition(sn, 1.0, 2.3)
    assert b.reversed_count - b.floor_count == 0
    assert (b.beta1, b.beta2, b.beta3) == (0, 0, 0)
    # customer 2 at 2.5 is the only one of 1..k(s) beyond s; customer 0 at 0.5 is inside
    assert (b.beta4, b.beta0) == (1, 1)
    assert b.identity_holds


def test_beta3_vanishes_for_non_positive_perturbations():
    spec = PerturbationSpec.negated_exponential(1.0)
    for rep in range(5):
        sn = _sample(negate(spec), T=20.0, rep=rep)
        assert all(beta_decomposition(sn, 1.0, float(s)).beta3 == 0 for s in np.linspace(0, 20, 81))


def test_displayed_y_bound_can_fail():
    # every customer early by 0.9: reversed points at j + 0.5 + 0.9
    sn = generate_traffic(TrafficConfig(1.0, PerturbationSpec.point_mass(0.9), 10.0), SeedSpec(0),
                          phase=0.5)
    # s = 5, k = 5: customers 4 and 5 (at 5.4 and 6.4) lie beyond s
    b = beta_decomposition(sn, 1.0, 5.0)
    assert b.beta4 == 2
    assert b.y_bound == 2
    # the lateness-based count only sees j = 1 (-0.9 > -h)
    assert b.y_bound_displayed == 1
