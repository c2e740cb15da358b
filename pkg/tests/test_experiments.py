import csv
import io
import json
import math

import numpy as np
import pytest

from schedq.arrival import TrafficConfig, generate_traffic
from schedq.distributions import PerturbationSpec, SeedSpec, ServiceSpec, negate
from schedq.experiments import (
    ExperimentConfig,
    bounded_case_bound,
    mgf_estimate,
    prop1_statistic,
    run_experiment,
)

UNIF2 = PerturbationSpec.uniform(-2.0, 2.0)


def test_bounded_case_bound():
    assert bounded_case_bound(UNIF2, 1.0) == 7.0
    assert bounded_case_bound(PerturbationSpec.uniform(-0.5, 2.5), 1.0) == 7.0
    assert bounded_case_bound(PerturbationSpec.uniform(-1, 1), 0.5) == 3.5
    assert bounded_case_bound(PerturbationSpec.exponential(1.0), 1.0) is None
    assert bounded_case_bound(PerturbationSpec.negated_pareto(1.5), 1.0) is None


def _prop1_brute(epochs, h, n):
    e = np.sort(epochs[(epochs > 0) & (epochs <= n)])
    cands = [0.0, n] + [x for x in e] + [np.nextafter(x, -np.inf) for x in e]
    return max(abs(h * np.count_nonzero(e <= u) - u) for u in cands if 0 <= u <= n)


@pytest.mark.parametrize("rep", range(4))
def test_prop1_statistic_against_brute_force(rep):
    s = generate_traffic(TrafficConfig(1.0, PerturbationSpec.exponential(1.0), 60.0), SeedSpec(4, rep))
    assert prop1_statistic(s.epochs, 1.0, 60.0) == pytest.approx(_prop1_brute(s.epochs, 1.0, 60.0), abs=1e-9)


def test_prop1_statistic_lattice():
    # points at 0.5, 1.5, ...: |N(u) - u| peaks at 0.5 just before/after each point
    e = np.arange(10) + 0.5
    assert prop1_statistic(e, 1.0, 10.0) == pytest.approx(0.5)


def test_config_defaults_and_validation():
    cfg = ExperimentConfig("clt", 1.0, PerturbationSpec.uniform(-1, 1))
    assert cfg.scales == (2500.0, 10000.0) and cfg.replications == 2000
    assert cfg.services == ServiceSpec.deterministic(1.0)
    assert cfg.thresholds["ks"] == 0.08
    cfg2 = ExperimentConfig("clt", 1.0, PerturbationSpec.uniform(-1, 1), thresholds={"ks": 0.1})
    assert cfg2.thresholds["ks"] == 0.1 and cfg2.thresholds["scaling_low"] == 1.5
    bad = [dict(kind="nope"), dict(h=0.0), dict(scales=(10, 5)), dict(replications=-1),
           dict(thresholds={"ks": 0.0}), dict(workers=0), dict(expectation="maybe")]
    for kw in bad:
        args = {"kind": "clt", "h": 1.0, "perturbation": UNIF2, **kw}
        with pytest.raises(ValueError):
            ExperimentConfig(**args)


def test_seed_layout():
    cfg = ExperimentConfig("identity", 1.0, UNIF2, scales=(10, 20), replications=7, master_seed=3)
    assert cfg.seed(0, 6) == SeedSpec(3, 6)
    assert cfg.seed(1, 0) == SeedSpec(3, 7)


def test_report_shape_and_csv():
    cfg = ExperimentConfig("stability", 1.0, UNIF2, scales=(50, 200), replications=30)
    rep = run_experiment(cfg)
    d = json.loads(rep.to_json())
    assert set(d) == {"config", "per_scale", "verdicts", "leak_bound", "elapsed_seconds"}
    assert "workers" not in d["config"]
    assert d["elapsed_seconds"] > 0
    assert json.loads(rep.to_json(timing=False))["elapsed_seconds"] is None
    rows = list(csv.reader(io.StringIO(rep.statistics_csv())))
    assert rows[0] == ["scale", "replication", "value"]
    assert len(rows) == 1 + 60
    assert d["verdicts"]["branch"] == "stable"
    assert d["per_scale"][0]["bound"] == 7.0
    assert d["leak_bound"] == 0.0


def test_worker_count_does_not_change_report():
    cfg = ExperimentConfig("loynes", 1.0, UNIF2, scales=(30,), replications=40)
    a = run_experiment(cfg).to_json(timing=False)
    b = run_experiment(ExperimentConfig("loynes", 1.0, UNIF2, scales=(30,), replications=40,
                                        workers=3)).to_json(timing=False)
    assert a == b


def test_master_seed_changes_report():
    a = run_experiment(ExperimentConfig("prop1", 1.0, UNIF2, scales=(10, 20, 40), replications=20))
    b = run_experiment(ExperimentConfig("prop1", 1.0, UNIF2, scales=(10, 20, 40), replications=20,
                                        master_seed=1))
    assert a.statistics != b.statistics


def test_stability_bounded_branch_never_exceeds_bound():
    rep = run_experiment(ExperimentConfig("stability", 1.0, UNIF2, scales=(100, 400), replications=200,
                                          thresholds={"cdf_distance": 0.5}))
    assert rep.verdicts["bound_respected"] is True
    assert rep.passed
    assert max(v for _, _, v in rep.statistics) <= 7.0


def test_stability_expectation_mismatch_fails():
    rep = run_experiment(ExperimentConfig("stability", 1.0, UNIF2, scales=(100, 400), replications=50,
                                          thresholds={"cdf_distance": 0.9}, expectation="unstable"))
    assert rep.verdicts["branch_checks_passed"] and not rep.passed


def test_unstable_branch_detected():
    rep = run_experiment(ExperimentConfig("stability", 1.0, PerturbationSpec.exponential(1.0),
                                          scales=(50, 500), replications=30, thresholds={"growth_ratio": 1.0}))
    assert rep.verdicts["branch"] == "unstable"
    assert "bound" not in rep.per_scale[0]


def test_reversal_labels_directions():
    rep = run_experiment(ExperimentConfig("reversal", 1.0, negate(PerturbationSpec.exponential(1.0)),
                                          scales=(50, 200), replications=20))
    v = rep.verdicts
    assert v["forward"]["branch"] == "stable" and v["reversed"]["branch"] == "unstable"
    assert v["asymmetry"] == "exhibited"
    sym = run_experiment(ExperimentConfig("reversal", 1.0, UNIF2, scales=(50, 200), replications=10))
    assert sym.verdicts["asymmetry"] == "asymmetry not applicable"
    assert {r["direction"] for r in rep.per_scale} == {"forward", "reversed"}


def test_sd1_required():
    for kind in ("stability", "reversal", "loynes"):
        cfg = ExperimentConfig(kind, 1.0, UNIF2, services=ServiceSpec("exponential", 1.0),
                               scales=(10, 20), replications=2)
        with pytest.raises(ValueError):
            run_experiment(cfg)


def test_clt_rejects_degenerate_or_off_critical():
    with pytest.raises(ValueError):
        run_experiment(ExperimentConfig("clt", 1.0, UNIF2, scales=(10,), replications=2))
    with pytest.raises(ValueError):
        run_experiment(ExperimentConfig("clt", 1.0, UNIF2, services=ServiceSpec("exponential", 2.0),
                                        scales=(10,), replications=2))


def test_clt_small_run_reports_ratio():
    cfg = ExperimentConfig("clt", 1.0, PerturbationSpec.uniform(-1, 1), services=ServiceSpec("exponential", 1.0),
                           scales=(100, 400), replications=100, thresholds={"ks": 0.5})
    rep = run_experiment(cfg)
    assert list(rep.verdicts["median_scaling_ratios"]) == ["100.0"]
    assert rep.per_scale[0]["sigma"] == 1.0


def test_identity_small_run():
    rep = run_experiment(ExperimentConfig("identity", 1.0, PerturbationSpec.normal(0, 2), scales=(20,),
                                          replications=20))
    assert rep.passed
    v = rep.verdicts
    assert v["decomposition_violations"] == 0 and v["beta_identity_violations"] == 0
    assert v["max_workload_error"] <= 1e-9


def test_prop1_rejects_small_n():
    with pytest.raises(ValueError):
        run_experiment(ExperimentConfig("prop1", 1.0, UNIF2, scales=(0.5, 10), replications=2))


def test_mgf_estimate_structure():
    out = mgf_estimate(PerturbationSpec.exponential(1.0), 1.0, 0.5, 2000)
    # exponential perturbations are never early
    assert out["early"]["mean"] == 1.0 and out["early"]["upper"] == 1.0
    assert out["early"]["bound"] == pytest.approx(math.exp(math.expm1(0.5)))
    assert out["late"]["bound"] == pytest.approx(math.exp(2 * math.expm1(0.5)))
    assert 1.0 < out["late"]["mean"] < out["late"]["upper"]


def test_unknown_kind_for_runner():
    with pytest.raises(ValueError):
        run_experiment(ExperimentConfig("generate", 1.0, UNIF2))


def test_prop1_statistic_not_exceeded_by_grid():
    for rep in range(3):
        s = generate_traffic(TrafficConfig(1.0, PerturbationSpec.uniform(-1, 1), 80.0), SeedSpec(6, rep))
        e = s.epochs[s.epochs > 0]
        grid = np.arange(0.0, 80.0 + 1e-12, 1.0 / 50)
        brute = np.max(np.abs(np.searchsorted(e, grid, side="right") - grid))
        assert brute <= prop1_statistic(s.epochs, 1.0, 80.0) + 1e-12


def test_prop1_unperturbed_passes():
    rep = run_experiment(ExperimentConfig("prop1", 1.0, PerturbationSpec.point_mass(0.0),
                                          scales=(100, 1000, 10000), replications=5))
    assert all(r["max"] <= 1.0 / math.log(r["scale"]) + 1e-12 for r in rep.per_scale)
    assert rep.passed


def test_prop1_uniform_shrinks():
    rep = run_experiment(ExperimentConfig("prop1", 1.0, PerturbationSpec.uniform(-1, 1),
                                          scales=(100, 10000), replications=200))
    assert rep.per_scale[1]["median"] < rep.per_scale[0]["median"]


def test_clt_sigma_from_variance():
    cfg = ExperimentConfig("clt", 2.0, PerturbationSpec.uniform(-1, 1), services=ServiceSpec("uniform", 2.0, 1.0),
                           scales=(20,), replications=5)
    assert run_experiment(cfg).per_scale[0]["sigma"] == pytest.approx(math.sqrt(0.5))


def test_unperturbed_is_stable():
    # W(t) is the random phase U here, so both scales share one law
    rep = run_experiment(ExperimentConfig("stability", 1.0, PerturbationSpec.point_mass(0.0),
                                          scales=(100, 1000), replications=300,
                                          thresholds={"cdf_distance": 0.2}))
    assert rep.passed and max(v for _, _, v in rep.statistics) <= 1.0


def test_normal_unstable_both_ways():
    rep = run_experiment(ExperimentConfig("reversal", 1.0, PerturbationSpec.normal(0, 1),
                                          scales=(50, 200), replications=10))
    assert rep.verdicts["forward"]["branch"] == rep.verdicts["reversed"]["branch"] == "unstable"
    assert rep.verdicts["asymmetry"] == "asymmetry not applicable"


def test_identity_point_mass_boundaries():
    rep = run_experiment(ExperimentConfig("identity", 1.0, PerturbationSpec.point_mass(0.2), scales=(20,),
                                          replications=5))
    assert rep.passed
