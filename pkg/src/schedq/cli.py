"""Command-line entry point.

    schedq <subcommand> --config cfg.json --out results/ [--seed N] [--workers N] [--quiet]

Exit codes are fixed (see ``EXIT_CODES``): 0 all verdicts passed, 1 a verdict
failed, 2 bad command line, 3 config file missing, 4 config not valid JSON,
5 config violates the schema, 6 inadmissible parameters, 7 runtime error,
8 output directory not writable.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from .arrival import TruncationError, generate_traffic
from .distributions import (
    PERTURBATION_FAMILIES,
    SERVICE_FAMILIES,
    InadmissibleSpecError,
    PerturbationSpec,
    SeedSpec,
    ServiceSpec,
    negate,
)
from .experiments import KINDS, ExperimentConfig, ExperimentReport, run_experiment
from .workload import reversed_running_max, workload_path

log = logging.getLogger("schedq")

SUBCOMMANDS = ("generate", "workload") + KINDS

EXIT_OK = 0
EXIT_VERDICT_FAILED = 1
EXIT_USAGE = 2
EXIT_CONFIG_MISSING = 3
EXIT_CONFIG_PARSE = 4
EXIT_CONFIG_SCHEMA = 5
EXIT_INADMISSIBLE = 6
EXIT_RUNTIME = 7
EXIT_OUTPUT = 8

EXIT_CODES = {
    EXIT_OK: "all verdicts passed",
    EXIT_VERDICT_FAILED: "at least one verdict failed",
    EXIT_USAGE: "invalid command line",
    EXIT_CONFIG_MISSING: "config file not found",
    EXIT_CONFIG_PARSE: "config file is not valid JSON",
    EXIT_CONFIG_SCHEMA: "config violates the schema",
    EXIT_INADMISSIBLE: "inadmissible distribution parameters",
    EXIT_RUNTIME: "runtime error during simulation",
    EXIT_OUTPUT: "output directory not writable",
}

_NUM = {"type": "number"}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["h", "perturbation"],
    "properties": {
        "kind": {"enum": list(SUBCOMMANDS)},
        "h": {"type": "number", "exclusiveMinimum": 0},
        "perturbation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"enum": list(PERTURBATION_FAMILIES)},
                "params": {"type": "object", "additionalProperties": _NUM},
            },
        },
        "services": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family", "mean"],
            "properties": {
                "family": {"enum": list(SERVICE_FAMILIES)},
                "mean": {"type": "number", "exclusiveMinimum": 0},
                "variance": {"type": ["number", "null"], "minimum": 0},
            },
        },
        "window_end": {"type": "number", "exclusiveMinimum": 0},
        "scales": {"type": "array", "items": _NUM, "minItems": 1},
        "replications": {"type": "integer", "minimum": 1},
        "master_seed": {"type": "integer", "minimum": 0},
        "thresholds": {"type": "object", "additionalProperties": {"type": "number", "exclusiveMinimum": 0}},
        "workers": {"type": "integer", "minimum": 1},
        "truncation_margin": {"type": "integer", "minimum": 0},
        "leak_budget": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "expectation": {"enum": ["stable", "unstable", None]},
        "phase": {"type": ["number", "null"], "minimum": 0, "exclusiveMaximum": 1},
        "probes": {"type": "array", "items": _NUM},
    },
}


class ConfigError(Exception):
    exit_code = EXIT_RUNTIME


class ConfigMissing(ConfigError):
    exit_code = EXIT_CONFIG_MISSING


class ConfigParseError(ConfigError):
    exit_code = EXIT_CONFIG_PARSE


class ConfigSchemaError(ConfigError):
    exit_code = EXIT_CONFIG_SCHEMA


class ConfigInadmissible(ConfigError):
    exit_code = EXIT_INADMISSIBLE


def config_from_dict(raw: dict, kind: str | None = None) -> ExperimentConfig:
    """Validate a decoded config and fill in defaults."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigSchemaError(f"{where}: {exc.message}") from None
    declared = raw.get("kind")
    if kind is not None and declared is not None and declared != kind:
        raise ConfigSchemaError(f"config declares kind {declared!r} but subcommand is {kind!r}")
    kind = kind or declared
    if kind is None:
        raise ConfigSchemaError("no experiment kind: give a subcommand or a 'kind' field")
    try:
        pert = PerturbationSpec.from_dict(raw["perturbation"])
        services = ServiceSpec.from_dict(raw["services"]) if "services" in raw else None
    except InadmissibleSpecError as exc:
        raise ConfigInadmissible(
            f"{exc} (perturbations must satisfy the standing assumption E|xi_0| < infinity)"
        ) from None
    scales = raw.get("scales", ())
    if "window_end" in raw:
        if kind not in ("generate", "workload"):
            raise ConfigSchemaError("window_end applies only to generate and workload")
        scales = [raw["window_end"]]
    try:
        return ExperimentConfig(
            kind=kind, h=float(raw["h"]), perturbation=pert, services=services,
            scales=tuple(scales), replications=raw.get("replications", 0),
            master_seed=raw.get("master_seed", 0), thresholds=raw.get("thresholds", {}),
            workers=raw.get("workers", 1), truncation_margin=raw.get("truncation_margin", 0),
            leak_budget=raw.get("leak_budget", 1e-9), expectation=raw.get("expectation"),
            phase=raw.get("phase"), probes=tuple(raw.get("probes", ())),
        )
    except ValueError as exc:
        raise ConfigSchemaError(str(exc)) from None


def parse_config(path, kind: str | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigMissing(f"config file {path} not found")
    try:
        raw = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigParseError(f"{path}: {exc}") from None
    return config_from_dict(raw, kind)


def _write_outputs(out: Path, files: dict[str, str]) -> None:
    """Write every file to a temporary name first, then rename into place."""
    out.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.", suffix=".tmp")
            staged.append((tmp, out / name))
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
    except BaseException:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise
    for tmp, dest in staged:
        os.replace(tmp, dest)


def _csv_text(writer, *args) -> str:
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "x.csv"
        writer(p, *args)
        return p.read_text()


def _run_generate(cfg: ExperimentConfig):
    tc = cfg.traffic()
    sample = generate_traffic(tc, SeedSpec(cfg.master_seed, 0), phase=cfg.phase)
    row = {"scale": tc.window_end, "arrivals": int(sample.epochs.size), "margin": sample.margin,
           "phase": sample.phase, "index_range": [sample.j_lo, sample.j_hi]}
    report = ExperimentReport(cfg.to_dict(), [row], {"passed": True}, sample.leak_bound)
    return report, {"arrivals.csv": _csv_text(sample.to_csv)}


def _run_workload(cfg: ExperimentConfig):
    tc = cfg.traffic()
    T = tc.window_end
    seed = SeedSpec(cfg.master_seed, 0)
    sample = generate_traffic(tc, seed, phase=cfg.phase)
    probes = np.asarray(cfg.probes) if cfg.probes else np.linspace(0.0, T, 101)
    path = workload_path(sample, cfg.services, seed, probes)
    row = {"scale": T, "arrivals": int(sample.epochs.size), "final_workload": float(path.values[-1]),
           "running_max": path.running_max}
    files = {"arrivals.csv": _csv_text(sample.to_csv), "workload.csv": _csv_text(path.to_csv)}
    leak = sample.leak_bound
    v = cfg.services
    if v.family == "deterministic" and math.isclose(v.mean, cfg.h):
        neg = generate_traffic(replace(tc, perturbation=negate(cfg.perturbation)), SeedSpec(cfg.master_seed, 1))
        diag = reversed_running_max(neg, cfg.h, T, probes)
        row.update(reversed_running_max=diag.running_max, gamma1=diag.gamma1, gamma2=diag.gamma2)
        files["reversal.csv"] = _csv_text(diag.to_csv, cfg.h)
        leak = max(leak, neg.leak_bound)
    report = ExperimentReport(cfg.to_dict(), [row], {"passed": True}, leak)
    return report, files


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="schedq",
        description="Simulate single-server queues fed by scheduled traffic.",
        epilog="exit codes: " + "; ".join(f"{k} {v}" for k, v in EXIT_CODES.items()),
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--workers", type=int, help="override worker count")
        p.add_argument("--quiet", action="store_true")
        p.add_argument("--no-timing", action="store_true",
                       help="write elapsed_seconds as null so reruns are byte-identical")
    return parser


def run(args: argparse.Namespace) -> int:
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = parse_config(args.config, args.subcommand)
        overrides = {}
        if args.seed is not None:
            overrides["master_seed"] = args.seed
        if args.workers is not None:
            overrides["workers"] = args.workers
        if overrides:
            cfg = config_from_dict({**cfg.to_dict(), **overrides}, args.subcommand)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return exc.exit_code

    out = Path(args.out)
    if out.exists() and not (out.is_dir() and os.access(out, os.W_OK)):
        log.error("cannot write to %s", out)
        return EXIT_OUTPUT

    try:
        if cfg.kind == "generate":
            report, files = _run_generate(cfg)
        elif cfg.kind == "workload":
            report, files = _run_workload(cfg)
        else:
            report = run_experiment(cfg)
            files = {"statistics.csv": report.statistics_csv()}
    except (ValueError, TruncationError) as exc:
        log.error("error: %s", exc)
        return EXIT_RUNTIME

    files["report.json"] = report.to_json(timing=not args.no_timing)
    try:
        _write_outputs(out, files)
    except OSError as exc:
        log.error("cannot write outputs: %s", exc)
        return EXIT_OUTPUT

    log.info("%s: %s", cfg.kind, json.dumps(report.verdicts, sort_keys=True))
    return EXIT_OK if report.passed else EXIT_VERDICT_FAILED


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
