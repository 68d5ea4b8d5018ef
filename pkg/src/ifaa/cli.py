"""Command line: ``ifaa simulate | analyze | benchmark``.

Settings come from flags, then an optional JSON config file, then the
built-in defaults, in that order of precedence.  Every command writes a
manifest.json with the effective configuration, input hashes and timings.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

from . import __version__
from .data import AnalysisConfig, DataError, load_count_table, load_covariates, validate_dataset
from .phase1 import EmptySetBError, run_phase_one
from .phase2 import AssociationEstimates, choose_reference, estimate_associations
from .seeding import ESTIMATION, REPLICATE, derive_rng
from .sim import ScenarioError, SimScenario, generate_benchmark, write_truth_csv

log = logging.getLogger("ifaa")

EXIT_OK, EXIT_ERROR, EXIT_NO_REFERENCE = 0, 1, 2

# flag dest -> AnalysisConfig field
CONFIG_FLAGS = {
    "alpha": "alpha",
    "refs": "r_refs",
    "perms": "n_perms",
    "seed": "master_seed",
    "threads": "threads",
    "min_overlap": "min_overlap",
    "bootstrap": "bootstrap_reps",
    "ci_level": "ci_level",
}


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _default_threads() -> int:
    env = os.environ.get("IFAA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise DataError(f"IFAA_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def read_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise DataError(f"cannot read config file {path}: {err}") from None
    if not isinstance(data, dict):
        raise DataError(f"config file {path} must hold a JSON object")
    return data


def effective_config(args, file_cfg: dict) -> AnalysisConfig:
    """Merge defaults < config file < flags into an AnalysisConfig."""
    names = {f.name for f in fields(AnalysisConfig)}
    values = {k: v for k, v in file_cfg.items() if k in names}
    if "threads" not in values:
        values["threads"] = _default_threads()
    for flag, name in CONFIG_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    return AnalysisConfig(**values)


def write_manifest(out: Path, command: str, config: dict, inputs: dict, timings: dict, outputs: list[str],
                   extra: dict | None = None) -> None:
    man = {
        "command": command,
        "version": __version__,
        "config": config,
        "master_seed": config.get("master_seed"),
        "inputs": {k: {"path": str(p), "sha256": sha256(p)} for k, p in inputs.items()},
        "timings_seconds": {k: round(v, 3) for k, v in timings.items()},
        "outputs": sorted(outputs),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if extra:
        man.update(extra)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(man, fh, indent=2)
        fh.write("\n")


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise DataError(f"cannot create output directory {out}: {err}") from None
    if not os.access(out, os.W_OK):
        raise DataError(f"output directory {out} is not writable")
    return out


def _split_names(text) -> list[str]:
    if text is None:
        return []
    if isinstance(text, list):
        return text
    return [t.strip() for t in text.split(",") if t.strip()]


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    scenario = SimScenario.from_file(args.scenario)
    out = _out_dir(args.out)
    seed = args.seed if args.seed is not None else scenario.seed
    study = generate_benchmark(scenario, derive_rng(seed, REPLICATE, 0, args.replicate, 0))
    study.observed_counts.to_csv(out / "counts.csv")
    study.covariates.to_csv(out / "covariates.csv")
    write_truth_csv(study, out / "truth.csv")
    files = ["counts.csv", "covariates.csv", "truth.csv"]
    write_manifest(out, "simulate", {"scenario": scenario.to_dict(), "master_seed": seed, "replicate": args.replicate},
                   {"scenario": args.scenario}, {"simulate": time.perf_counter() - t0}, files)
    print(f"simulate: wrote {len(files)} files to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_analyze(args) -> int:
    file_cfg = read_config_file(args.config)
    config = effective_config(args, file_cfg)
    x_names = _split_names(args.x_cols) or _split_names(file_cfg.get("x_cols"))
    w_names = _split_names(args.w_cols) or _split_names(file_cfg.get("w_cols"))
    if not x_names:
        raise DataError("no tested covariates given (use --x-cols)")
    out = _out_dir(args.out)
    timings = {}
    t = time.perf_counter()
    counts = load_count_table(args.counts)
    cov = load_covariates(args.covariates, x_names, w_names)
    ds = validate_dataset(counts, cov, config)
    for sid, why in ds.dropped_samples:
        log.info("dropped sample %s: %s", sid, why)
    for tid, why in ds.dropped_taxa:
        log.info("dropped taxon %s: %s", tid, why)
    timings["validate"] = time.perf_counter() - t

    t = time.perf_counter()
    print(f"analyze: phase 1 on {ds.n_samples} samples x {ds.n_taxa} taxa (R={config.r_refs}, P={config.n_perms})",
          file=sys.stderr)
    res = run_phase_one(ds, config, allow_empty_b=True)
    timings["phase1"] = time.perf_counter() - t
    res.to_json(out / "phase1.json")
    res.write_heatmap(ds, out / "heatmap.csv")

    t = time.perf_counter()
    status = EXIT_OK
    extra = {"set_a_size": len(res.set_a), "set_b_size": len(res.set_b)}
    if not res.set_b:
        log.warning("set B is empty; no reference for estimation, estimates.csv left empty")
        est = AssociationEstimates([], config.ci_level)
        status = EXIT_NO_REFERENCE
    else:
        ref = choose_reference(ds, res)
        extra["reference_taxon"] = ref
        print(f"analyze: phase 2 for {len(res.set_a)} taxa against reference {ref}", file=sys.stderr)
        est = estimate_associations(ds, res, ref, config, derive_rng(config.master_seed, ESTIMATION))
    timings["phase2"] = time.perf_counter() - t
    est.to_csv(out / "estimates.csv")
    write_manifest(out, "analyze", config.to_dict(), {"counts": args.counts, "covariates": args.covariates},
                   timings, ["phase1.json", "heatmap.csv", "estimates.csv"], extra)
    print(f"analyze: |A|={len(res.set_a)} |B|={len(res.set_b)} in {sum(timings.values()):.1f}s", file=sys.stderr)
    return status


def cmd_benchmark(args) -> int:
    from .benchmark import run_benchmark

    file_cfg = read_config_file(args.config)
    config = effective_config(args, file_cfg)
    sdir = Path(args.scenario_dir)
    files = sorted(sdir.glob("*.json")) if sdir.is_dir() else []
    if not files:
        raise DataError(f"no scenario files (*.json) found in {sdir}")
    scenarios = []
    for f in files:
        sc = SimScenario.from_file(f)
        scenarios.append(sc if sc.name else SimScenario.from_dict({**sc.to_dict(), "name": f.stem}))
    reps = args.replicates if args.replicates is not None else int(file_cfg.get("replicates", 20))
    methods = _split_names(args.methods) or file_cfg.get("methods") or ["ifaa", "wilcoxon_aa", "wilcoxon_ra"]
    out = _out_dir(args.out)
    t = time.perf_counter()
    print(f"benchmark: {len(scenarios)} scenarios x {reps} replicates, methods {', '.join(methods)}", file=sys.stderr)
    report = run_benchmark(scenarios, methods, reps, config, config.master_seed, estimate=not args.no_bias)
    elapsed = time.perf_counter() - t
    report.to_csv(out / "report.csv")
    report.bias_csv(out / "bias.csv")
    report.replicates_csv(out / "replicates.csv")
    write_manifest(out, "benchmark", {**config.to_dict(), "replicates": reps, "methods": list(methods)},
                   {f.stem: f for f in files}, {"benchmark": elapsed, **report.seconds()},
                   ["report.csv", "bias.csv", "replicates.csv"], {"failures": len(report.failures())})
    print(f"benchmark: done in {elapsed:.1f}s, {len(report.failures())} failed method runs", file=sys.stderr)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with configuration values")
    p.add_argument("--alpha", type=float, help="FWER level for set A")
    p.add_argument("--refs", type=int, help="number of reference taxa R")
    p.add_argument("--perms", type=int, help="number of permutations P")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="worker cap (default: $IFAA_THREADS or all cores)")
    p.add_argument("--min-overlap", type=int, help="minimum shared nonzero samples per ratio")
    p.add_argument("--bootstrap", type=int, help="bootstrap resamples")
    p.add_argument("--ci-level", type=float, help="confidence level")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ifaa", description="Absolute-abundance association analysis")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate one benchmark dataset")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="data seed (default: the scenario seed)")
    p.add_argument("--replicate", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="run both phases on count and covariate tables")
    p.add_argument("counts")
    p.add_argument("covariates")
    p.add_argument("--x-cols", help="comma-separated tested covariates")
    p.add_argument("--w-cols", help="comma-separated adjustment covariates")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("benchmark", help="replicated simulation benchmark")
    p.add_argument("scenario_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--replicates", type=int)
    p.add_argument("--methods", help="comma-separated: ifaa, wilcoxon_aa, wilcoxon_ra")
    p.add_argument("--no-bias", action="store_true", help="skip the estimation step")
    _add_config_flags(p)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, ScenarioError, EmptySetBError, ValueError, OSError) as err:
        print(f"ifaa {args.command}: error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
