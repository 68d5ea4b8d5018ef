"""Replicated simulation benchmark: selection accuracy and estimation bias per method.

Every replicate draws its data from a seed derived from (base seed,
scenario index, replicate index), so reports do not depend on how many
worker processes ran them or in what order.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .data import AnalysisConfig, DataError, ValidatedDataset, validate_dataset
from .metrics import METRICS, bh_adjust, confusion, performance_metrics, rank_sum_columns, wilcoxon_rank_sum
from .phase1 import run_phase_one
from .phase2 import choose_reference, estimate_associations
from .seeding import ESTIMATION, REPLICATE, child_seed, derive_rng
from .sim import SimScenario, SimulatedStudy, generate_benchmark

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["scenario", "method", "metric", "mean", "stderr", "n_defined", "n_replicates"]
DEFAULT_Q = 0.2


# --------------------------------------------------------------------------
# methods


def wilcoxon_select(counts: np.ndarray, x: np.ndarray, taxon_ids, q: float = DEFAULT_Q,
                    relative: bool = False) -> set[str]:
    """Per-taxon rank-sum test between the two X groups, then BH at level q.

    ``relative`` divides each sample by its total before testing.
    """
    Y = np.asarray(counts, dtype=float)
    if relative:
        tot = Y.sum(axis=1, keepdims=True)
        Y = np.divide(Y, tot, out=np.zeros_like(Y), where=tot > 0)
    levels = np.unique(x)
    if len(levels) != 2:
        raise DataError("the rank-sum baseline needs a binary covariate")
    A, B = Y[x == levels[0]], Y[x == levels[1]]
    if len(A) + len(B) <= 12:
        p = np.array([wilcoxon_rank_sum(A[:, k], B[:, k]) for k in range(Y.shape[1])])
    else:
        p = rank_sum_columns(A, B)
    return {taxon_ids[k] for k in bh_adjust(p, q)}


@dataclass
class MethodOutput:
    selected: set[str]
    estimates: dict[str, float] = field(default_factory=dict)


def _ifaa(study: SimulatedStudy, dataset: ValidatedDataset, config: AnalysisConfig, estimate: bool) -> MethodOutput:
    res = run_phase_one(dataset, config, allow_empty_b=True)
    est = {}
    if estimate and res.set_a and res.set_b:
        ref = choose_reference(dataset, res)
        ae = estimate_associations(dataset, res, ref, config, derive_rng(config.master_seed, ESTIMATION), with_ci=False)
        est = {r.taxon_id: r.estimate for r in ae.rows if r.available}
    return MethodOutput(set(res.set_a), est)


def _wilcoxon(relative: bool):
    def run(study, dataset, config, estimate):
        x = dataset.covariates.x[:, 0]
        return MethodOutput(wilcoxon_select(dataset.counts.counts, x, dataset.counts.taxon_ids, DEFAULT_Q, relative))
    return run


METHODS: dict[str, Callable] = {
    "ifaa": _ifaa,
    "wilcoxon_aa": _wilcoxon(relative=False),
    "wilcoxon_ra": _wilcoxon(relative=True),
}


# --------------------------------------------------------------------------
# replicates


@dataclass
class ReplicateOutcome:
    scenario: str
    replicate: int
    method: str
    metrics: dict[str, float] | None
    bias: float = math.nan
    n_selected: int = 0
    error: str | None = None
    seconds: float = 0.0


def score(selected, study: SimulatedStudy) -> dict[str, float]:
    universe = set(study.observed_counts.taxon_ids)
    return performance_metrics(confusion(set(selected) & universe, study.differential_taxa, universe))


def mean_abs_bias(estimates: Mapping[str, float], study: SimulatedStudy) -> float:
    """Mean |estimate - true effect| over estimated taxa that are truly differential."""
    te = dict(zip(study.true_counts.taxon_ids, study.true_effect))
    diffs = [abs(v - te[t]) for t, v in estimates.items() if t in study.differential_taxa and not math.isnan(v)]
    return float(np.mean(diffs)) if diffs else math.nan


def scenario_label(scenario: SimScenario, index: int) -> str:
    return scenario.name or f"scenario{index + 1}"


def run_replicate(scenario: SimScenario, index: int, replicate: int, methods, config: AnalysisConfig, base_seed: int,
                  estimate: bool = True) -> list[ReplicateOutcome]:
    label = scenario_label(scenario, index)
    study = generate_benchmark(scenario, derive_rng(base_seed, REPLICATE, index, replicate, 0))
    cfg = replace(config, master_seed=child_seed(derive_rng(base_seed, REPLICATE, index, replicate, 1)), threads=1)
    out = []
    try:
        dataset = validate_dataset(study.observed_counts, study.covariates, cfg)
    except DataError as err:
        return [ReplicateOutcome(label, replicate, m, None, error=str(err)) for m in methods]
    for m in methods:
        t0 = time.perf_counter()
        try:
            res = METHODS[m](study, dataset, cfg, estimate)
        except (DataError, ArithmeticError, RuntimeError, ValueError) as err:
            log.warning("%s replicate %d: %s failed: %s", label, replicate, m, err)
            out.append(ReplicateOutcome(label, replicate, m, None, error=f"{type(err).__name__}: {err}",
                                        seconds=time.perf_counter() - t0))
            continue
        out.append(ReplicateOutcome(label, replicate, m, score(res.selected, study),
                                    mean_abs_bias(res.estimates, study), len(res.selected),
                                    seconds=time.perf_counter() - t0))
    return out


def _run_task(args):
    return run_replicate(*args)


# --------------------------------------------------------------------------
# report


@dataclass
class BenchmarkReport:
    outcomes: list[ReplicateOutcome]
    n_replicates: int

    def _groups(self):
        keys = []
        for o in self.outcomes:
            if (o.scenario, o.method) not in keys:
                keys.append((o.scenario, o.method))
        return keys

    def _values(self, scenario, method, metric) -> np.ndarray:
        vals = []
        for o in self.outcomes:
            if o.scenario == scenario and o.method == method and o.metrics is not None:
                vals.append(o.bias if metric == "bias" else o.metrics[metric])
        return np.array(vals, dtype=float)

    def summary(self, scenario, method, metric) -> tuple[float, float, int]:
        """(mean, standard error, number of replicates where it is defined)."""
        v = self._values(scenario, method, metric)
        v = v[~np.isnan(v)]
        if not len(v):
            return math.nan, math.nan, 0
        se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.nan
        return float(v.mean()), se, len(v)

    def mean(self, scenario, method, metric) -> float:
        return self.summary(scenario, method, metric)[0]

    def rows(self, metrics=METRICS) -> list[list]:
        rows = []
        for sc, m in self._groups():
            for metric in metrics:
                mu, se, nd = self.summary(sc, m, metric)
                rows.append([sc, m, metric, mu, se, nd, self.n_replicates])
        return rows

    def failures(self) -> list[ReplicateOutcome]:
        return [o for o in self.outcomes if o.error]

    def seconds(self) -> dict[str, float]:
        tot: dict[str, float] = {}
        for o in self.outcomes:
            key = f"{o.scenario}/{o.method}"
            tot[key] = tot.get(key, 0.0) + o.seconds
        return tot

    @staticmethod
    def _write(path, header, rows):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for r in rows:
                wr.writerow(["NA" if isinstance(v, float) and math.isnan(v) else
                             repr(v) if isinstance(v, float) else v for v in r])

    def to_csv(self, path) -> None:
        self._write(path, REPORT_COLUMNS, self.rows())

    def bias_csv(self, path) -> None:
        rows = [r for r in self.rows(("bias",)) if r[5] > 0]
        self._write(path, REPORT_COLUMNS, rows)

    def replicates_csv(self, path) -> None:
        header = ["scenario", "replicate", "method", *METRICS, "bias", "n_selected", "error"]
        rows = []
        for o in self.outcomes:
            m = o.metrics or {}
            rows.append([o.scenario, o.replicate, o.method, *(m.get(k, math.nan) for k in METRICS), o.bias,
                         o.n_selected, o.error or ""])
        self._write(path, header, rows)


def load_external_selections(path) -> dict[int, set[str]]:
    """Read an external method's calls: columns replicate, taxon_id, selected (0/1)."""
    out: dict[int, set[str]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        missing = {"replicate", "taxon_id", "selected"} - set(rd.fieldnames or [])
        if missing:
            raise DataError(f"{path}: missing column(s) {sorted(missing)}")
        for i, row in enumerate(rd, start=2):
            try:
                rep, sel = int(row["replicate"]), int(row["selected"])
            except ValueError as err:
                raise DataError(f"{path}, line {i}: {err}") from None
            out.setdefault(rep, set())
            if sel:
                out[rep].add(row["taxon_id"])
    return out


def run_benchmark(scenarios, methods=tuple(METHODS), n_replicates: int = 20, config: AnalysisConfig | None = None,
                  rng: np.random.Generator | int = 0, estimate: bool = True,
                  external: Mapping[str, Mapping[str, Mapping[int, set]]] | None = None) -> BenchmarkReport:
    """Run every method on ``n_replicates`` datasets per scenario and score against the truth.

    ``config.threads > 1`` spreads replicates over worker processes.
    ``external`` maps a method name to {scenario label: {replicate: selected
    taxa}} for methods run outside this package; they are scored on the
    same simulated datasets.
    """
    config = config or AnalysisConfig(alpha=0.2)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown method(s): {unknown}")
    scenarios = list(scenarios)
    if not scenarios:
        raise ValueError("no scenarios given")
    labels = [scenario_label(sc, i) for i, sc in enumerate(scenarios)]
    if len(set(labels)) != len(labels):
        raise ValueError(f"scenario names must be distinct: {labels}")
    base = int(rng) if isinstance(rng, (int, np.integer)) else child_seed(rng)
    tasks = [(sc, i, r, tuple(methods), config, base, estimate) for i, sc in enumerate(scenarios)
             for r in range(n_replicates)]
    if config.threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(min(config.threads, len(tasks))) as ex:
            results = list(ex.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    outcomes = [o for res in results for o in res]
    for name, by_scenario in (external or {}).items():
        for i, sc in enumerate(scenarios):
            label = scenario_label(sc, i)
            calls = by_scenario.get(label, {})
            for r in range(n_replicates):
                if r not in calls:
                    outcomes.append(ReplicateOutcome(label, r, name, None, error="no external result"))
                    continue
                study = generate_benchmark(sc, derive_rng(base, REPLICATE, i, r, 0))
                outcomes.append(ReplicateOutcome(label, r, name, score(calls[r], study), n_selected=len(calls[r])))
    order = {m: j for j, m in enumerate([*methods, *(external or {})])}
    outcomes.sort(key=lambda o: (labels.index(o.scenario), order[o.method], o.replicate))
    return BenchmarkReport(outcomes, n_replicates)
