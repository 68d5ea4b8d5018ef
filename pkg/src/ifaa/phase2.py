"""Final reference choice and association estimates with bootstrap intervals.

One independent taxon from set B anchors the log-ratio regressions of every
set-A taxon.  Each regression is fit by cross-validated Lasso followed by a
partial-ridge refit, and a paired bootstrap of that two-step fit gives
percentile intervals.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import AnalysisConfig, DataError, ValidatedDataset, is_binary
from .phase1 import PhaseOneResult, build_logratio_regression
from .regression import EstimateWithCI, RegressionError, RegressionProblem, bootstrap_lpr_ci, lpr_estimate
from .seeding import BOOTSTRAP, child_seed, derive_rng

log = logging.getLogger(__name__)

ESTIMATE_COLUMNS = ["taxon_id", "covariate", "estimate", "ci_lower", "ci_upper", "fold_change", "n_used",
                    "reference_taxon"]


@dataclass(frozen=True)
class ReferenceCriteria:
    """Screens for a good final reference taxon.

    min_variance is a floor on the variance of log counts over the samples
    where the taxon is present; it removes taxa with (near) constant reads.
    """

    min_prevalence: float = 0.10
    per_group_prevalence: bool = True
    z_tertile_cut: bool = True
    min_variance: float = 1e-6

    def __post_init__(self):
        if not 0 < self.min_prevalence < 1:
            raise ValueError(f"min_prevalence must lie in (0, 1), got {self.min_prevalence}")
        if self.min_variance <= 0:
            raise ValueError("min_variance must be positive")


def _prevalence(present: np.ndarray) -> float:
    return float(present.mean()) if present.size else 0.0


def reference_screen(dataset: ValidatedDataset, result: PhaseOneResult, criteria: ReferenceCriteria) -> dict:
    """Per set-B taxon: (passes all criteria, prevalence, list of failed criteria)."""
    Y = dataset.counts.counts
    x = dataset.covariates.x
    binary_cols = [j for j in range(x.shape[1]) if is_binary(x[:, j])]
    cut = None
    if criteria.z_tertile_cut and result.set_a:
        z_a = [result.z_of(t) for t in result.set_a]
        cut = float(np.quantile(z_a, 1 / 3))
    out = {}
    for t in result.set_b:
        k = dataset.counts.taxon_index(t)
        present = Y[:, k] > 0
        prev = _prevalence(present)
        failed = []
        if prev < criteria.min_prevalence:
            failed.append("prevalence")
        if criteria.per_group_prevalence:
            for j in binary_cols:
                for g in np.unique(x[:, j]):
                    if _prevalence(present[x[:, j] == g]) < criteria.min_prevalence:
                        failed.append(f"prevalence in {dataset.covariates.x_names[j]}={g:g}")
        if cut is not None and result.z_of(t) > cut:
            failed.append("z_count above first tertile of set A")
        logs = np.log(Y[present, k])
        if logs.size < 2 or logs.var() < criteria.min_variance:
            failed.append("too little variation")
        out[t] = (not failed, prev, failed)
    return out


def choose_reference(dataset: ValidatedDataset, result: PhaseOneResult,
                     criteria: ReferenceCriteria | None = None) -> str:
    """Smallest-z set-B taxon passing the screens.

    Ties go to the higher prevalence, then the smaller taxon id.  When no
    taxon passes, the smallest-z set-B taxon is returned with a warning.
    """
    if not result.set_b:
        raise DataError("set B is empty; there is no independent taxon to use as reference")
    criteria = criteria or ReferenceCriteria()
    screen = reference_screen(dataset, result, criteria)
    key = lambda t: (result.z_of(t), -screen[t][1], t)  # noqa: E731
    passing = [t for t in result.set_b if screen[t][0]]
    if passing:
        return min(passing, key=key)
    best = min(result.set_b, key=key)
    log.warning("no set-B taxon passes the reference criteria; falling back to %s (failed: %s)", best,
                ", ".join(screen[best][2]))
    return best


@dataclass(frozen=True)
class EstimateRow:
    taxon_id: str
    covariate: str
    estimate: float
    ci_lower: float
    ci_upper: float
    n_used: int
    reference_taxon: str
    available: bool = True

    @property
    def fold_change(self) -> float:
        return math.exp(self.estimate) - 1 if self.available else math.nan


@dataclass
class AssociationEstimates:
    rows: list[EstimateRow]
    level: float
    reference_taxa: list[str] = field(default_factory=list)

    def get(self, taxon: str, covariate: str | None = None) -> EstimateRow:
        for r in self.rows:
            if r.taxon_id == taxon and (covariate is None or r.covariate == covariate):
                return r
        raise KeyError(taxon)

    def estimates(self, covariate: str | None = None) -> dict[str, float]:
        return {r.taxon_id: r.estimate for r in self.rows if covariate is None or r.covariate == covariate}

    def to_records(self) -> list[dict]:
        recs = []
        for r in self.rows:
            recs.append({
                "taxon_id": r.taxon_id,
                "covariate": r.covariate,
                "estimate": r.estimate,
                "ci_lower": r.ci_lower,
                "ci_upper": r.ci_upper,
                "fold_change": r.fold_change,
                "n_used": r.n_used,
                "reference_taxon": r.reference_taxon,
            })
        return recs

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(ESTIMATE_COLUMNS)
            for rec in self.to_records():
                wr.writerow(["NA" if isinstance(v, float) and math.isnan(v) else
                             repr(v) if isinstance(v, float) else v for v in rec.values()])

    def to_json(self, path) -> None:
        recs = [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in rec.items()}
                for rec in self.to_records()]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"level": self.level, "reference_taxa": self.reference_taxa, "estimates": recs}, fh,
                      indent=2)
            fh.write("\n")


def _estimate_one(problem: RegressionProblem, config: AnalysisConfig, seed: int, with_ci: bool):
    try:
        if not with_ci:
            est, support, _ = lpr_estimate(problem, config, derive_rng(seed))
            nan = np.full_like(est, np.nan)
            return EstimateWithCI(est, nan, nan, config.ci_level, 0, frozenset(np.flatnonzero(support).tolist()))
        return bootstrap_lpr_ci(problem, config, derive_rng(seed))
    except RegressionError as err:
        log.warning("estimation failed: %s", err)
        return None


def estimate_associations(dataset: ValidatedDataset, result: PhaseOneResult, ref_taxon: str,
                          config: AnalysisConfig, rng: np.random.Generator,
                          with_ci: bool = True) -> AssociationEstimates:
    """Bootstrap Lasso + partial-ridge estimates for every set-A taxon against ``ref_taxon``.

    Taxa without enough overlap with the reference are listed as unavailable
    (NaN estimate and interval).  With ``config.bonferroni`` the interval
    level is corrected for |A|*Q intervals.  ``with_ci=False`` skips the
    bootstrap; point estimates are unchanged and intervals are NaN.
    """
    return _estimate_with_base(dataset, result, ref_taxon, config, child_seed(rng), with_ci)


def _estimate_with_base(dataset, result, ref_taxon, config, base: int, with_ci: bool = True) -> AssociationEstimates:
    if ref_taxon not in result.set_b:
        raise DataError(f"reference {ref_taxon!r} is not in set B")
    rd = build_logratio_regression(dataset, ref_taxon, config)
    x_names = list(dataset.covariates.x_names)
    q = len(x_names)
    level = config.ci_level
    if config.bonferroni and result.set_a:
        level = 1 - (1 - level) / (len(result.set_a) * q)
    cfg = replace(config, ci_level=level)
    jobs = []
    for t in result.set_a:
        k = rd.taxon_ids.index(t)
        if not rd.usable[k]:
            log.warning("taxon %s overlaps the reference in %d samples only; estimate unavailable", t,
                        rd.overlap[k])
            jobs.append((t, int(rd.overlap[k]), None))
            continue
        seed = int(derive_rng(base, BOOTSTRAP, k).integers(0, 2**63 - 1))
        jobs.append((t, int(rd.overlap[k]), (rd.problem(t), seed)))
    work = [j for j in jobs if j[2] is not None]
    run = lambda j: _estimate_one(j[2][0], cfg, j[2][1], with_ci)  # noqa: E731
    if config.threads > 1 and len(work) > 1:
        with ThreadPoolExecutor(config.threads) as ex:
            fits = list(ex.map(run, work))
    else:
        fits = [run(j) for j in work]
    fit_of = {j[0]: f for j, f in zip(work, fits)}
    rows = []
    for t, n_used, _ in jobs:
        fit = fit_of.get(t)
        for j, name in enumerate(x_names):
            if fit is None:
                rows.append(EstimateRow(t, name, math.nan, math.nan, math.nan, n_used, ref_taxon, False))
            else:
                rows.append(EstimateRow(t, name, float(fit.estimate[j]), float(fit.lower[j]), float(fit.upper[j]),
                                        n_used, ref_taxon))
    return AssociationEstimates(rows, level, [ref_taxon])


@dataclass
class AveragedEstimates:
    """Per-reference estimates and their average point estimate per (taxon, covariate)."""

    per_reference: list[AssociationEstimates]
    average: dict[tuple[str, str], float]

    def estimates(self, covariate: str | None = None) -> dict[str, float]:
        return {t: v for (t, c), v in self.average.items() if covariate is None or c == covariate}


def averaged_estimates(dataset: ValidatedDataset, result: PhaseOneResult, refs, config: AnalysisConfig,
                       rng: np.random.Generator, with_ci: bool = True) -> AveragedEstimates:
    refs = list(refs)
    if not refs:
        raise ValueError("need at least one reference")
    # one base seed for all references: bootstrap draws depend on the taxon only
    base = child_seed(rng)
    per_ref = [_estimate_with_base(dataset, result, r, config, base, with_ci) for r in refs]
    sums: dict[tuple[str, str], list[float]] = {}
    for est in per_ref:
        for row in est.rows:
            if row.available:
                sums.setdefault((row.taxon_id, row.covariate), []).append(row.estimate)
    average = {key: float(np.mean(v)) for key, v in sums.items()}
    return AveragedEstimates(per_ref, average)
