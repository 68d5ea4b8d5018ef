"""Association identification by reference cycling and a permutation threshold.

For each reference taxon in a random reference set, every other taxon's
log-ratio against the reference is regressed on the tested covariates
(adjusting for the others) with an MCP penalty; a taxon scores one point
per reference against which any tested coefficient is selected.  Taxa
associated with the covariates collect points against nearly every
reference, independent taxa only against associated references.  Repeating
the scoring with the rows of the tested-covariate matrix permuted gives a
null distribution of the maximum score, whose upper percentile splits taxa
into an associated set A and an independent set B.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .data import AnalysisConfig, DataError, ValidatedDataset
from .regression import RegressionProblem, build_gram, mcp_bic_batch
from .seeding import PERMUTATION, REFERENCE_SET, derive_rng

log = logging.getLogger(__name__)


class EmptySetBError(RuntimeError):
    """No taxon was left in the independent set."""

    def __init__(self, msg, set_a=()):
        super().__init__(msg)
        self.set_a = list(set_a)


# --------------------------------------------------------------------------
# log-ratio data


@dataclass(frozen=True)
class RatioDataset:
    """Log-ratio responses of every taxon against one reference.

    ``responses`` is samples x taxa with NaN wherever the taxon or the
    reference is zero.  ``design`` holds the tested columns followed by the
    adjustment columns (the intercept is added by the solver).
    """

    ref_taxon: str
    taxon_ids: tuple[str, ...]
    responses: np.ndarray
    mask: np.ndarray
    overlap: np.ndarray
    usable: np.ndarray
    design: np.ndarray
    penalty_mask: np.ndarray

    def problem(self, taxon: str) -> RegressionProblem:
        k = self.taxon_ids.index(taxon)
        rows = self.mask[:, k]
        return RegressionProblem(self.design[rows], self.responses[rows, k], self.penalty_mask)

    def sample_indices(self, taxon: str) -> np.ndarray:
        return np.flatnonzero(self.mask[:, self.taxon_ids.index(taxon)])


def _design(dataset: ValidatedDataset, x: np.ndarray | None = None):
    cov = dataset.covariates
    x = cov.x if x is None else x
    design = np.hstack([x, cov.w])
    pen = np.r_[np.ones(cov.q, bool), np.zeros(cov.s, bool)]
    return design, pen


def log_ratios(Y: np.ndarray, ref: int):
    """log(Y_k / Y_ref) on samples where both are positive, NaN elsewhere.

    The ratio is formed before the log so per-sample scale factors that are
    exact in floating point (powers of two) cancel bit for bit.
    """
    mask = (Y > 0) & (Y[:, [ref]] > 0)
    out = np.full(Y.shape, np.nan)
    ratio = Y[mask] / np.broadcast_to(Y[:, [ref]], Y.shape)[mask]
    out[mask] = np.log(ratio)
    return out, mask


def _min_overlap(dataset: ValidatedDataset, config: AnalysisConfig) -> int:
    return config.resolved_min_overlap(dataset.covariates.q, dataset.covariates.s)


def build_logratio_regression(dataset: ValidatedDataset, ref_taxon: str, config: AnalysisConfig) -> RatioDataset:
    counts = dataset.counts
    r = counts.taxon_index(ref_taxon)
    Y = counts.counts
    mo = _min_overlap(dataset, config)
    n_ref = int((Y[:, r] > 0).sum())
    if n_ref < mo:
        raise DataError(f"reference {ref_taxon!r} is nonzero in only {n_ref} samples (< min_overlap={mo})")
    resp, mask = log_ratios(Y, r)
    mask[:, r] = False
    resp[:, r] = np.nan
    overlap = mask.sum(axis=0)
    usable = overlap >= mo
    design, pen = _design(dataset)
    for a in (resp, mask, overlap, usable):
        a.setflags(write=False)
    return RatioDataset(ref_taxon, counts.taxon_ids, resp, mask, overlap, usable, design, pen)


# --------------------------------------------------------------------------
# selection passes


@dataclass
class _Passes:
    selected: np.ndarray  # (R, T) bool
    fitted: np.ndarray  # (R, T) bool: taxon usable against that reference
    coef: np.ndarray  # (R, T, Q) fitted tested coefficients (0 where not fitted)


def _run_passes(Y: np.ndarray, design: np.ndarray, pen: np.ndarray, refs: list[int], min_overlap: int,
                config: AnalysisConfig, pairs: np.ndarray | None = None) -> _Passes:
    """Fit every (reference, taxon) ratio regression in one batch.

    ``pairs`` fixes which (reference, taxon) regressions are run.  When
    omitted it is derived from the data: enough overlapping samples and at
    least one tested covariate that is not degenerate on them.  Permutation
    passes reuse the pairs of the unpermuted data so that the null scores
    are computed over the same set of regressions.
    """
    N, T = Y.shape
    R = len(refs)
    q = int(pen.sum())
    ys, ws, where = [], [], []
    shared = config.shared_lambda
    for i, r in enumerate(refs):
        resp, mask = log_ratios(Y, r)
        mask[:, r] = False
        ok = mask.sum(axis=0) >= min_overlap if pairs is None else pairs[i]
        cols = np.flatnonzero(ok)
        ys.append(np.where(mask[:, cols], resp[:, cols], 0.0).T)
        ws.append(mask[:, cols].T.astype(float))
        where.extend((i, k) for k in cols)
    selected = np.zeros((R, T), dtype=bool)
    fitted = np.zeros((R, T), dtype=bool)
    coef = np.zeros((R, T, q))
    if where:
        y = np.concatenate(ys)
        w = np.concatenate(ws)
        ii, kk = np.array(where).T
        sel, beta, gram = mcp_bic_batch(design, y, w, pen, config.mcp_gamma, config.lambda_grid_size,
                                        groups=ii if shared else None)
        estimable = ~gram.degenerate[:, :q].all(axis=1) if pairs is None else np.ones(len(ii), bool)
        fitted[ii, kk] = estimable
        selected[ii, kk] = sel & estimable
        coef[ii, kk] = np.where(estimable[:, None], beta[:, pen], 0.0)
    return _Passes(selected, fitted, coef)


def selection_pass(dataset: ValidatedDataset, ref_taxon: str, config: AnalysisConfig) -> np.ndarray:
    """0/1 vector: 1 where any tested coefficient is selected against ``ref_taxon``."""
    rd = build_logratio_regression(dataset, ref_taxon, config)
    for t in np.flatnonzero(~rd.usable):
        if rd.taxon_ids[t] != ref_taxon:
            log.debug("taxon %s unusable against reference %s (overlap %d)", rd.taxon_ids[t], ref_taxon, rd.overlap[t])
    design, pen = _design(dataset)
    r = dataset.counts.taxon_index(ref_taxon)
    passes = _run_passes(dataset.counts.counts, design, pen, [r], _min_overlap(dataset, config), config)
    return passes.selected[0].astype(int)


def accumulate_counts(dataset: ValidatedDataset, reference_set, config: AnalysisConfig) -> np.ndarray:
    """Selection counts Z summed over the reference set."""
    refs = _ref_indices(dataset, reference_set)
    design, pen = _design(dataset)
    passes = _run_passes(dataset.counts.counts, design, pen, refs, _min_overlap(dataset, config), config)
    return passes.selected.sum(axis=0)


def _ref_indices(dataset: ValidatedDataset, reference_set) -> list[int]:
    refs = [dataset.counts.taxon_index(t) for t in reference_set]
    if len(set(refs)) != len(refs):
        raise DataError("reference taxa must be distinct")
    return refs


# --------------------------------------------------------------------------
# combinatorics


def expected_counts(K: int, R: int, m_a: int) -> tuple[float, float, float]:
    """Expected selection counts for associated (k_a) and independent (k_b) taxa.

    ``K + 1`` taxa, ``R`` references drawn without replacement, ``m_a``
    associated taxa, in the noiseless setting.  Returns ``(k_a, k_b, k_a - k_b)``.
    """
    m_b = K + 1 - m_a
    if m_a < 0 or m_b < 2:
        raise ValueError(f"need at least two independent taxa (m_b = {m_b})")
    if not 1 <= R <= K + 1:
        raise ValueError(f"R must lie in [1, K+1], got {R}")
    k_a = K * R / (K + 1)
    k_b = R * m_a / (K + 1)
    return k_a, k_b, (m_b - 1) * R / (K + 1)


def noiseless_counts(associated, refs, n_taxa: int) -> np.ndarray:
    """Selection counts when a ratio is selected iff it involves an associated taxon."""
    assoc = np.zeros(n_taxa, dtype=bool)
    assoc[list(associated)] = True
    z = np.zeros(n_taxa, dtype=int)
    for r in refs:
        sel = assoc | assoc[r]
        sel[r] = False
        z += sel
    return z


def enumerate_mean_counts(associated, n_taxa: int, R: int) -> np.ndarray:
    """Exact mean of :func:`noiseless_counts` over all R-subsets of references."""
    total = np.zeros(n_taxa)
    n = 0
    for refs in combinations(range(n_taxa), R):
        total += noiseless_counts(associated, refs, n_taxa)
        n += 1
    return total / n


# --------------------------------------------------------------------------
# permutation threshold and set identification


def nearest_rank(values, level: float) -> float:
    """The ceil(level * P)-th smallest of ``values`` (1-based)."""
    v = np.sort(np.asarray(values))
    P = len(v)
    # guard against 0.8 * 10 = 8.000000000000002 style round-up
    rank = math.ceil(level * P - 1e-9)
    rank = min(max(rank, 1), P)
    return float(v[rank - 1])


def _perm_max(Y, dataset, perm, refs, usable, mo, config, pairs):
    cov = dataset.covariates
    design, pen = _design(dataset, cov.x[perm])
    passes = _run_passes(Y, design, pen, refs, mo, config, pairs)
    z = passes.selected.sum(axis=0)
    return int(z[usable].max()) if usable.any() else 0


def permutation_threshold(dataset: ValidatedDataset, reference_set, config: AnalysisConfig,
                          rng: np.random.Generator, pairs: np.ndarray | None = None):
    """Null maxima of Z under row permutations of X, and their nearest-rank percentile.

    Permutations are drawn from ``rng`` up front, so the result does not
    depend on ``config.threads``.
    """
    refs = _ref_indices(dataset, reference_set)
    Y = dataset.counts.counts
    mo = _min_overlap(dataset, config)
    if pairs is None:
        design, pen = _design(dataset)
        pairs = _run_passes(Y, design, pen, refs, mo, config).fitted
    usable = pairs.any(axis=0)
    perms = [rng.permutation(dataset.n_samples) for _ in range(config.n_perms)]
    job = lambda perm: _perm_max(Y, dataset, perm, refs, usable, mo, config, pairs)  # noqa: E731
    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as ex:
            maxima = list(ex.map(job, perms))
    else:
        maxima = [job(p) for p in perms]
    maxima = np.array(maxima, dtype=int)
    return maxima, nearest_rank(maxima, 1 - config.alpha)


def identify_sets(z, threshold: float, usable, taxon_ids=None):
    """Split usable taxa into A (z >= threshold) and B (the rest)."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    z = np.asarray(z)
    usable = np.asarray(usable, dtype=bool)
    ids = list(range(len(z))) if taxon_ids is None else list(taxon_ids)
    in_a = usable & (z >= threshold)
    in_b = usable & ~in_a
    set_a = [ids[k] for k in np.flatnonzero(in_a)]
    set_b = [ids[k] for k in np.flatnonzero(in_b)]
    if not set_b:
        raise EmptySetBError("no taxon fell below the threshold, so no independent reference is available; "
                             "try a smaller alpha", set_a)
    return set_a, set_b


def reference_candidates(dataset: ValidatedDataset, config: AnalysisConfig) -> list[int]:
    """Taxa that can anchor a well-posed ratio regression.

    A candidate is nonzero in at least ``min_overlap`` samples and the
    tested covariates are not all degenerate on those samples.
    """
    mo = _min_overlap(dataset, config)
    Y = dataset.counts.counts
    pos = Y > 0
    enough = np.flatnonzero(pos.sum(axis=0) >= mo)
    if not len(enough):
        return []
    design, pen = _design(dataset)
    w = pos[:, enough].T.astype(float)
    gram = build_gram(design, np.zeros_like(w), w, pen)
    ok = ~gram.degenerate.all(axis=1)
    return [int(k) for k in enough[ok]]


def choose_reference_set(dataset: ValidatedDataset, config: AnalysisConfig) -> list[str]:
    """R distinct references drawn uniformly from taxa with enough nonzero samples."""
    cands = reference_candidates(dataset, config)
    if len(cands) < 2:
        raise DataError("fewer than two taxa are nonzero in min_overlap samples; no usable reference")
    R = config.r_refs
    if R > len(cands):
        log.warning("only %d usable reference taxa; using all of them instead of R=%d", len(cands), R)
        R = len(cands)
    rng = derive_rng(config.master_seed, REFERENCE_SET)
    picked = sorted(rng.choice(cands, size=R, replace=False).tolist())
    return [dataset.counts.taxon_ids[k] for k in picked]


# --------------------------------------------------------------------------
# driver


@dataclass
class PhaseOneResult:
    taxon_ids: list[str]
    reference_set: list[str]
    z_counts: np.ndarray
    perm_maxima: np.ndarray
    threshold: float
    set_a: list[str]
    set_b: list[str]
    unusable: list[str]
    mean_coef: np.ndarray = field(repr=False)
    x_names: list[str] = field(default_factory=list)

    def z_of(self, taxon: str) -> int:
        return int(self.z_counts[self.taxon_ids.index(taxon)])

    def to_dict(self) -> dict:
        return {
            "taxon_ids": list(self.taxon_ids),
            "reference_set": list(self.reference_set),
            "z_counts": [int(v) for v in self.z_counts],
            "perm_maxima": [int(v) for v in self.perm_maxima],
            "threshold": float(self.threshold),
            "set_a": list(self.set_a),
            "set_b": list(self.set_b),
            "unusable": list(self.unusable),
            "mean_coef": {x: [float(v) for v in self.mean_coef[:, j]] for j, x in enumerate(self.x_names)},
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def write_heatmap(self, dataset: ValidatedDataset, path, display_floor: int = 1, covariate: int = 0) -> None:
        """Taxa x samples table of signed selection counts, 0 where the taxon is absent."""
        present = dataset.counts.counts > 0
        sign = np.sign(self.mean_coef[:, covariate])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["taxon_id", *dataset.counts.sample_ids])
            for k in np.argsort(-self.z_counts, kind="stable"):
                if self.z_counts[k] < display_floor:
                    continue
                cell = int(sign[k] * self.z_counts[k])
                wr.writerow([self.taxon_ids[k], *(cell if p else 0 for p in present[:, k])])


def run_phase_one(dataset: ValidatedDataset, config: AnalysisConfig, allow_empty_b: bool = False) -> PhaseOneResult:
    """Reference cycling, permutation threshold and set split.

    The stored threshold is the permutation percentile raised to at least
    1.  With ``allow_empty_b`` an empty independent set is returned (with a
    warning) instead of raising :class:`EmptySetBError`.
    """
    refs_ids = choose_reference_set(dataset, config)
    refs = _ref_indices(dataset, refs_ids)
    Y = dataset.counts.counts
    mo = _min_overlap(dataset, config)
    design, pen = _design(dataset)
    passes = _run_passes(Y, design, pen, refs, mo, config)
    z = passes.selected.sum(axis=0)
    n_fit = np.maximum(passes.fitted.sum(axis=0), 1)
    mean_coef = passes.coef.sum(axis=0) / n_fit[:, None]
    usable = passes.fitted.any(axis=0)
    maxima, thr = permutation_threshold(dataset, refs_ids, config, derive_rng(config.master_seed, PERMUTATION),
                                        passes.fitted)
    # a taxon never selected carries no evidence, whatever the null maxima
    thr = max(thr, 1.0)
    ids = list(dataset.counts.taxon_ids)
    unusable = [ids[k] for k in np.flatnonzero(~usable)]
    try:
        set_a, set_b = identify_sets(z, thr, usable, ids)
    except EmptySetBError as err:
        if not allow_empty_b:
            raise
        log.warning("%s", err)
        set_a, set_b = err.set_a, []
    return PhaseOneResult(ids, refs_ids, z, maxima, thr, set_a, set_b, unusable, mean_coef,
                          list(dataset.covariates.x_names))
