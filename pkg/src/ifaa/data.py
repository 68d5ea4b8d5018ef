"""Count/covariate tables, CSV ingestion and dataset validation."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised for malformed or inconsistent input tables."""


def _check_unique(ids: Sequence[str], what: str) -> None:
    seen = set()
    for i in ids:
        if i in seen:
            raise DataError(f"duplicate {what} id {i!r}")
        seen.add(i)


@dataclass(frozen=True)
class CountMatrix:
    """Nonnegative abundance table, samples as rows and taxa as columns."""

    sample_ids: tuple[str, ...]
    taxon_ids: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=float)
        object.__setattr__(self, "sample_ids", tuple(str(s) for s in self.sample_ids))
        object.__setattr__(self, "taxon_ids", tuple(str(t) for t in self.taxon_ids))
        if counts.ndim != 2 or counts.shape != (len(self.sample_ids), len(self.taxon_ids)):
            raise DataError(
                f"count matrix shape {counts.shape} does not match "
                f"{len(self.sample_ids)} samples x {len(self.taxon_ids)} taxa"
            )
        _check_unique(self.sample_ids, "sample")
        _check_unique(self.taxon_ids, "taxon")
        if not np.all(np.isfinite(counts)):
            i, j = np.argwhere(~np.isfinite(counts))[0]
            raise DataError(f"non-finite count at sample {self.sample_ids[i]!r}, taxon {self.taxon_ids[j]!r}")
        if np.any(counts < 0):
            i, j = np.argwhere(counts < 0)[0]
            raise DataError(f"negative count at sample {self.sample_ids[i]!r}, taxon {self.taxon_ids[j]!r}")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def n_taxa(self) -> int:
        return len(self.taxon_ids)

    def taxon_index(self, taxon: str) -> int:
        try:
            return self.taxon_ids.index(taxon)
        except ValueError:
            raise DataError(f"unknown taxon {taxon!r}") from None

    def select(self, samples: Sequence[int] | None = None, taxa: Sequence[int] | None = None) -> "CountMatrix":
        rows = np.arange(self.n_samples) if samples is None else np.asarray(samples, dtype=int)
        cols = np.arange(self.n_taxa) if taxa is None else np.asarray(taxa, dtype=int)
        return CountMatrix(
            [self.sample_ids[i] for i in rows],
            [self.taxon_ids[j] for j in cols],
            self.counts[np.ix_(rows, cols)],
        )

    def to_csv(self, path) -> None:
        write_table(path, self.sample_ids, self.taxon_ids, self.counts)


@dataclass(frozen=True)
class CovariateTable:
    """Per-sample covariates, split into tested (``x``) and adjustment (``w``) columns."""

    sample_ids: tuple[str, ...]
    x: np.ndarray
    w: np.ndarray
    x_names: tuple[str, ...]
    w_names: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.sample_ids)
        x = np.array(self.x, dtype=float).reshape(n, -1)
        w = np.array(self.w, dtype=float).reshape(n, -1) if np.size(self.w) else np.zeros((n, 0))
        object.__setattr__(self, "sample_ids", tuple(str(s) for s in self.sample_ids))
        object.__setattr__(self, "x_names", tuple(self.x_names))
        object.__setattr__(self, "w_names", tuple(self.w_names))
        if x.shape[1] != len(self.x_names) or w.shape[1] != len(self.w_names):
            raise DataError("covariate matrix width does not match its column names")
        if x.shape[1] == 0:
            raise DataError("at least one tested covariate is required")
        _check_unique(self.sample_ids, "sample")
        overlap = set(self.x_names) & set(self.w_names)
        if overlap:
            raise DataError(f"covariates listed as both tested and adjustment: {sorted(overlap)}")
        for arr in (x, w):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", w)

    @property
    def q(self) -> int:
        return self.x.shape[1]

    @property
    def s(self) -> int:
        return self.w.shape[1]

    def select(self, samples: Sequence[int]) -> "CovariateTable":
        rows = np.asarray(samples, dtype=int)
        return CovariateTable(
            [self.sample_ids[i] for i in rows], self.x[rows], self.w[rows], self.x_names, self.w_names
        )

    def with_x(self, x: np.ndarray) -> "CovariateTable":
        return replace(self, x=x)

    def to_csv(self, path) -> None:
        write_table(path, self.sample_ids, self.x_names + self.w_names, np.hstack([self.x, self.w]))


@dataclass(frozen=True)
class AnalysisConfig:
    """Tuning knobs for the two-phase pipeline.

    ``min_overlap=None`` resolves to ``max(Q + S + 2, 10)`` once the
    covariate table is known (see :meth:`resolved_min_overlap`).

    ``shared_lambda`` makes each Phase-1 reference pass pick one MCP lambda
    for all of its ratio regressions (pooled BIC) instead of one per taxon.
    """

    alpha: float = 0.25
    r_refs: int = 40
    n_perms: int = 40
    mcp_gamma: float = 3.0
    lambda_grid_size: int = 30
    bootstrap_reps: int = 500
    ci_level: float = 0.95
    min_overlap: int | None = None
    master_seed: int = 0
    cv_folds: int = 5
    bonferroni: bool = False
    threads: int = 1
    shared_lambda: bool = True

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise DataError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.r_refs < 2:
            raise DataError(f"r_refs must be >= 2, got {self.r_refs}")
        if self.n_perms < 1:
            raise DataError(f"n_perms must be >= 1, got {self.n_perms}")
        if self.mcp_gamma <= 1:
            raise DataError(f"mcp_gamma must exceed 1, got {self.mcp_gamma}")
        if self.lambda_grid_size < 2:
            raise DataError("lambda_grid_size must be >= 2")
        if self.bootstrap_reps < 1:
            raise DataError("bootstrap_reps must be >= 1")
        if not 0 < self.ci_level < 1:
            raise DataError(f"ci_level must lie in (0, 1), got {self.ci_level}")
        if self.min_overlap is not None and self.min_overlap < 2:
            raise DataError("min_overlap must be >= 2")
        if self.cv_folds < 2:
            raise DataError("cv_folds must be >= 2")
        if self.master_seed < 0:
            raise DataError("master_seed must be a nonnegative integer")
        if self.threads < 1:
            raise DataError("threads must be >= 1")

    def resolved_min_overlap(self, q: int, s: int) -> int:
        if self.min_overlap is not None:
            return self.min_overlap
        return max(q + s + 2, 10)

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)


@dataclass(frozen=True)
class ValidatedDataset:
    counts: CountMatrix
    covariates: CovariateTable
    dropped_samples: tuple[tuple[str, str], ...] = field(default=())
    dropped_taxa: tuple[tuple[str, str], ...] = field(default=())

    def __post_init__(self):
        if self.counts.sample_ids != self.covariates.sample_ids:
            raise DataError("counts and covariates are not aligned")

    @property
    def n_samples(self) -> int:
        return self.counts.n_samples

    @property
    def n_taxa(self) -> int:
        return self.counts.n_taxa


# --------------------------------------------------------------------------
# CSV I/O


def write_table(path, row_ids: Sequence[str], col_ids: Sequence[str], values: np.ndarray) -> None:
    """Write a sample-by-column table; floats are written with ``repr`` so they round-trip exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["sample_id", *col_ids])
        for rid, row in zip(row_ids, np.asarray(values, dtype=float)):
            wr.writerow([rid, *(_fmt(v) for v in row)])


def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(float(v))


def _read_table(path) -> tuple[list[str], list[str], np.ndarray]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise DataError(f"{path}: header needs an id column and at least one data column")
    cols = header[1:]
    ids: list[str] = []
    values = np.empty((len(rows) - 1, len(cols)))
    for r, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r + 2} has {len(row)} cells, expected {len(header)}")
        ids.append(row[0].strip())
        for c, cell in enumerate(row[1:]):
            try:
                # float() is locale independent and accepts scientific notation
                values[r, c] = float(cell.strip())
            except ValueError:
                raise DataError(f"{path}: cannot parse {cell!r} at row {r + 2}, column {cols[c]!r}") from None
    return ids, cols, values


def load_count_table(path) -> CountMatrix:
    """Read a count CSV (first column ``sample_id``, one column per taxon)."""
    ids, cols, values = _read_table(path)
    bad = np.argwhere(~np.isfinite(values) | (values < 0))
    if len(bad):
        r, c = bad[0]
        raise DataError(f"{path}: invalid count {values[r, c]!r} at row {r + 2}, column {cols[c]!r}")
    return CountMatrix(ids, cols, values)


def load_covariates(path, x_names: Sequence[str], w_names: Sequence[str] = ()) -> CovariateTable:
    x_names, w_names = list(x_names), list(w_names)
    overlap = set(x_names) & set(w_names)
    if overlap:
        raise DataError(f"covariates listed as both tested and adjustment: {sorted(overlap)}")
    ids, cols, values = _read_table(path)
    for name in x_names + w_names:
        if name not in cols:
            raise DataError(f"{path}: missing covariate column {name!r}")
    xi = [cols.index(n) for n in x_names]
    wi = [cols.index(n) for n in w_names]
    return CovariateTable(ids, values[:, xi], values[:, wi], x_names, w_names)


# --------------------------------------------------------------------------
# Validation


def validate_dataset(counts: CountMatrix, covariates: CovariateTable, config: AnalysisConfig | None = None) -> ValidatedDataset:
    """Align counts with covariates and drop rows/columns that cannot enter any ratio.

    Samples need at least two nonzero taxa; taxa need at least one nonzero
    sample.  Dropping a taxon can push a sample under two nonzero taxa (and
    vice versa), so the two filters are iterated to a fixed point.  Output
    order follows the count table.
    """
    cov_index = {s: i for i, s in enumerate(covariates.sample_ids)}
    dropped_samples: list[tuple[str, str]] = []
    rows = []
    for i, s in enumerate(counts.sample_ids):
        if s in cov_index:
            rows.append(i)
        else:
            dropped_samples.append((s, "no covariates"))
    if not rows:
        raise DataError("count and covariate tables share no sample ids")
    count_ids = set(counts.sample_ids)
    for s in covariates.sample_ids:
        if s not in count_ids:
            dropped_samples.append((s, "no counts"))

    cov_rows = [cov_index[counts.sample_ids[i]] for i in rows]
    miss = ~np.isfinite(covariates.x[cov_rows]).all(axis=1)
    if covariates.s:
        miss |= ~np.isfinite(covariates.w[cov_rows]).all(axis=1)
    for i in np.flatnonzero(miss):
        dropped_samples.append((counts.sample_ids[rows[i]], "missing covariate"))
    rows = [r for r, m in zip(rows, miss) if not m]

    Y = counts.counts
    rows = np.asarray(rows, dtype=int)
    cols = np.arange(counts.n_taxa)
    dropped_taxa: list[tuple[str, str]] = []
    while True:
        sub = Y[np.ix_(rows, cols)] > 0
        bad_rows = sub.sum(axis=1) < 2
        for i in np.flatnonzero(bad_rows):
            dropped_samples.append((counts.sample_ids[rows[i]], "fewer than 2 nonzero taxa"))
        rows = rows[~bad_rows]
        sub = sub[~bad_rows]
        bad_cols = ~sub.any(axis=0) if len(rows) else np.ones(len(cols), bool)
        for j in np.flatnonzero(bad_cols):
            dropped_taxa.append((counts.taxon_ids[cols[j]], "all-zero taxon"))
        cols = cols[~bad_cols]
        if not bad_rows.any() and not bad_cols.any():
            break
    if len(rows) == 0 or len(cols) < 2:
        raise DataError("no samples with at least two nonzero taxa remain after validation")

    for sid, why in dropped_samples:
        log.info("dropping sample %s: %s", sid, why)
    for tid, why in dropped_taxa:
        log.info("dropping taxon %s: %s", tid, why)

    kept_counts = counts.select(rows, cols)
    kept_cov = covariates.select([cov_index[counts.sample_ids[i]] for i in rows])
    const = [n for n, col in zip(kept_cov.x_names, kept_cov.x.T) if np.ptp(col) == 0]
    if const:
        raise DataError(f"tested covariate(s) constant across retained samples: {const}")
    return ValidatedDataset(kept_counts, kept_cov, tuple(dropped_samples), tuple(dropped_taxa))


def is_binary(col: np.ndarray) -> bool:
    vals = np.unique(col)
    return len(vals) == 2
