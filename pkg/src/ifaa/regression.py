"""Penalized linear regression: MCP and Lasso by coordinate descent,
partial-ridge refits and bootstrap Lasso + partial-ridge intervals.

All solvers work on weighted sufficient statistics so that a batch of
problems sharing a design shape can be solved at once.  A row weight of 0
removes the row (ratio masks, CV folds), an integer weight repeats it
(paired bootstrap).  The intercept is always present and unpenalized; it is
handled by weighted centering, and other unpenalized columns are profiled
out of the penalized problem exactly.

Penalized columns flagged in ``standardize_mask`` are scaled to unit
weighted mean square *after* the unpenalized columns are projected out.
The objective being minimized is

    (1 / 2n) * RSS  +  sum_j pen(|b_j|; lam, gamma)

in standardized units; coefficients are reported on the original scale.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .seeding import BOOTSTRAP, CV_FOLDS, derive_rng

log = logging.getLogger(__name__)

TOL = 1e-7
MAX_SWEEPS = 10_000
_DEGENERATE_RTOL = 1e-12


class RegressionError(RuntimeError):
    pass


def soft_threshold(z, lam):
    return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)


def mcp_threshold(z: float, lam: float, gamma: float) -> float:
    """Univariate MCP solution for a unit-scaled coordinate."""
    if gamma <= 1:
        raise ValueError(f"MCP gamma must exceed 1, got {gamma}")
    if abs(z) <= gamma * lam:
        return float(soft_threshold(z, lam) / (1.0 - 1.0 / gamma))
    return float(z)


def _mcp_penalty(b, lam, gamma):
    ab = np.abs(b)
    inner = lam * ab - ab**2 / (2 * gamma)
    return np.where(ab <= gamma * lam, inner, 0.5 * gamma * lam**2)


def _update(z, a, lam, gamma, penalty):
    """Minimize a/2 b^2 - z b + pen(b) elementwise."""
    if penalty == "lasso":
        return soft_threshold(z, lam) / a
    inv_g = 1.0 / gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = soft_threshold(z, lam) / (a - inv_g)
        outer = z / a
    out = np.where(np.abs(z) <= a * gamma * lam, inner, outer)
    weak = a <= inv_g
    if np.any(weak):
        # nonconvex coordinate: compare the candidate minimizers directly
        cands = np.stack([np.zeros_like(outer), outer, np.sign(z) * gamma * lam])
        obj = 0.5 * a * cands**2 - z * cands + _mcp_penalty(cands, lam, gamma)
        best = np.take_along_axis(cands, np.argmin(obj, axis=0)[None], axis=0)[0]
        out = np.where(weak, best, out)
    return out


# --------------------------------------------------------------------------
# problem containers


@dataclass(frozen=True)
class RegressionProblem:
    design: np.ndarray
    response: np.ndarray
    penalty_mask: np.ndarray
    standardize_mask: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.design, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.response, dtype=float).ravel()
        pm = np.asarray(self.penalty_mask, dtype=bool).ravel()
        sm = pm.copy() if self.standardize_mask is None else np.asarray(self.standardize_mask, dtype=bool).ravel()
        if X.shape[0] != y.shape[0] or X.shape[0] < 1:
            raise ValueError("design and response must have the same, positive, number of rows")
        if pm.shape[0] != X.shape[1] or sm.shape[0] != X.shape[1]:
            raise ValueError("masks must have one entry per design column")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("design and response must be finite")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "penalty_mask", pm)
        object.__setattr__(self, "standardize_mask", sm)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]


@dataclass
class SparseFit:
    coefficients: np.ndarray
    intercept: float
    selected: frozenset
    lam: float
    objective: float
    degenerate: tuple = ()


@dataclass
class EstimateWithCI:
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    n_skipped: int = 0
    support: frozenset = field(default_factory=frozenset)


# --------------------------------------------------------------------------
# batched sufficient statistics


@dataclass
class Gram:
    """Weighted, centered, profiled and standardized statistics for a batch.

    Shapes: B problems, p design columns, q penalized columns.
    """

    pen: np.ndarray  # (p,) bool
    nw: np.ndarray  # (B,)
    xm: np.ndarray  # (B, p)
    ym: np.ndarray  # (B,)
    G: np.ndarray  # (B, p, p) centered weighted Gram
    c: np.ndarray  # (B, p)
    yy: np.ndarray  # (B,)
    scale: np.ndarray  # (B, q)
    Ghat: np.ndarray  # (B, q, q)
    chat: np.ndarray  # (B, q)
    yhat: np.ndarray  # (B,)
    degenerate: np.ndarray  # (B, q) bool
    H: np.ndarray | None  # (B, u, u) pseudo-inverse of unpenalized block


def _batch_inputs(design, y, w):
    y = np.atleast_2d(np.asarray(y, dtype=float))
    B, n = y.shape
    w = np.broadcast_to(np.asarray(w, dtype=float), (B, n))
    X = np.asarray(design, dtype=float)
    if X.ndim == 2:
        X = X[None]
    X = np.broadcast_to(X, (B, n, X.shape[-1]))
    return X, y, w


def build_gram(design, y, w, pen_mask, std_mask=None) -> Gram:
    """Sufficient statistics for ``B`` weighted least-squares problems.

    ``design`` is ``(n, p)`` (shared) or ``(B, n, p)``; ``y`` and ``w`` are
    ``(B, n)`` (``w`` may broadcast).
    """
    X, y, w = _batch_inputs(design, y, w)
    pen = np.asarray(pen_mask, dtype=bool)
    std = pen if std_mask is None else np.asarray(std_mask, dtype=bool)
    nw = w.sum(axis=1)
    safe = np.where(nw > 0, nw, 1.0)
    xm = np.einsum("bi,bij->bj", w, X) / safe[:, None]
    ym = np.einsum("bi,bi->b", w, y) / safe
    Xc = X - xm[:, None, :]
    yc = y - ym[:, None]
    wX = w[:, :, None] * Xc
    G = np.einsum("bij,bik->bjk", wX, Xc)
    c = np.einsum("bij,bi->bj", wX, yc)
    yy = np.einsum("bi,bi->b", w, yc * yc)
    raw = np.einsum("bij,bij->bj", w[:, :, None] * X, X)

    P = np.flatnonzero(pen)
    U = np.flatnonzero(~pen)
    GPP = G[:, P][:, :, P]
    cP = c[:, P]
    yyP = yy.copy()
    H = None
    if len(U):
        GUU = G[:, U][:, :, U]
        GPU = G[:, P][:, :, U]
        cU = c[:, U]
        H = np.linalg.pinv(GUU, hermitian=True)
        GPP = GPP - GPU @ H @ np.swapaxes(GPU, 1, 2)
        cP = cP - np.einsum("bpu,buv,bv->bp", GPU, H, cU)
        yyP = yyP - np.einsum("bu,buv,bv->b", cU, H, cU)
    yyP = np.maximum(yyP, 0.0)

    diag = np.einsum("bjj->bj", GPP) if len(P) else np.zeros((len(nw), 0))
    degenerate = diag <= _DEGENERATE_RTOL * np.maximum(raw[:, P], 1e-300)
    s = np.where(std[P][None, :], np.sqrt(np.maximum(diag, 0.0) / safe[:, None]), 1.0)
    s = np.where(degenerate | (s <= 0), 1.0, s)
    Ghat = GPP / (safe[:, None, None] * s[:, :, None] * s[:, None, :])
    chat = cP / (safe[:, None] * s)
    # degenerate columns are pinned at zero: decouple them from the rest
    if degenerate.any():
        keep = ~degenerate
        Ghat = Ghat * keep[:, :, None] * keep[:, None, :]
        idx = np.arange(len(P))
        Ghat[:, idx, idx] = np.where(degenerate, 1.0, Ghat[:, idx, idx])
        chat = np.where(degenerate, 0.0, chat)
    return Gram(pen, nw, xm, ym, G, c, yy, s, Ghat, chat, yyP / safe, degenerate, H)


def lambda_max(gram: Gram) -> np.ndarray:
    if gram.chat.shape[1] == 0:
        return np.zeros(len(gram.nw))
    return np.abs(gram.chat).max(axis=1)


def lambda_grid(lmax: np.ndarray, size: int, ratio: float = 0.01) -> np.ndarray:
    """(B, size) log-spaced grids from ``lmax`` down to ``ratio * lmax``."""
    steps = np.logspace(0.0, np.log10(ratio), size)
    return np.asarray(lmax)[:, None] * steps[None, :]


def objective(gram: Gram, b: np.ndarray, lam, gamma: float, penalty: str) -> np.ndarray:
    """Penalized objective in standardized units for coefficient batch ``b`` (B, q)."""
    quad = 0.5 * (gram.yhat - 2 * np.einsum("bj,bj->b", gram.chat, b) + np.einsum("bj,bjk,bk->b", b, gram.Ghat, b))
    lam = np.asarray(lam, dtype=float).reshape(-1, 1)
    if penalty == "lasso":
        pen = (lam * np.abs(b)).sum(axis=1)
    else:
        pen = _mcp_penalty(b, lam, gamma).sum(axis=1)
    return quad + pen


def coordinate_descent(gram: Gram, lam, penalty: str = "mcp", gamma: float = 3.0, b0=None,
                       tol: float = TOL, max_sweeps: int = MAX_SWEEPS, history: bool = False):
    """Cyclic coordinate descent at fixed ``lam`` (scalar or per-problem).

    Returns standardized coefficients ``(B, q)`` and, with ``history=True``,
    the list of objective values after each sweep.
    """
    Ghat, chat = gram.Ghat, gram.chat
    B, q = chat.shape
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (B,))
    b = np.zeros((B, q)) if b0 is None else np.array(b0, dtype=float)
    hist = [objective(gram, b, lam, gamma, penalty)] if history else None
    if q == 0:
        return (b, hist) if history else b
    diag = np.einsum("bjj->bj", Ghat)
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(q):
            z = chat[:, j] - np.einsum("bk,bk->b", Ghat[:, j, :], b) + diag[:, j] * b[:, j]
            new = _update(z, diag[:, j], lam, gamma, penalty)
            new = np.where(gram.degenerate[:, j], 0.0, new)
            d = np.abs(new - b[:, j])
            if d.size:
                delta = max(delta, float(d.max()))
            b[:, j] = new
        if history:
            hist.append(objective(gram, b, lam, gamma, penalty))
        if delta < tol:
            break
    else:
        log.debug("coordinate descent hit %d sweeps without converging", max_sweeps)
    return (b, hist) if history else b


def solve_path(gram: Gram, lambdas: np.ndarray, penalty: str = "mcp", gamma: float = 3.0,
               tol: float = TOL, max_sweeps: int = MAX_SWEEPS) -> np.ndarray:
    """Warm-started path over the columns of ``lambdas`` (B, L) -> (B, L, q)."""
    B, L = lambdas.shape
    q = gram.chat.shape[1]
    out = np.zeros((B, L, q))
    b = np.zeros((B, q))
    for l in range(L):
        b = coordinate_descent(gram, lambdas[:, l], penalty, gamma, b0=b, tol=tol, max_sweeps=max_sweeps)
        out[:, l] = b
    return out


def to_original(gram: Gram, bstd: np.ndarray):
    """Map standardized penalized coefficients (..., q) to (intercept, beta (..., p)).

    Leading axes after the batch axis (e.g. a lambda axis) are supported:
    ``bstd`` has shape ``(B, ..., q)``.
    """
    B = bstd.shape[0]
    extra = bstd.shape[1:-1]
    P = np.flatnonzero(gram.pen)
    U = np.flatnonzero(~gram.pen)
    p = len(gram.pen)
    sc = gram.scale.reshape((B,) + (1,) * len(extra) + (-1,))
    bp = bstd / sc
    beta = np.zeros((B,) + extra + (p,))
    beta[..., P] = bp
    if len(U):
        GUP = gram.G[:, U][:, :, P]
        cU = gram.c[:, U]
        rhs = cU.reshape((B,) + (1,) * len(extra) + (-1,)) - np.einsum("bup,b...p->b...u", GUP, bp)
        beta[..., U] = np.einsum("buv,b...v->b...u", gram.H, rhs)
    xm = gram.xm.reshape((B,) + (1,) * len(extra) + (p,))
    intercept = gram.ym.reshape((B,) + (1,) * len(extra)) - (xm * beta).sum(axis=-1)
    return intercept, beta


def rss_from_std(gram: Gram, bstd: np.ndarray) -> np.ndarray:
    """Weighted RSS for standardized coefficients ``(B, ..., q)`` with unpenalized columns at their optimum."""
    B = bstd.shape[0]
    extra = bstd.shape[1:-1]
    sh = (B,) + (1,) * len(extra)
    lin = np.einsum("bj,b...j->b...", gram.chat, bstd)
    quad = np.einsum("b...j,bjk,b...k->b...", bstd, gram.Ghat, bstd)
    r = gram.nw.reshape(sh) * (gram.yhat.reshape(sh) - 2 * lin + quad)
    return np.maximum(r, 0.0)


# --------------------------------------------------------------------------
# batched selectors used by the pipeline


def mcp_bic_batch(design, y, w, pen_mask, gamma: float = 3.0, grid_size: int = 30, std_mask=None, groups=None):
    """MCP path + BIC choice for a batch of problems.

    Without ``groups`` every problem gets its own lambda grid and BIC.  With
    ``groups`` (one integer label per problem) problems sharing a label are
    treated as one stacked regression: a common lambda grid running down
    from the largest ``lambda_max`` in the group, and a single pooled BIC
    (total RSS over total rows, total nonzero count) choosing one lambda for
    the whole group.

    Returns ``(selected (B,) bool, beta (B, p), gram)`` where ``selected``
    flags problems whose chosen fit has any nonzero penalized coefficient.
    """
    gram = build_gram(design, y, w, pen_mask, std_mask)
    lmax = lambda_max(gram)
    n_unpen = 1 + int((~gram.pen).sum())
    if groups is None:
        lams = lambda_grid(lmax, grid_size)
        path = solve_path(gram, lams, "mcp", gamma)
        rss = rss_from_std(gram, path)
        n = np.maximum(gram.nw, 1.0)[:, None]
        df = (path != 0).sum(axis=2) + n_unpen
        bic = n * np.log(np.maximum(rss / n, 1e-300)) + np.log(n) * df
        best = np.argmin(bic, axis=1)  # first minimum: sparsest on ties
    else:
        groups = np.asarray(groups)
        labels, inv = np.unique(groups, return_inverse=True)
        gmax = np.zeros(len(labels))
        np.maximum.at(gmax, inv, lmax)
        lams = lambda_grid(gmax, grid_size)[inv]
        path = solve_path(gram, lams, "mcp", gamma)
        rss = rss_from_std(gram, path)
        L = lams.shape[1]
        rss_g = np.zeros((len(labels), L))
        df_g = np.zeros((len(labels), L))
        n_g = np.zeros(len(labels))
        np.add.at(rss_g, inv, rss)
        np.add.at(df_g, inv, (path != 0).sum(axis=2) + n_unpen)
        np.add.at(n_g, inv, gram.nw)
        n_g = np.maximum(n_g, 1.0)[:, None]
        bic = n_g * np.log(np.maximum(rss_g / n_g, 1e-300)) + np.log(n_g) * df_g
        best = np.argmin(bic, axis=1)[inv]
    chosen = path[np.arange(len(best)), best]
    _, beta = to_original(gram, chosen)
    return (chosen != 0).any(axis=1), beta, gram


def _fold_ids(n_rows_mask: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold labels for rows with positive weight (others get -1)."""
    idx = np.flatnonzero(n_rows_mask)
    lab = np.full(n_rows_mask.shape[0], -1)
    perm = rng.permutation(len(idx))
    lab[idx[perm]] = np.arange(len(idx)) % folds
    return lab


def lasso_cv_batch(design, y, w, pen_mask, grid_size: int, folds: int, rngs, std_mask=None):
    """Lasso with K-fold CV for each of B problems (rows with ``w > 0``).

    ``rngs`` supplies one generator per problem for fold assignment.
    Returns ``(lam (B,), beta (B, p), intercept (B,), gram)`` for the refit on
    all rows at the CV-chosen lambda.
    """
    X, y, w = _batch_inputs(design, y, w)
    B, n, p = X.shape
    gram = build_gram(X, y, w, pen_mask, std_mask)
    lams = lambda_grid(lambda_max(gram), grid_size)
    labels = np.stack([_fold_ids(w[b] > 0, folds, rngs[b]) for b in range(B)])
    # (B*F) training problems
    Xf = np.repeat(X, folds, axis=0)
    yf = np.repeat(y, folds, axis=0)
    lf = np.repeat(labels, folds, axis=0)
    fid = np.tile(np.arange(folds), B)
    wtrain = np.repeat(w, folds, axis=0) * (lf != fid[:, None])
    gf = build_gram(Xf, yf, wtrain, pen_mask, std_mask)
    path = solve_path(gf, np.repeat(lams, folds, axis=0), "lasso")
    icpt, beta = to_original(gf, path)  # (B*F, L), (B*F, L, p)
    pred = icpt[:, :, None] + np.einsum("bip,blp->bli", Xf, beta)
    test = (lf == fid[:, None]).astype(float)
    err = ((yf[:, None, :] - pred) ** 2 * test[:, None, :]).sum(axis=2)  # (B*F, L)
    cv = err.reshape(B, folds, -1).sum(axis=1) / np.maximum((labels >= 0).sum(axis=1), 1)[:, None]
    best = np.argmin(cv, axis=1)
    lam = lams[np.arange(B), best]
    full = solve_path(gram, lams[:, : best.max() + 1], "lasso")
    chosen = full[np.arange(B), best]
    icpt, beta = to_original(gram, chosen)
    return lam, beta, icpt, gram


def lasso_fixed_batch(design, y, w, pen_mask, lam, std_mask=None):
    """Lasso at a fixed lambda per problem, warm-started from a short path."""
    gram = build_gram(design, y, w, pen_mask, std_mask)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), gram.nw.shape)
    lmax = np.maximum(lambda_max(gram), lam)
    lams = np.exp(np.linspace(np.log(np.maximum(lmax, 1e-300)), np.log(np.maximum(lam, 1e-300)), 5).T)
    lams[:, -1] = lam
    path = solve_path(gram, lams, "lasso")
    icpt, beta = to_original(gram, path[:, -1])
    return beta, icpt, gram


def partial_ridge_batch(design, y, w, pen_mask, support, ridge_lambda):
    """Partial-ridge refits for B problems.

    ``support`` is ``(B, p)`` bool (penalized columns exempt from the ridge).
    Minimizes weighted RSS + ridge_lambda * sum of squared off-support
    penalized coefficients; the intercept is unpenalized.  Returns
    ``(beta (B, p), intercept (B,), ok (B,))``; ``ok`` is False where the
    system was singular.
    """
    X, y, w = _batch_inputs(design, y, w)
    B, n, p = X.shape
    pen = np.asarray(pen_mask, dtype=bool)
    nw = w.sum(axis=1)
    safe = np.where(nw > 0, nw, 1.0)
    xm = np.einsum("bi,bij->bj", w, X) / safe[:, None]
    ym = np.einsum("bi,bi->b", w, y) / safe
    Xc = X - xm[:, None, :]
    wX = w[:, :, None] * Xc
    G = np.einsum("bij,bik->bjk", wX, Xc)
    c = np.einsum("bij,bi->bj", wX, y - ym[:, None])
    ridge = pen[None, :] & ~np.asarray(support, dtype=bool).reshape(-1, p)
    A = G + np.einsum("bj,jk->bjk", ridge * float(ridge_lambda), np.eye(p))
    d = np.sqrt(np.maximum(np.einsum("bjj->bj", A), 1e-300))
    cond = np.linalg.cond(A / (d[:, :, None] * d[:, None, :]))
    ok = np.isfinite(cond) & (cond < 1e10)
    beta = np.full((B, p), np.nan)
    if ok.any():
        beta[ok] = np.linalg.solve(A[ok], c[ok][:, :, None])[:, :, 0]
    beta[~ok] = np.nan
    icpt = ym - np.einsum("bj,bj->b", xm, beta)
    return beta, icpt, ok


# --------------------------------------------------------------------------
# single-problem API


def _single(problem: RegressionProblem):
    return problem.design, problem.response[None], np.ones((1, problem.n))


def _warn_degenerate(gram: Gram, problem: RegressionProblem):
    P = np.flatnonzero(problem.penalty_mask)
    bad = tuple(int(P[j]) for j in np.flatnonzero(gram.degenerate[0]))
    for j in bad:
        warnings.warn(f"design column {j} has zero variance after adjustment; its coefficient is fixed at 0",
                      RuntimeWarning, stacklevel=3)
    return bad


def _fit_from_std(gram, problem, bstd, lam, gamma, penalty, degenerate):
    icpt, beta = to_original(gram, bstd[None] if bstd.ndim == 1 else bstd)
    beta = beta[0]
    P = np.flatnonzero(problem.penalty_mask)
    sel = frozenset(int(P[j]) for j in np.flatnonzero(bstd.reshape(-1) != 0))
    obj = float(objective(gram, bstd.reshape(1, -1), lam, gamma, penalty)[0])
    return SparseFit(beta, float(icpt[0]), sel, float(lam), obj, degenerate)


def fit_mcp_regression(problem: RegressionProblem, gamma: float = 3.0, lambda_grid_size: int = 30,
                       lam: float | None = None) -> SparseFit:
    """MCP fit with lambda chosen by BIC over a log grid (or fixed ``lam``)."""
    if gamma <= 1:
        raise ValueError(f"MCP gamma must exceed 1, got {gamma}")
    gram = build_gram(*_single(problem), problem.penalty_mask, problem.standardize_mask)
    degenerate = _warn_degenerate(gram, problem)
    if lam is not None:
        b = coordinate_descent(gram, lam, "mcp", gamma)
        return _fit_from_std(gram, problem, b[0], lam, gamma, "mcp", degenerate)
    lams = lambda_grid(lambda_max(gram), lambda_grid_size)
    path = solve_path(gram, lams, "mcp", gamma)
    rss = rss_from_std(gram, path)[0]
    n = problem.n
    df = (path[0] != 0).sum(axis=1) + 1 + int((~problem.penalty_mask).sum())
    bic = n * np.log(np.maximum(rss / n, 1e-300)) + np.log(n) * df
    best = int(np.argmin(bic))
    return _fit_from_std(gram, problem, path[0, best], lams[0, best], gamma, "mcp", degenerate)


def fit_lasso(problem: RegressionProblem, lambda_grid_size: int = 30, cv_folds: int = 5,
              lam: float | None = None, seed: int = 0) -> SparseFit:
    """Lasso fit; lambda by ``cv_folds``-fold CV unless ``lam`` is given.

    Fold assignment is a seeded permutation of the rows, so repeated calls
    with the same ``seed`` are identical.
    """
    X, y, w = _single(problem)
    if lam is not None:
        gram = build_gram(X, y, w, problem.penalty_mask, problem.standardize_mask)
        degenerate = _warn_degenerate(gram, problem)
        b = coordinate_descent(gram, lam, "lasso")
        return _fit_from_std(gram, problem, b[0], lam, 1.0, "lasso", degenerate)
    if problem.n < cv_folds:
        raise RegressionError(f"{problem.n} rows are too few for {cv_folds}-fold CV")
    lam_cv, _, _, gram = lasso_cv_batch(X, y, w, problem.penalty_mask, lambda_grid_size, cv_folds,
                                        [derive_rng(seed, CV_FOLDS)], problem.standardize_mask)
    degenerate = _warn_degenerate(gram, problem)
    b = coordinate_descent(gram, lam_cv[0], "lasso")
    return _fit_from_std(gram, problem, b[0], lam_cv[0], 1.0, "lasso", degenerate)


def partial_ridge_refit(problem: RegressionProblem, support, ridge_lambda: float) -> np.ndarray:
    """Least squares with a ridge on penalized columns outside ``support``."""
    pen = problem.penalty_mask
    sup = np.zeros(problem.p, dtype=bool)
    sup[list(support)] = True
    if np.any(sup & ~pen):
        raise ValueError("support must contain penalized columns only")
    beta, _, ok = partial_ridge_batch(problem.design, problem.response[None], np.ones((1, problem.n)), pen,
                                      sup[None], ridge_lambda)
    if not ok[0]:
        raise RegressionError("partial ridge system is singular (rank-deficient design with no ridge)")
    return beta[0]


def lpr_estimate(problem: RegressionProblem, config, rng: np.random.Generator, lambda_grid_size=None,
                 cv_folds=None):
    """CV Lasso support plus partial-ridge refit on the full data.

    Returns ``(estimate (p,), support (p,) bool, lasso lambda)``.  Consumes
    exactly one draw from ``rng`` (the fold seed).
    """
    n = problem.n
    grid = lambda_grid_size or config.lambda_grid_size
    folds = min(cv_folds or config.cv_folds, n)
    pen = problem.penalty_mask
    X, y = problem.design, problem.response
    cv_seed = int(rng.integers(0, 2**63 - 1))
    lam, beta_l, _, _ = lasso_cv_batch(X, y[None], np.ones((1, n)), pen, grid, folds,
                                       [derive_rng(cv_seed, CV_FOLDS)], problem.standardize_mask)
    support = (beta_l[0] != 0) & pen
    est, _, ok = partial_ridge_batch(X, y[None], np.ones((1, n)), pen, support[None], 1.0 / n)
    if not ok[0]:
        raise RegressionError("partial ridge system is singular on the full data")
    return est[0], support, float(lam[0])


def bootstrap_lpr_ci(problem: RegressionProblem, config, rng: np.random.Generator, lambda_grid_size=None,
                     cv_folds=None) -> EstimateWithCI:
    """Paired-bootstrap Lasso + partial-ridge estimate and percentile interval.

    The Lasso penalty is chosen once by CV on the full data and reused for
    every bootstrap resample; the ridge weight is ``1/n``.
    """
    n = problem.n
    pen = problem.penalty_mask
    X, y = problem.design, problem.response
    est, support, lam = lpr_estimate(problem, config, rng, lambda_grid_size, cv_folds)
    ridge = 1.0 / n

    B = config.bootstrap_reps
    boot_seed = int(rng.integers(0, 2**63 - 1))
    brng = derive_rng(boot_seed, BOOTSTRAP)
    W = brng.multinomial(n, np.full(n, 1.0 / n), size=B).astype(float)
    ym = W @ y / n
    var = W @ (y * y) / n - ym**2
    usable = var > 1e-14 * np.maximum(W @ (y * y) / n, 1e-300)
    bl, _, _ = lasso_fixed_batch(X, np.broadcast_to(y, (B, n)), W, pen, lam, problem.standardize_mask)
    sup_b = (bl != 0) & pen[None, :]
    bb, _, okb = partial_ridge_batch(X, np.broadcast_to(y, (B, n)), W, pen, sup_b, ridge)
    keep = usable & okb
    skipped = int(B - keep.sum())
    if skipped:
        log.info("bootstrap: skipped %d of %d degenerate resamples", skipped, B)
    if skipped > 0.2 * B:
        raise RegressionError(f"{skipped} of {B} bootstrap resamples were degenerate")
    draws = bb[keep]
    a = (1 - config.ci_level) / 2
    lower = np.quantile(draws, a, axis=0)
    upper = np.quantile(draws, 1 - a, axis=0)
    return EstimateWithCI(est, lower, upper, config.ci_level, skipped,
                          frozenset(int(j) for j in np.flatnonzero(support)))
