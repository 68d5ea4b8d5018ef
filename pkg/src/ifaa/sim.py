"""Data generators.

Two simulators live here: the zero-inflated log-normal model (a presence
pattern per subject, then log-normal abundances for the present taxa) and
the Poisson-gamma benchmark generator with group-confounded sampling
fractions used for the method comparison experiments.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping

import numpy as np
from scipy import stats

from .data import CountMatrix, CovariateTable
from .seeding import SCENARIO_PARAMS, derive_rng


class ScenarioError(ValueError):
    pass


# --------------------------------------------------------------------------
# zero-inflated log-normal


@dataclass(frozen=True)
class ZilnParams:
    """Parameters of the zero-inflated log-normal law on K+1 taxa.

    ``presence_masses`` maps nonempty sets of 0-based taxon indices to their
    probability of being exactly the set of present taxa; only sets with
    positive mass need to be listed.  Alternatively ``presence_probs`` gives
    independent per-taxon presence probabilities, conditioned on at least
    one taxon being present (see :meth:`independent`).
    """

    mu: np.ndarray
    sigma: np.ndarray
    presence_masses: Mapping[frozenset, float] | None = None
    random_intercept_sd: float = 0.0
    presence_probs: np.ndarray | None = None

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).ravel()
        sigma = np.asarray(self.sigma, dtype=float)
        k1 = mu.shape[0]
        if sigma.shape != (k1, k1):
            raise ValueError(f"sigma must be {k1}x{k1}")
        if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-12 * max(1.0, np.abs(sigma).max())):
            raise ValueError("sigma must be symmetric")
        if np.any(np.diag(sigma) < 0):
            raise ValueError("sigma diagonal must be nonnegative")
        if self.random_intercept_sd < 0:
            raise ValueError("random_intercept_sd must be nonnegative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        if (self.presence_masses is None) == (self.presence_probs is None):
            raise ValueError("give exactly one of presence_masses or presence_probs")
        if self.presence_masses is not None:
            masses = {}
            for key, p in self.presence_masses.items():
                sub = frozenset(int(k) for k in key)
                if any(k < 0 or k >= k1 for k in sub):
                    raise ValueError(f"presence subset {sorted(sub)} has out-of-range taxa")
                if p < 0:
                    raise ValueError("presence masses must be nonnegative")
                if not sub:
                    if p > 0:
                        raise ValueError("the empty presence set cannot carry mass")
                    continue
                if p > 0:
                    masses[sub] = masses.get(sub, 0.0) + float(p)
            if not masses:
                raise ValueError("presence masses put no weight on a nonempty set")
            total = sum(masses.values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"presence masses sum to {total}, not 1")
            object.__setattr__(self, "presence_masses", masses)
        else:
            probs = np.asarray(self.presence_probs, dtype=float).ravel()
            if probs.shape != (k1,) or np.any((probs < 0) | (probs > 1)) or not np.any(probs > 0):
                raise ValueError("presence_probs must be K+1 probabilities, not all zero")
            object.__setattr__(self, "presence_probs", probs)

    @classmethod
    def independent(cls, mu, sigma, probs, random_intercept_sd: float = 0.0) -> "ZilnParams":
        return cls(mu, sigma, None, random_intercept_sd, np.asarray(probs, dtype=float))

    @property
    def n_taxa(self) -> int:
        return self.mu.shape[0]


def _is_psd(m: np.ndarray) -> bool:
    if m.size == 0:
        return True
    ev = np.linalg.eigvalsh(m)
    return ev.min() >= -1e-10 * max(1.0, abs(ev).max())


def _mvn(rng, mean, cov, n):
    # eigh factor tolerates singular (PSD) covariances, including all zeros
    w, v = np.linalg.eigh(cov)
    f = v * np.sqrt(np.clip(w, 0, None))
    return mean + rng.standard_normal((n, len(mean))) @ f.T


def _presence(params: ZilnParams, n: int, rng) -> np.ndarray:
    k1 = params.n_taxa
    out = np.zeros((n, k1), dtype=bool)
    if params.presence_masses is not None:
        subsets = list(params.presence_masses)
        p = np.array([params.presence_masses[s] for s in subsets])
        pick = rng.choice(len(subsets), size=n, p=p / p.sum())
        for i, s in enumerate(pick):
            out[i, sorted(subsets[s])] = True
        return out
    todo = np.arange(n)
    while len(todo):
        draw = rng.random((len(todo), k1)) < params.presence_probs
        ok = draw.any(axis=1)
        out[todo[ok]] = draw[ok]
        todo = todo[~ok]
    return out


def sample_ziln(params: ZilnParams, n: int, rng: np.random.Generator, return_parts: bool = False):
    """Draw ``n`` subjects from the zero-inflated log-normal law.

    Draw order is fixed (presence pattern, log-abundances, random intercept)
    and the intercept is always drawn, so two parameter sets differing only
    in ``random_intercept_sd`` share every other draw under the same seed.
    With ``return_parts`` the presence mask and log-abundances are returned
    as well.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    present = _presence(params, n, rng)
    mu, sigma = params.mu, params.sigma
    if _is_psd(sigma):
        logs = _mvn(rng, mu, sigma, n)
    else:
        logs = np.zeros((n, params.n_taxa))
        patterns = {tuple(np.flatnonzero(r)) for r in present}
        for pat in patterns:
            idx = list(pat)
            if not _is_psd(sigma[np.ix_(idx, idx)]):
                raise ValueError(f"sigma restricted to taxa {idx} is not positive semidefinite")
        for pat in sorted(patterns):
            rows = np.flatnonzero((present == np.isin(np.arange(params.n_taxa), pat)).all(axis=1))
            idx = list(pat)
            logs[np.ix_(rows, idx)] = _mvn(rng, mu[idx], sigma[np.ix_(idx, idx)], len(rows))
    u = rng.standard_normal(n) * params.random_intercept_sd
    logs = logs + u[:, None]
    counts = np.where(present, np.exp(logs), 0.0)
    cm = CountMatrix([f"s{i + 1:04d}" for i in range(n)], [f"t{k + 1:04d}" for k in range(params.n_taxa)], counts)
    if return_parts:
        return cm, present, logs
    return cm


# --------------------------------------------------------------------------
# sampling fraction and dispersion


def apply_sampling_fraction(true_counts: CountMatrix, c) -> CountMatrix:
    """Observed counts ``floor(c_i * true_i^k)`` with per-sample fractions ``c``."""
    c = np.broadcast_to(np.asarray(c, dtype=float), (true_counts.n_samples,))
    if np.any(~(c > 0) | (c > 1)):
        i = int(np.flatnonzero(~(c > 0) | (c > 1))[0])
        raise ValueError(f"sampling fraction for sample {true_counts.sample_ids[i]!r} is {c[i]}, outside (0, 1]")
    return CountMatrix(true_counts.sample_ids, true_counts.taxon_ids, np.floor(c[:, None] * true_counts.counts))


def dispersion_envelope(c_var: float, c_sq_mean: float, y_true_var: float, y_true_mean: float) -> tuple[float, float]:
    """Bounds on var(C * Y) for C independent of Y, from moments of C and Y."""
    if c_var < 0 or y_true_var < 0 or c_sq_mean < 0:
        raise ValueError("variances and second moments must be nonnegative")
    if c_sq_mean < c_var:
        raise ValueError("E[C^2] cannot be smaller than var(C)")
    second = y_true_var + y_true_mean**2
    return c_var * second, c_sq_mean * second


# --------------------------------------------------------------------------
# benchmark generator


@dataclass(frozen=True)
class SimScenario:
    """Poisson-gamma benchmark design.  Triples are ordered as named."""

    n_subjects: int = 50
    n_taxa: int = 500
    frac_differential: float = 0.25
    abundance_mix: tuple = (0.10, 0.30, 0.60)  # high, medium, low
    gamma_shapes: tuple = (50.0, 200.0, 10000.0)  # low, medium, high
    diff_ranges: tuple = ((100.0, 150.0), (200.0, 400.0), (10000.0, 15000.0))  # low, medium, high
    diff_mix: tuple = (0.60, 0.30, 0.10)  # low, medium, high
    c1: float = 1 / 30
    c2: float = 1 / 30
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "abundance_mix", tuple(float(v) for v in self.abundance_mix))
        object.__setattr__(self, "gamma_shapes", tuple(float(v) for v in self.gamma_shapes))
        object.__setattr__(self, "diff_ranges", tuple(tuple(float(x) for x in r) for r in self.diff_ranges))
        object.__setattr__(self, "diff_mix", tuple(float(v) for v in self.diff_mix))
        for name in ("c1", "c2"):
            v = getattr(self, name)
            if not (0 < v <= 1):
                raise ScenarioError(f"{name} must lie in (0, 1], got {v}")
        if self.n_subjects < 2:
            raise ScenarioError("n_subjects must be >= 2")
        if self.n_taxa < 2:
            raise ScenarioError("n_taxa must be >= 2")
        if not 0 <= self.frac_differential <= 1:
            raise ScenarioError("frac_differential must lie in [0, 1]")
        for name in ("abundance_mix", "diff_mix"):
            mix = getattr(self, name)
            if len(mix) != 3 or any(m < 0 for m in mix) or abs(sum(mix) - 1) > 1e-12:
                raise ScenarioError(f"{name} must be three nonnegative fractions summing to 1")
        if len(self.gamma_shapes) != 3 or any(a <= 0 for a in self.gamma_shapes):
            raise ScenarioError("gamma_shapes must be three positive reals")
        if len(self.diff_ranges) != 3 or any(not (0 <= lo <= hi) for lo, hi in self.diff_ranges):
            raise ScenarioError("diff_ranges must be three (u1, u2) intervals with 0 <= u1 <= u2")
        if self.seed < 0:
            raise ScenarioError("seed must be nonnegative")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimScenario":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
        kw = dict(d)
        for key in ("c1", "c2"):
            if isinstance(kw.get(key), str):
                kw[key] = _parse_fraction(kw[key], key)
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "SimScenario":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)


def _parse_fraction(text: str, key: str) -> float:
    try:
        if "/" in text:
            num, den = text.split("/")
            return float(num) / float(den)
        return float(text)
    except (ValueError, ZeroDivisionError):
        raise ScenarioError(f"cannot parse {key}={text!r}") from None


# sampling fractions (group 1, group 2) of the five confounding scenarios
CONFOUNDING = {
    1: (1 / 30, 1 / 30),
    2: (1 / 30, 1 / 90),
    3: (1 / 18, 1 / 90),
    4: (1 / 9, 1 / 90),
    5: (1 / 6, 1 / 90),
}


def benchmark_scenario(k: int, **overrides) -> SimScenario:
    c1, c2 = CONFOUNDING[k]
    kw = dict(c1=c1, c2=c2, name=f"scenario{k}")
    kw.update(overrides)
    return SimScenario(**kw)


@dataclass(frozen=True)
class TaxonTruth:
    lam: np.ndarray
    lam_star: np.ndarray
    abundance_class: np.ndarray  # 0 low, 1 medium, 2 high
    diff_class: np.ndarray  # -1 null, else 0 low, 1 medium, 2 high

    @property
    def is_differential(self) -> np.ndarray:
        return self.diff_class >= 0


@dataclass(frozen=True)
class SimulatedStudy:
    true_counts: CountMatrix
    observed_counts: CountMatrix
    covariates: CovariateTable
    truth: TaxonTruth
    true_effect: np.ndarray = field(repr=False)
    scenario: SimScenario | None = None

    @property
    def differential_taxa(self) -> set[str]:
        return {t for t, d in zip(self.true_counts.taxon_ids, self.truth.is_differential) if d}

    def truth_rows(self):
        for t, d, e in zip(self.true_counts.taxon_ids, self.truth.is_differential, self.true_effect):
            yield t, int(d), float(e)


def _counts_by_mix(total: int, mix) -> list[int]:
    """Split ``total`` into three integer counts by largest remainders."""
    raw = np.asarray(mix) * total
    base = np.floor(raw).astype(int)
    rem = total - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:rem]] += 1
    return base.tolist()


def draw_taxon_parameters(scenario: SimScenario) -> TaxonTruth:
    """Per-taxon Poisson means and shifts; fixed by ``scenario.seed``."""
    rng = derive_rng(scenario.seed, SCENARIO_PARAMS)
    K = scenario.n_taxa
    n_high, n_med, n_low = _counts_by_mix(K, scenario.abundance_mix)
    abundance = rng.permutation(np.repeat([2, 1, 0], [n_high, n_med, n_low]))
    shapes = np.asarray(scenario.gamma_shapes)[abundance]
    lam = rng.gamma(shapes, 1.0)
    n_diff = int(round(scenario.frac_differential * K))
    diff_idx = rng.choice(K, size=n_diff, replace=False) if n_diff else np.array([], dtype=int)
    cls = rng.permutation(np.repeat([0, 1, 2], _counts_by_mix(n_diff, scenario.diff_mix)))
    diff_class = np.full(K, -1)
    diff_class[diff_idx] = cls
    lam_star = np.zeros(K)
    if n_diff:
        lo = np.array([r[0] for r in scenario.diff_ranges])[cls]
        hi = np.array([r[1] for r in scenario.diff_ranges])[cls]
        lam_star[diff_idx] = rng.uniform(lo, hi)
    return TaxonTruth(lam, lam_star, abundance, diff_class)


def generate_benchmark(scenario: SimScenario, rng: np.random.Generator, truth: TaxonTruth | None = None) -> SimulatedStudy:
    """One replicate dataset.

    Taxon parameters come from the scenario seed, so every replicate of a
    scenario shares them; ``rng`` drives group labels and counts.  Group
    labels are Bernoulli(0.5), redrawn in the rare event that one group is
    empty.
    """
    if truth is None:
        truth = draw_taxon_parameters(scenario)
    n = scenario.n_subjects
    while True:
        x = (rng.random(n) < 0.5).astype(float)
        if 0 < x.sum() < n:
            break
    means = truth.lam[None, :] + x[:, None] * truth.lam_star[None, :]
    true = rng.poisson(means).astype(float)
    sids = [f"s{i + 1:03d}" for i in range(n)]
    tids = [f"t{k + 1:03d}" for k in range(scenario.n_taxa)]
    true_cm = CountMatrix(sids, tids, true)
    c = np.where(x == 0, scenario.c1, scenario.c2)
    observed = apply_sampling_fraction(true_cm, c)
    cov = CovariateTable(sids, x[:, None], np.zeros((n, 0)), ["group"], [])
    return SimulatedStudy(true_cm, observed, cov, truth, effects_from_rates(truth.lam, truth.lam_star), scenario)


# --------------------------------------------------------------------------
# true effects


def truncated_poisson_log_mean(lam: float, rtol: float = 1e-10) -> float:
    """E[log Y | Y > 0] for Y ~ Poisson(lam), by direct series summation."""
    if lam <= 0:
        raise ValueError("Poisson mean must be positive")
    sd = math.sqrt(lam)
    # 40 sd plus a fixed margin leaves tail terms far below rtol
    lo = max(1, int(lam - 40 * sd))
    hi = int(lam + 40 * sd + 60)
    k = np.arange(lo, hi + 1)
    pmf = stats.poisson.pmf(k, lam)
    mass = pmf.sum()
    val = float((pmf * np.log(k)).sum() / mass)
    tail = stats.poisson.sf(hi, lam) + (stats.poisson.cdf(lo - 1, lam) - stats.poisson.pmf(0, lam) if lo > 1 else 0.0)
    if tail > rtol * mass:
        raise ArithmeticError(f"series truncation error too large for lam={lam}")
    return val


def effects_from_rates(lam, lam_star) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    lam_star = np.asarray(lam_star, dtype=float)
    out = np.zeros(lam.shape)
    for j in np.flatnonzero(lam_star > 0):
        out[j] = truncated_poisson_log_mean(lam[j] + lam_star[j]) - truncated_poisson_log_mean(lam[j])
    return out


def true_effects(study: SimulatedStudy) -> np.ndarray:
    """Per-taxon difference of E[log true abundance | present] between groups (X=1 minus X=0)."""
    return effects_from_rates(study.truth.lam, study.truth.lam_star)


def write_truth_csv(study: SimulatedStudy, path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["taxon_id", "is_differential", "true_effect", "abundance_class", "diff_class", "lambda", "lambda_star"])
        names = {-1: "none", 0: "low", 1: "medium", 2: "high"}
        for j, (t, d, e) in enumerate(study.truth_rows()):
            wr.writerow([t, d, repr(e), names[int(study.truth.abundance_class[j])],
                         names[int(study.truth.diff_class[j])], repr(float(study.truth.lam[j])),
                         repr(float(study.truth.lam_star[j]))])


__all__ = [
    "ZilnParams", "sample_ziln", "apply_sampling_fraction", "dispersion_envelope", "SimScenario",
    "SimulatedStudy", "TaxonTruth", "generate_benchmark", "true_effects", "truncated_poisson_log_mean",
    "benchmark_scenario", "CONFOUNDING", "draw_taxon_parameters", "write_truth_csv", "ScenarioError",
]
