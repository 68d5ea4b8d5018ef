"""Two-phase identification and estimation of covariate associations with
microbial absolute abundance from sequencing counts.

Phase 1 cycles through random reference taxa, scores each taxon by how often
its log-ratio regressions select a tested covariate, and splits taxa into an
associated set A and an independent set B with a permutation threshold.
Phase 2 estimates the associations of set-A taxa against one set-B reference
with bootstrap confidence intervals.
"""

__version__ = "0.1.0"

from .data import (  # noqa: E402
    AnalysisConfig,
    CountMatrix,
    CovariateTable,
    DataError,
    ValidatedDataset,
    load_count_table,
    load_covariates,
    validate_dataset,
)
from .phase1 import PhaseOneResult, expected_counts, run_phase_one  # noqa: E402
from .phase2 import (  # noqa: E402
    AssociationEstimates,
    ReferenceCriteria,
    averaged_estimates,
    choose_reference,
    estimate_associations,
)
from .sim import SimScenario, generate_benchmark, benchmark_scenario  # noqa: E402


def analyze(dataset: ValidatedDataset, config: AnalysisConfig | None = None, criteria=None):
    """Both phases with default choices; returns ``(PhaseOneResult, AssociationEstimates)``."""
    from .seeding import ESTIMATION, derive_rng

    config = config or AnalysisConfig()
    res = run_phase_one(dataset, config)
    ref = choose_reference(dataset, res, criteria)
    return res, estimate_associations(dataset, res, ref, config, derive_rng(config.master_seed, ESTIMATION))


__all__ = [
    "AnalysisConfig", "CountMatrix", "CovariateTable", "DataError", "ValidatedDataset", "load_count_table",
    "load_covariates", "validate_dataset", "PhaseOneResult", "expected_counts", "run_phase_one",
    "AssociationEstimates", "ReferenceCriteria", "averaged_estimates", "choose_reference",
    "estimate_associations", "SimScenario", "generate_benchmark", "benchmark_scenario", "analyze",
]
