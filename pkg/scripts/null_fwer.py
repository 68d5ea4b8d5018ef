#!/usr/bin/env python3
"""Family-wise error of Phase 1 on null data (no differential taxa).

For each confounding scenario, counts how often set A is nonempty over
independent null datasets, both for the rounded counts floor(C * Y) and for
the real-valued C * Y before rounding.

    python scripts/null_fwer.py --datasets 50 --scenarios 1,5
"""

import argparse
import logging
import os
import time

import numpy as np

from ifaa.data import AnalysisConfig, CountMatrix, validate_dataset
from ifaa.phase1 import run_phase_one
from ifaa.seeding import derive_rng
from ifaa.sim import generate_benchmark, benchmark_scenario


def null_rate(k, n_data, taxa, subjects, alpha, refs, perms, rounded, threads):
    hits, sizes = 0, []
    for s in range(n_data):
        sc = benchmark_scenario(k, n_subjects=subjects, n_taxa=taxa, frac_differential=0.0, seed=s)
        study = generate_benchmark(sc, derive_rng(7, s))
        obs = study.observed_counts
        if not rounded:
            c = np.where(study.covariates.x[:, 0] == 0, sc.c1, sc.c2)
            t = study.true_counts
            obs = CountMatrix(t.sample_ids, t.taxon_ids, t.counts * c[:, None])
        ds = validate_dataset(obs, study.covariates)
        cfg = AnalysisConfig(alpha=alpha, r_refs=refs, n_perms=perms, master_seed=s, threads=threads)
        res = run_phase_one(ds, cfg, allow_empty_b=True)
        hits += bool(res.set_a)
        sizes.append(len(res.set_a))
    return hits / n_data, float(np.mean(sizes))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--datasets", type=int, default=50)
    ap.add_argument("--scenarios", default="1,5")
    ap.add_argument("--taxa", type=int, default=100)
    ap.add_argument("--subjects", type=int, default=50)
    ap.add_argument("--alpha", type=float, default=0.2)
    ap.add_argument("--refs", type=int, default=40)
    ap.add_argument("--perms", type=int, default=40)
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    print(f"{'scenario':>8s} {'counts':>8s} {'FWER':>6s} {'mean |A|':>9s}")
    for k in (int(v) for v in args.scenarios.split(",")):
        for rounded in (True, False):
            t0 = time.perf_counter()
            rate, size = null_rate(k, args.datasets, args.taxa, args.subjects, args.alpha, args.refs, args.perms,
                                   rounded, args.threads)
            kind = "rounded" if rounded else "real"
            print(f"{k:8d} {kind:>8s} {rate:6.2f} {size:9.2f}   ({time.perf_counter() - t0:.0f}s)")


if __name__ == "__main__":
    main()
