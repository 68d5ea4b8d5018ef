"""Deterministic per-task random streams.

Every random draw in the pipeline comes from a generator built by
:func:`derive_rng` from the master seed plus a tuple of integer keys.  The
keys name the task (stream id, then counters such as replicate, permutation
or bootstrap index), so results never depend on execution order or on how
many workers ran the tasks.
"""

from __future__ import annotations

import numpy as np

# stream ids (first spawn key)
REFERENCE_SET = 1
PERMUTATION = 2
BOOTSTRAP = 3
CV_FOLDS = 4
REPLICATE = 5
SCENARIO_PARAMS = 6
ESTIMATION = 7


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


def child_seed(rng: np.random.Generator) -> int:
    """Draw a 63-bit seed from ``rng`` for handing to a sub-task."""
    return int(rng.integers(0, 2**63 - 1))
