"""Named, independent random substreams derived from one master seed."""
from __future__ import annotations

import numpy as np

# Fixed registry: stream name -> spawn index. Order is part of the on-disk
# reproducibility contract, so never reorder or reuse indices.
STREAMS = {
    "trajectory": 0,
    "subproblem": 1,
    "q": 2,
    "evaluation": 3,
    "bounds": 4,
}


def substream(seed: int, name: str) -> np.random.Generator:
    """One independent generator for `name`, derived from the master seed."""
    if name not in STREAMS:
        raise KeyError(f"unknown stream {name!r}; known: {sorted(STREAMS)}")
    ss = np.random.SeedSequence(seed, spawn_key=(STREAMS[name],))
    return np.random.default_rng(ss)


def substreams(seed: int) -> dict[str, np.random.Generator]:
    """All named substreams for one run."""
    return {name: substream(seed, name) for name in STREAMS}
