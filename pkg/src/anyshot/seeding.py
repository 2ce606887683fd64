"""Named random substreams derived from one user-facing seed.

Each pipeline stage draws from its own stream, so changing (say) how many
evaluation samples are drawn cannot perturb training randomness.
"""

import numpy as np

STREAM_NAMES = ("data", "init", "training", "eval")


def seed_streams(seed):
    """Independent generators for each named stage, all derived from ``seed``."""
    children = np.random.SeedSequence(int(seed)).spawn(len(STREAM_NAMES))
    return {name: np.random.default_rng(seq) for name, seq in zip(STREAM_NAMES, children)}


def stream(seed, name):
    if name not in STREAM_NAMES:
        raise ValueError(f"unknown stream {name!r}, expected one of {STREAM_NAMES}")
    return seed_streams(seed)[name]
