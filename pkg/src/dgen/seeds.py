"""Root-seed stream splitting.

All randomness in the harness flows from one root seed through
`np.random.SeedSequence([root, *path])`.  The documented stream layout:

    (root, STREAM_INIT)                  model parameter initialization
    (root, STREAM_TRAIN, step)           one stream per optimization step
                                         (batch draw, timestep draw, noise)
    (root, STREAM_EVAL, sample, task)    sampler noise during evaluation
    (root, STREAM_SAMPLE)                the `sample` CLI command
    (root, STREAM_DATA, split, index)    synthetic scene generation

Deriving per-step / per-sample streams (instead of one long stream)
makes training resumable and evaluation order-independent: the stream
position is a pure function of (root seed, step index).
"""

import numpy as np

STREAM_INIT = 0
STREAM_TRAIN = 1
STREAM_EVAL = 2
STREAM_SAMPLE = 3
STREAM_DATA = 4


def stream_rng(root_seed: int, *path: int) -> np.random.Generator:
    """Generator for the stream addressed by (root_seed, *path)."""
    return np.random.default_rng(np.random.SeedSequence([int(root_seed), *map(int, path)]))
