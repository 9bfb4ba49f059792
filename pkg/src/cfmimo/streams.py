"""Deterministic RNG streams keyed by integer tuples.

Every random quantity in the package draws from a stream keyed by
(seed, purpose, indices...), so results are independent of evaluation order
and reproducible across processes.
"""

import numpy as np

# purpose tags
TAG_CHANNEL = 1    # shadow-fading realizations during training
TAG_SAMPLE = 2     # Bernoulli activation draws
TAG_SHUFFLE = 3    # per-epoch drop order
TAG_TEST = 4       # test-drop gain realizations
TAG_APS = 5        # AP placement
TAG_TRAIN_UES = 6  # training UE drops
TAG_TEST_UES = 7   # test UE drops
TAG_INIT = 8       # parameter initialization
TAG_MASTER = 9     # per-master streams in the distributed variant


def stream(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(tuple(int(k) for k in key)))
