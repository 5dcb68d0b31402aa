"""Deterministic random streams.

Every random draw in the package comes from a counter-seeded Philox
generator keyed by (run seed, purpose) with a (c0, c1) block counter, so
any (seed, epoch, batch) triple maps to the same bits on every platform
and independent consumers never share a stream.
"""

import numpy as np

STREAM_INIT = 1  # parameter initialization
STREAM_SHUFFLE = 2  # per-epoch training-set permutation, c0 = epoch
STREAM_ENCODE = 3  # training-batch Bernoulli coding, c0 = epoch, c1 = batch
STREAM_EVAL_ENCODE = 4  # test-set coding, c1 = batch (fixed across epochs)
STREAM_BLOBS = 5  # synthetic dataset noise
STREAM_MICRO = 900  # gradcheck micro fixtures


def philox(seed: int, purpose: int, c0: int = 0, c1: int = 0) -> np.random.Generator:
    bits = np.random.Philox(
        key=[seed & 0xFFFFFFFFFFFFFFFF, purpose], counter=[c0, c1, 0, 0]
    )
    return np.random.Generator(bits)
