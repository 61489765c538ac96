"""Counter-based random streams keyed by integer tuples."""

import numpy as np


def _seed_sequence(seed, keys):
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))


def make_rng(seed, *keys):
    """Return a Philox generator for the stream identified by ``(seed, *keys)``.

    Streams with different key tuples are statistically independent, and the
    same tuple always reproduces the same draws.
    """
    return np.random.Generator(np.random.Philox(_seed_sequence(seed, keys)))


def derive_seed(seed, *keys):
    """Derive a 63-bit integer seed for the stream ``(seed, *keys)``."""
    state = _seed_sequence(seed, keys).generate_state(2, dtype=np.uint64)
    return int(state[0] >> np.uint64(1))
