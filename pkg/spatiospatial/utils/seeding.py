import numpy as np


def make_rng(seed_or_rng):
    """
    Accept an int seed, a SeedSequence or an existing Generator.
    """
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def derive_rng(*keys):
    """
    Independent generator for a tuple of non-negative integer keys.

    Used for per-sample augmentation seeds (run seed, epoch, sample index) and
    per-fold seeds, so results never depend on iteration or worker order.
    """
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def child_rng(rng):
    """Draw a seed from ``rng`` and return a fresh generator built from it."""
    return np.random.default_rng(int(rng.integers(0, 2**63 - 1)))


# stream tags keep the per-purpose key tuples disjoint
AUGMENT_STREAM = 1
SHUFFLE_STREAM = 2
