import numpy as np

SEED_MASK = (1 << 64) - 1


def task_rng(seed, index):
    """Counter-based generator keyed by (seed, task index)"""
    key = (int(seed) & SEED_MASK) | (int(index) << 64)
    return np.random.Generator(np.random.Philox(key=key))
