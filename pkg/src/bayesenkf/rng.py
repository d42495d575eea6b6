"""Counter-based random substreams.

Every random draw in a filter run comes from a stream keyed by
``(seed, t, purpose)``, so results do not depend on evaluation order and a
run resumed from a checkpoint at time ``t`` reproduces the original draws.
"""
import numpy as np

PURPOSES = {
    "init_state": 0,
    "init_param": 1,
    "param_draw": 2,
    "evo_noise": 3,
    "obs_perturb": 4,
    "optimizer": 5,
    "resample": 6,
    "kernel": 7,
    "simulate": 8,
    "replicate": 9,
}


def substream(seed, t, purpose):
    """Return a Philox generator for the given (seed, time, purpose) key."""
    if purpose not in PURPOSES:
        raise KeyError(f"unknown RNG purpose {purpose!r}")
    if seed < 0 or t < 0:
        raise ValueError("seed and t must be non-negative")
    key = np.random.SeedSequence([int(seed), int(t), PURPOSES[purpose]])
    return np.random.Generator(np.random.Philox(key))
