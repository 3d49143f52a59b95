# -*- coding: utf-8 -*-
import numpy as np

# Stream indices of the experiment-level seed.
SPLIT = 0
AUGMENT = 1
DISCRIMINATOR = 2
LIME = 3
MODEL_INIT = 4
SYNTH = 5
ATTACK = 6
COUNTERFACTUAL = 7


def derive_seed(seed: int, *stream: int) -> int:
    """
    Child seed of `seed` for a stable stream index path.

    `derive_seed(s, LIME, i)` always yields the same 64-bit value, and
    distinct paths give independent generators.
    """
    sequence = np.random.SeedSequence([int(seed), *[int(s) for s in stream]])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])
