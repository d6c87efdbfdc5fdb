"""Counter-based random streams.

Every random quantity in the package is drawn from a Philox generator keyed
by ``(seed, stream, index)``.  A draw therefore depends only on where it sits,
never on how many workers produced it or in which order.
"""

import numpy as np

SEED_MASK = (1 << 64) - 1

# stream identifiers; never renumber, outputs depend on them
SK = 1
EA = 2
HOPFIELD = 3
FIELD_FACTORIZED = 10
FIELD_CONSTRUCTIVE = 11
PROPOSAL_STARTS = 12
BOOTSTRAP = 13
PROPOSAL_DRAWS = 14
PSPIN_TENSOR = 20
PSPIN_AUX = 21
PSPIN_PROPOSAL = 22
PSPIN_STARTS = 23

# samples per RNG block; part of the reproducibility contract
BLOCK_SIZE = 8192


def generator(seed, stream, index=0):
    """Independent generator for position ``index`` of ``stream``."""
    ss = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=(stream, int(index)))
    return np.random.Generator(np.random.Philox(ss))


def blocks(count, block_size=BLOCK_SIZE):
    """Split ``count`` samples into ``(block_index, start, size)`` triples."""
    out = []
    for b, start in enumerate(range(0, count, block_size)):
        out.append((b, start, min(block_size, count - start)))
    return out


def fresh_seed():
    """A random 63-bit seed, used when the caller did not supply one."""
    return int(np.random.SeedSequence().generate_state(1, np.uint64)[0] >> np.uint64(1))
