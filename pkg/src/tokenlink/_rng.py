"""Named random substreams derived from one root seed."""

import numpy as np

_STREAMS = {
    "sampler": 1,
    "negatives": 2,
    "init": 3,
    "shuffle": 4,
    "split": 5,
    "eval": 6,
    "check": 7,
    "bench": 8,
}


def substream(seed, name, *extra):
    """Return an independent generator for ``name`` under ``seed``.

    ``extra`` integers (e.g. an epoch or query index) further key the stream.
    """
    key = [int(seed), _STREAMS[name], *(int(x) for x in extra)]
    return np.random.default_rng(np.random.SeedSequence(key))


def pair_stream(seed, u, v):
    """Generator keyed by a scored pair, so the same pair always sees the same draws."""
    return substream(seed, "eval", u, v)
