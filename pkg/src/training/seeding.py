"""Named, independent RNG streams derived from one seed."""

from dataclasses import dataclass

import numpy as np
import structlog

log = structlog.get_logger(__name__)

_STREAMS = {"shuffle": 0, "init": 1, "synth": 2, "sample": 3}


@dataclass
class RngStreams:
    seed: int
    shuffle: np.random.Generator
    init: np.random.Generator
    synth: np.random.Generator
    sample: np.random.Generator


def stream(seed: int, name: str) -> np.random.Generator:
    """The generator for one named substream of `seed`."""
    return np.random.default_rng([seed, _STREAMS[name]])


def seed_all(seed: int) -> RngStreams:
    """Separate generators for batch shuffling, parameter init, data synthesis
    and few-shot sampling.

    Each substream depends only on (seed, name), so drawing from one never
    shifts another.
    """
    log.debug("rng_seeded", seed=seed)
    return RngStreams(seed=seed, **{name: stream(seed, name) for name in _STREAMS})
