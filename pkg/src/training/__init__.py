"""Optimizer and RNG plumbing; the tuning loop lives in `training.tune`."""

from training.adam import AdamState, adam_step
from training.seeding import RngStreams, seed_all

__all__ = ["AdamState", "RngStreams", "adam_step", "seed_all"]
