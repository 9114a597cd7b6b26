"""Synthetic benchmark generation and split protocols."""

from synth.dataset import (
    SyntheticDataset,
    domain_shift_variant,
    file_checksum,
    generate_dataset,
    load_dataset,
    merge_datasets,
    save_dataset,
)
from synth.splits import base_new_split, few_shot_sample

__all__ = [
    "SyntheticDataset",
    "base_new_split",
    "domain_shift_variant",
    "few_shot_sample",
    "file_checksum",
    "generate_dataset",
    "load_dataset",
    "merge_datasets",
    "save_dataset",
]
