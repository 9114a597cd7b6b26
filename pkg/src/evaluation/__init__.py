"""Evaluation metrics. Protocols and the ablation grids live in
`evaluation.protocols` and `evaluation.ablation`."""

from evaluation.metrics import accuracy, classify, harmonic_mean

__all__ = ["accuracy", "classify", "harmonic_mean"]
