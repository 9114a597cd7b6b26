"""Zero-shot decision rule and the headline metrics."""

from collections.abc import Sequence

import numpy as np


def classify(embeddings: np.ndarray, classifier: np.ndarray) -> np.ndarray:
    """Row index of the most similar classifier row; ties go to the lower index."""
    scores = np.asarray(embeddings) @ np.asarray(classifier).T
    return np.argmax(scores, axis=1)


def accuracy(
    predicted: Sequence[int] | np.ndarray, labels: Sequence[int] | np.ndarray
) -> float:
    """Percentage of matches, 0 for an empty set."""
    predicted, labels = np.asarray(predicted), np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float(100.0 * np.mean(predicted == labels))


def harmonic_mean(base: float, new: float) -> float:
    """2·base·new / (base + new), with 0/0 taken as 0."""
    total = base + new
    if total == 0:
        return 0.0
    return 2.0 * base * new / total
