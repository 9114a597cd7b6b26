"""Loss terms of the prompt-tuning objective.

All similarities are cosine similarities of unit rows divided by a
temperature; consistency terms are squared L2 distances averaged per class
(text) or per sample (vision).
"""

from collections.abc import Sequence
from dataclasses import dataclass, fields

import numpy as np

from autodiff import Tensor
from autodiff import functional as F
from errors import ContractError, DimensionError, NumericError, TrainingDivergedError
from models import LossReport, LossWeights


def cross_entropy(logits: Tensor, labels: Sequence[int] | np.ndarray) -> Tensor:
    """Mean negative log-likelihood of `labels` under row-wise softmax."""
    labels = np.asarray(labels, dtype=np.intp)
    n, n_classes = logits.shape
    if labels.shape != (n,):
        raise DimensionError("cross_entropy", logits.shape, labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ContractError(
            f"label out of range for {n_classes} classes: {labels.tolist()}"
        )
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0
    picked = F.sum(F.mul(F.log_softmax_rows(logits), Tensor(onehot)))
    return F.scale(picked, -1.0 / n)


def similarity_logits(embeddings: Tensor, classifier: Tensor, tau: float) -> Tensor:
    if (
        embeddings.ndim != 2
        or classifier.ndim != 2
        or embeddings.shape[1] != classifier.shape[1]
    ):
        raise DimensionError("similarity_logits", embeddings.shape, classifier.shape)
    return F.scale(F.matmul(embeddings, F.transpose(classifier, (1, 0))), 1.0 / tau)


def contrastive_ce(
    embeddings: Tensor,
    classifier: Tensor,
    labels: Sequence[int] | np.ndarray,
    tau: float,
) -> Tensor:
    """Cross-entropy of cosine-similarity logits `f̂ Wᵀ / τ`."""
    return cross_entropy(similarity_logits(embeddings, classifier, tau), labels)


def kg_text(w_clip: Tensor, w_sep: Tensor) -> Tensor:
    """‖W^clip − W^sep‖² summed over entries, divided by the class count."""
    if w_clip.shape != w_sep.shape:
        raise DimensionError("kg_text", w_clip.shape, w_sep.shape)
    return F.scale(F.sum(F.square(F.sub(w_clip, w_sep))), 1.0 / w_clip.shape[0])


def kg_visual(f_hat: Tensor, f: Tensor) -> Tensor:
    """Per-sample mean of ‖f̂_b − f_b‖²."""
    if f_hat.shape != f.shape:
        raise DimensionError("kg_visual", f_hat.shape, f.shape)
    return F.scale(F.sum(F.square(F.sub(f_hat, f))), 1.0 / f.shape[0])


def ce_visual(
    f_hat: Tensor, w_clip: Tensor, labels: Sequence[int] | np.ndarray, tau: float
) -> Tensor:
    """Cross-entropy of the enhanced image embedding against the frozen classifier."""
    return contrastive_ce(f_hat, w_clip, labels, tau)


@dataclass
class LossParts:
    ce: Tensor
    kg_text: Tensor
    kg_visual: Tensor
    ce_visual: Tensor


def total_loss(
    parts: LossParts, weights: LossWeights, step: int | None = None
) -> tuple[Tensor, LossReport]:
    """ce + ω_t·kg_text + ω_v·kg_visual + ce_visual.

    Raises:
        NumericError: If a term is NaN (`TrainingDivergedError` when `step`
            is given).
    """
    values = {}
    for f in fields(parts):
        value = getattr(parts, f.name).item()
        if np.isnan(value):
            if step is not None:
                raise TrainingDivergedError(step, term=f.name)
            raise NumericError(f"loss term '{f.name}' is NaN")
        values[f.name] = value

    total = F.add(
        F.add(parts.ce, F.scale(parts.kg_text, weights.omega_t)),
        F.add(F.scale(parts.kg_visual, weights.omega_v), parts.ce_visual),
    )
    return total, LossReport(**values, total=total.item())
