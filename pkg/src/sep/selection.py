"""Representative-token selection.

Rankings are index choices only: gradients flow through the gathered token
values, never through the ordering.
"""

import numpy as np

from autodiff import Tensor
from autodiff import functional as F
from errors import ConfigError


def activation_scores(pretrained: Tensor) -> Tensor:
    """Mean squared feature value per token: `[L, N, d]` → `[L, N]`."""
    return F.mean_over_axis(F.square(pretrained), axis=-1)


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Per column, the `k` highest rows in descending order; ties go to the
    lower index."""
    return np.argsort(-np.asarray(scores), axis=0, kind="stable")[:k]


def _check_k(pretrained: Tensor, k: int) -> None:
    if not 1 <= k <= pretrained.shape[0]:
        raise ConfigError(
            f"cannot select {k} tokens from a segment of {pretrained.shape[0]}",
            field_paths=["sep.visual_prompt_length", "sep.text_prompt_length"],
        )


class ActivationSelection:
    name = "activation"

    def select(self, pretrained: Tensor, k: int) -> tuple[Tensor, np.ndarray]:
        _check_k(pretrained, k)
        index = top_k_indices(activation_scores(pretrained).data, k)
        return F.gather_tokens(pretrained, index), index


class FrontSelection:
    name = "front"

    def select(self, pretrained: Tensor, k: int) -> tuple[Tensor, np.ndarray]:
        _check_k(pretrained, k)
        index = np.broadcast_to(np.arange(k)[:, None], (k, pretrained.shape[1]))
        return F.slice_axis(pretrained, 0, 0, k), index
