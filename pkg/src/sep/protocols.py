"""Protocol definitions for token selection and token fusion.

External packages can implement these protocols and register them under the
`seplab.selections` and `seplab.fusions` entry-point groups.
"""

from __future__ import annotations

from collections.abc import Mapping
from typing import TYPE_CHECKING, Protocol

if TYPE_CHECKING:
    import numpy as np

    from autodiff import Tensor
    from models import SepConfig


class SelectionStrategy(Protocol):
    """Picks representative pretrained tokens at an insertion layer."""

    name: str

    def select(self, pretrained: Tensor, k: int) -> tuple[Tensor, np.ndarray]:
        """Choose `k` tokens per batch element.

        Args:
            pretrained: The pretrained segment, `[L, N, d]`.
            k: How many tokens to keep; equals the prompt length.

        Returns:
            The selected tokens `[k, N, d]` and their positions `[k, N]`.
        """
        ...


class FusionStrategy(Protocol):
    """Merges selected pretrained tokens into the prompt segment."""

    name: str

    def __init__(self, config: SepConfig) -> None: ...

    def init_params(self, d_model: int, rng: np.random.Generator) -> dict[str, Tensor]:
        """Learnable parameters for one insertion layer (empty if none)."""
        ...

    def fuse(
        self, selected: Tensor, prompt: Tensor, params: Mapping[str, Tensor]
    ) -> Tensor:
        """Return the new prompt segment.

        Args:
            selected: Selected pretrained tokens, `[k, N, d]`.
            prompt: The current prompt segment, `[k, N, d]`.
            params: This layer's parameters from `init_params`.

        Returns:
            The enhanced prompt segment, `[k, N, d]`.
        """
        ...
