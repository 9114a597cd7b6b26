"""The miniature dual encoder standing in for CLIP."""

from collections.abc import Sequence

import numpy as np
import structlog

from autodiff import Tensor
from autodiff import functional as F
from backbone import vocab
from backbone.encoder import Encoder, TokenSequence
from backbone.params import BackboneParams
from errors import ConfigError, ContractError

log = structlog.get_logger(__name__)


class MiniClip:
    """Image and text towers over a shared joint space.

    The visual tower attends fully and pools the class token; the text tower
    is causal and pools the end-of-text token.
    """

    def __init__(self, params: BackboneParams):
        self.params = params
        self.config = params.config
        heads, eps = self.config.n_heads, self.config.ln_eps
        self.visual = Encoder(params.visual, causal=False, n_heads=heads, eps=eps)
        self.text = Encoder(params.text, causal=True, n_heads=heads, eps=eps)

    @property
    def frozen(self) -> bool:
        return self.params.frozen

    def embed_image(self, patches: np.ndarray) -> TokenSequence:
        """Patch features `[N, n_patches, patch_dim]` → `L_e` tokens per image."""
        patches = np.asarray(patches, dtype=np.float64)
        expected = (self.config.n_patches, self.config.patch_dim)
        if patches.ndim != 3 or patches.shape[1:] != expected:
            raise ConfigError(
                f"patch features of shape {patches.shape[1:]} do not match "
                f"the backbone's (n_patches, patch_dim)={expected}",
                field_paths=["backbone.n_patches", "backbone.patch_dim"],
            )
        batch, d = patches.shape[0], self.config.d_model

        x = F.matmul(Tensor(patches), self.params.patch_embedding)  # [N, P, d]
        x = F.transpose(x, (1, 0, 2))
        cls = F.reshape(self.params.class_embedding, (1, 1, d))
        cls = F.broadcast_to(cls, (1, batch, d))
        tokens = F.concat([cls, x], axis=0)
        n_tokens = self.config.visual_tokens
        positions = F.reshape(self.params.visual_positions, (n_tokens, 1, d))
        tokens = F.add(tokens, positions)
        return TokenSequence(tokens, prompt_start=n_tokens, pool_index=0)

    def embed_text(
        self, class_ids: Sequence[int], template: Sequence[int] = vocab.FROZEN_TEMPLATE
    ) -> TokenSequence:
        """Token embeddings `[text_len, N_c, d]`, one column per class.

        Placeholder positions of a learnable template form the prompt span;
        they get no positional embedding.
        """
        ids = vocab.render(
            template, class_ids, self.config.text_len, self.config.vocab_size
        )
        tokens = F.embedding(self.params.token_embedding, ids)

        placeholders = [i for i, token in enumerate(template) if token == vocab.X]
        prompt_start = placeholders[0] if placeholders else len(template)
        if placeholders != list(range(prompt_start, prompt_start + len(placeholders))):
            raise ConfigError("prompt placeholders in a template must be contiguous")

        keep = np.ones((self.config.text_len, 1, 1))
        keep[prompt_start : prompt_start + len(placeholders)] = 0.0
        positions = F.reshape(
            self.params.text_positions, (self.config.text_len, 1, self.config.d_model)
        )
        tokens = F.add(tokens, F.mul(positions, Tensor(keep)))
        return TokenSequence(
            tokens,
            prompt_start=prompt_start,
            prompt_length=len(placeholders),
            pool_index=list(template).index(vocab.EOS),
        )

    def encode_image(self, patches: np.ndarray) -> Tensor:
        return self.visual.pool(self.visual.forward(self.embed_image(patches)))

    def encode_text(
        self, class_ids: Sequence[int], template: Sequence[int] = vocab.FROZEN_TEMPLATE
    ) -> Tensor:
        return self.text.pool(self.text.forward(self.embed_text(class_ids, template)))

    def encode_frozen_text(self, class_ids: Sequence[int]) -> Tensor:
        """W^clip: hand-crafted template through the frozen text tower."""
        self._require_frozen()
        if len(class_ids) == 0:
            raise ContractError("encode_frozen_text needs at least one class")
        return self.encode_text(class_ids, vocab.FROZEN_TEMPLATE)

    def encode_frozen_image(self, patches: np.ndarray) -> Tensor:
        """f: class-token embedding of the frozen visual tower."""
        self._require_frozen()
        return self.encode_image(patches)

    def _require_frozen(self) -> None:
        if not self.frozen:
            raise ContractError(
                "frozen encodings need a frozen backbone; call freeze() first"
            )
