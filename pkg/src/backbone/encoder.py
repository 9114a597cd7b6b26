"""Token sequences and the pre-norm transformer tower."""

import math
from dataclasses import dataclass, replace

import numpy as np

from autodiff import Tensor
from autodiff import functional as F
from backbone.params import EncoderLayerParams, TowerParams
from errors import ContractError, DimensionError

_MASKED = -1e9


@dataclass(frozen=True)
class TokenSequence:
    """Tokens `[L, N, d]` split into a pretrained and a prompt segment.

    Positions `[prompt_start, prompt_start + prompt_length)` hold prompt
    tokens; every other position belongs to the pretrained segment.
    `pool_index` is the position read out as the sequence embedding.
    """

    tokens: Tensor
    prompt_start: int
    prompt_length: int = 0
    pool_index: int = 0

    def __post_init__(self):
        if self.tokens.ndim != 3:
            raise DimensionError("TokenSequence", self.tokens.shape)
        end = self.prompt_start + self.prompt_length
        if not 0 <= self.prompt_start <= end <= self.length:
            raise ContractError(
                f"prompt span [{self.prompt_start}, {end})"
                f" does not fit a sequence of length {self.length}"
            )

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def batch(self) -> int:
        return self.tokens.shape[1]

    @property
    def width(self) -> int:
        return self.tokens.shape[2]

    @property
    def boundary(self) -> int:
        """End of the pretrained prefix."""
        return self.prompt_start

    def with_tokens(self, tokens: Tensor) -> "TokenSequence":
        return replace(self, tokens=tokens)


def causal_mask(length: int) -> np.ndarray:
    """Additive mask hiding later positions from earlier ones."""
    return np.triu(np.full((length, length), _MASKED), k=1)


def self_attention(
    h: Tensor, layer: EncoderLayerParams, n_heads: int, causal: bool
) -> Tensor:
    """Multi-head self-attention over `h` of shape `[L, N, d]`."""
    length, batch, d = h.shape
    head_dim = d // n_heads

    x = F.transpose(h, (1, 0, 2))  # [N, L, d]

    def heads(w: Tensor, b: Tensor) -> Tensor:
        projected = F.reshape(F.linear(x, w, b), (batch, length, n_heads, head_dim))
        return F.transpose(projected, (0, 2, 1, 3))  # [N, H, L, hd]

    q = heads(layer.w_q, layer.b_q)
    k = heads(layer.w_k, layer.b_k)
    v = heads(layer.w_v, layer.b_v)

    scores = F.matmul(q, F.transpose(k, (0, 1, 3, 2)))
    scores = F.scale(scores, 1.0 / math.sqrt(head_dim))
    if causal:
        scores = F.add(scores, Tensor(causal_mask(length)))
    attended = F.matmul(F.softmax_rows(scores), v)  # [N, H, L, hd]

    merged = F.reshape(F.transpose(attended, (0, 2, 1, 3)), (batch, length, d))
    return F.transpose(F.linear(merged, layer.w_o, layer.b_o), (1, 0, 2))


def encoder_layer_forward(
    layer: EncoderLayerParams,
    seq: TokenSequence,
    causal: bool,
    n_heads: int,
    eps: float = 1e-5,
) -> TokenSequence:
    d = layer.w_q.shape[0]
    if seq.width != d:
        raise DimensionError("encoder_layer_forward", seq.tokens.shape, layer.w_q.shape)

    x = seq.tokens
    h = F.layer_norm(x, layer.ln_1.gain, layer.ln_1.bias, eps)
    x = F.add(x, self_attention(h, layer, n_heads, causal))
    h = F.layer_norm(x, layer.ln_2.gain, layer.ln_2.bias, eps)
    hidden = F.gelu(F.linear(h, layer.w_fc, layer.b_fc))
    x = F.add(x, F.linear(hidden, layer.w_proj, layer.b_proj))
    return seq.with_tokens(x)


@dataclass(frozen=True)
class Encoder:
    """One tower of the dual encoder: stacked layers plus the pooling head."""

    params: TowerParams
    causal: bool
    n_heads: int
    eps: float = 1e-5

    @property
    def depth(self) -> int:
        return len(self.params.layers)

    def layer(self, index: int, seq: TokenSequence) -> TokenSequence:
        """Apply layer `index` (1-based, as θ_1 … θ_n)."""
        if not 1 <= index <= self.depth:
            raise ContractError(f"layer {index} outside 1..{self.depth}")
        return encoder_layer_forward(
            self.params.layers[index - 1], seq, self.causal, self.n_heads, self.eps
        )

    def forward(self, seq: TokenSequence) -> TokenSequence:
        for index in range(1, self.depth + 1):
            seq = self.layer(index, seq)
        return seq

    def pool(self, seq: TokenSequence) -> Tensor:
        """Pooled position, layer norm, projection: unit rows `[N, d_joint]`."""
        token = F.slice_axis(seq.tokens, 0, seq.pool_index, seq.pool_index + 1)
        token = F.reshape(token, (seq.batch, seq.width))
        ln = self.params.ln_post
        normed = F.layer_norm(token, ln.gain, ln.bias, self.eps)
        return F.l2_normalize(F.matmul(normed, self.params.proj), axis=-1)
