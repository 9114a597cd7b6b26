"""Token fusion: turn selected pretrained tokens plus the prompt segment into
the enhanced prompt segment."""

import math
from collections.abc import Mapping

import numpy as np

from autodiff import Tensor
from autodiff import functional as F
from errors import ConfigError, ContractError
from models import SepConfig


def _check_operands(op: str, selected: Tensor, prompt: Tensor) -> None:
    if selected.shape != prompt.shape:
        raise ContractError(
            f"{op}: selected tokens {selected.shape} and prompt segment "
            f"{prompt.shape} must have the same shape"
        )


def token_fusion(
    selected: Tensor,
    prompt: Tensor,
    heads: int = 1,
    projections: Mapping[str, Tensor] | None = None,
) -> tuple[Tensor, Tensor]:
    """Cross-attention with selected tokens as queries and values, prompt
    tokens as keys: `softmax(V̂ Pᵀ / √d_k) V̂` per batch element.

    Returns the fused segment `[k, N, d]` and the attention `[N, heads, k, k]`.
    """
    _check_operands("token_fusion", selected, prompt)
    k, batch, d = selected.shape
    if d % heads:
        raise ConfigError(
            f"tfm_heads={heads} does not divide width {d}", ["sep.tfm_heads"]
        )
    head_dim = d // heads

    query = F.transpose(selected, (1, 0, 2))  # [N, k, d]
    key = F.transpose(prompt, (1, 0, 2))
    value = query
    if projections:
        query = F.matmul(query, projections["w_q"])
        key = F.matmul(key, projections["w_k"])
        value = F.matmul(value, projections["w_v"])

    def split(x: Tensor) -> Tensor:
        return F.transpose(F.reshape(x, (batch, k, heads, head_dim)), (0, 2, 1, 3))

    scores = F.matmul(split(query), F.transpose(split(key), (0, 1, 3, 2)))
    attention = F.softmax_rows(F.scale(scores, 1.0 / math.sqrt(head_dim)))
    fused = F.matmul(attention, split(value))  # [N, H, k, hd]
    fused = F.reshape(F.transpose(fused, (0, 2, 1, 3)), (batch, k, d))
    return F.transpose(fused, (1, 0, 2)), attention


def _learnable(array: np.ndarray) -> Tensor:
    return Tensor(array, requires_grad=True)


class TokenFusion:
    """Parameter-free cross-attention unless `learned_projections` is set;
    projections start at the identity."""

    name = "tfm"

    def __init__(self, config: SepConfig):
        self.heads = config.tfm_heads
        self.learned_projections = config.learned_projections

    def init_params(self, d_model: int, rng: np.random.Generator) -> dict[str, Tensor]:
        if not self.learned_projections:
            return {}
        return {name: _learnable(np.eye(d_model)) for name in ("w_q", "w_k", "w_v")}

    def fuse(
        self, selected: Tensor, prompt: Tensor, params: Mapping[str, Tensor]
    ) -> Tensor:
        fused, _ = token_fusion(selected, prompt, self.heads, params or None)
        return fused


class AddFusion:
    name = "add"

    def __init__(self, config: SepConfig):
        pass

    def init_params(self, d_model: int, rng: np.random.Generator) -> dict[str, Tensor]:
        return {}

    def fuse(
        self, selected: Tensor, prompt: Tensor, params: Mapping[str, Tensor]
    ) -> Tensor:
        _check_operands("add fusion", selected, prompt)
        return F.add(selected, prompt)


class MlpFusion:
    """Two affine layers with GELU over `[selected ; prompt]` along features."""

    name = "mlp"

    def __init__(self, config: SepConfig):
        pass

    def init_params(self, d_model: int, rng: np.random.Generator) -> dict[str, Tensor]:
        return {
            "w_1": _learnable(rng.normal(0.0, 0.02, (2 * d_model, d_model))),
            "b_1": _learnable(np.zeros(d_model)),
            "w_2": _learnable(rng.normal(0.0, 0.02, (d_model, d_model))),
            "b_2": _learnable(np.zeros(d_model)),
        }

    def fuse(
        self, selected: Tensor, prompt: Tensor, params: Mapping[str, Tensor]
    ) -> Tensor:
        _check_operands("mlp fusion", selected, prompt)
        joined = F.concat([selected, prompt], axis=-1)
        hidden = F.gelu(F.linear(joined, params["w_1"], params["b_1"]))
        return F.linear(hidden, params["w_2"], params["b_2"])
