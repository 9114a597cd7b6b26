"""Layer recurrences over a prompted token sequence.

Layer 1 consumes `[E, P]`. With enhanced prompting, after each insertion
layer `l` the prompt segment is replaced by the fusion of representative
pretrained tokens into it before layer `l + 1` runs. With per-layer (deep)
prompting the prompt segment is discarded and replaced by a fresh learnable
prompt before every layer.
"""

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from autodiff import Tensor
from backbone.encoder import Encoder, TokenSequence
from errors import ConfigError
from sep.prompts import merge_tokens, place_prompt, split_tokens
from sep.protocols import FusionStrategy, SelectionStrategy


@dataclass
class LayerTrace:
    layer: int
    output: TokenSequence
    selected: np.ndarray | None = None  # positions chosen after this layer


@dataclass
class ForwardResult:
    embedding: Tensor
    trace: list[LayerTrace] = field(default_factory=list)


def plain_forward(encoder: Encoder, seq: TokenSequence) -> Tensor:
    """All layers, no fusion: the pooled, projected, unit-normalised embedding."""
    return encoder.pool(encoder.forward(seq))


def enhanced_forward(
    encoder: Encoder,
    seq: TokenSequence,
    selection: SelectionStrategy,
    fusion: FusionStrategy,
    insertion_layers: Iterable[int],
    fusion_params: Mapping[int, Mapping[str, Tensor]] | None = None,
    keep_trace: bool = False,
) -> ForwardResult:
    """Run `seq` (already holding its prompt) through the encoder with fusion
    at every insertion layer.

    Raises:
        ConfigError: If an insertion layer has no following layer.
    """
    insertion = set(insertion_layers)
    bad = sorted(layer for layer in insertion if not 1 <= layer < encoder.depth)
    if bad:
        raise ConfigError(
            f"insertion layers {bad} outside 1..{encoder.depth - 1}",
            field_paths=["sep.insertion_layers"],
        )
    fusion_params = fusion_params or {}
    k = seq.prompt_length
    trace = []

    seq = encoder.layer(1, seq)
    for layer in range(1, encoder.depth):
        selected_at = None
        if layer in insertion:
            pretrained, prompt = split_tokens(seq)
            selected, selected_at = selection.select(pretrained, k)
            enhanced = fusion.fuse(selected, prompt, fusion_params.get(layer, {}))
            seq = merge_tokens(seq, pretrained, enhanced)
        if keep_trace:
            trace.append(LayerTrace(layer, seq, selected_at))
        seq = encoder.layer(layer + 1, seq)
    if keep_trace:
        trace.append(LayerTrace(encoder.depth, seq))

    return ForwardResult(encoder.pool(seq), trace)


def ivlp_forward(
    encoder: Encoder, seq: TokenSequence, prompts: Sequence[Tensor]
) -> Tensor:
    """Deep prompting: `prompts[i]` occupies the prompt segment entering layer
    `i + 1`; whatever the previous layer left there is discarded.

    Raises:
        ConfigError: If there is not exactly one prompt per layer.
    """
    if len(prompts) != encoder.depth:
        raise ConfigError(
            f"per-layer prompting needs {encoder.depth} prompts, got {len(prompts)}"
        )
    for layer, prompt in enumerate(prompts, start=1):
        seq = encoder.layer(layer, place_prompt(seq, prompt))
    return encoder.pool(seq)
