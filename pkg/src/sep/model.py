"""Prompted dual encoder: builds W^sep and f̂ from a frozen backbone."""

from collections.abc import Sequence

import numpy as np
import structlog

from autodiff import Tensor
from backbone import vocab
from backbone.clip import MiniClip
from backbone.encoder import Encoder, TokenSequence
from errors import ContractError
from models import BackboneConfig, SepConfig
from sep.discovery import get_fusion, get_selection
from sep.forward import ForwardResult, enhanced_forward, ivlp_forward
from sep.prompts import MODALITIES, PromptParams, place_prompt

log = structlog.get_logger(__name__)


def _mode(config: SepConfig, modality: str) -> str:
    return config.visual_prompting if modality == "visual" else config.text_prompting


def _length(config: SepConfig, modality: str) -> int:
    if modality == "visual":
        return config.visual_prompt_length
    return config.text_prompt_length


def init_prompts(
    config: SepConfig, backbone: BackboneConfig, rng: np.random.Generator
) -> PromptParams:
    """Prompt vectors from N(0, 0.02²) plus fusion weights per insertion layer."""
    d = backbone.d_model
    fusion = get_fusion(config.fusion, config)
    layers = config.resolved_insertion_layers(backbone.n_layers)
    tensors: dict[str, Tensor] = {}
    for modality in MODALITIES:
        mode, length = _mode(config, modality), _length(config, modality)
        if mode == "sep":
            tensors[f"{modality}.prompt"] = Tensor(
                rng.normal(0.0, 0.02, (length, d)), requires_grad=True
            )
            for layer in layers:
                for name, tensor in fusion.init_params(d, rng).items():
                    tensors[f"{modality}.fusion.{layer}.{name}"] = tensor
        elif mode == "ivlp":
            for i in range(backbone.n_layers):
                tensors[f"{modality}.deep.{i}"] = Tensor(
                    rng.normal(0.0, 0.02, (length, d)), requires_grad=True
                )
    log.debug("prompts_initialized", tensors=len(tensors))
    return PromptParams(tensors)


class SepModel:
    """A frozen `MiniClip` plus prompts, run according to a `SepConfig`."""

    def __init__(self, clip: MiniClip, config: SepConfig, prompts: PromptParams):
        if not clip.frozen:
            raise ContractError("prompt tuning needs a frozen backbone")
        self.clip = clip
        self.config = config
        self.prompts = prompts
        self.selection = {
            "visual": get_selection(config.selection_visual),
            "text": get_selection(config.selection_text),
        }
        self.fusion = get_fusion(config.fusion, config)
        self.insertion_layers = config.resolved_insertion_layers(clip.config.n_layers)

    def _run(
        self, modality: str, encoder: Encoder, seq: TokenSequence, keep_trace: bool
    ) -> ForwardResult:
        mode = _mode(self.config, modality)
        if mode == "ivlp":
            pooled = ivlp_forward(encoder, seq, self.prompts.deep(modality))
            return ForwardResult(pooled)
        return enhanced_forward(
            encoder,
            place_prompt(seq, self.prompts.prompt(modality)),
            self.selection[modality],
            self.fusion,
            self.insertion_layers,
            self.prompts.fusion(modality),
            keep_trace=keep_trace,
        )

    def text_forward(
        self, class_ids: Sequence[int], keep_trace: bool = False
    ) -> ForwardResult:
        if len(class_ids) == 0:
            raise ContractError("a classifier needs at least one class")
        if self.config.text_prompting == "off":
            return ForwardResult(self.clip.encode_text(class_ids))
        template = vocab.learnable_template(self.config.text_prompt_length)
        seq = self.clip.embed_text(class_ids, template)
        return self._run("text", self.clip.text, seq, keep_trace)

    def image_forward(
        self, patches: np.ndarray, keep_trace: bool = False
    ) -> ForwardResult:
        if self.config.visual_prompting == "off":
            return ForwardResult(self.clip.encode_image(patches))
        seq = self.clip.embed_image(patches)
        return self._run("visual", self.clip.visual, seq, keep_trace)

    def text_classifier(self, class_ids: Sequence[int]) -> Tensor:
        """W^sep: one unit row per class."""
        return self.text_forward(class_ids).embedding

    def image_embeddings(self, patches: np.ndarray) -> Tensor:
        """f̂: one unit row per image."""
        return self.image_forward(patches).embedding
