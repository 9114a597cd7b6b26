"""Learnable prompt parameters and the sequence surgery around them."""

from dataclasses import dataclass, field
from pathlib import Path

from autodiff import Tensor
from autodiff import functional as F
from backbone.encoder import TokenSequence
from errors import ArtifactError, ConfigError, ContractError
from models import SepConfig
from store import PROMPTS_MAGIC, read_container, write_container

MODALITIES = ("visual", "text")


@dataclass
class PromptParams:
    """Every learnable tensor of a tuning run, by dotted name.

    Names: `{modality}.prompt` (enhanced prompting), `{modality}.deep.{i}`
    (per-layer prompts), `{modality}.fusion.{layer}.{param}` (fusion weights).
    """

    tensors: dict[str, Tensor] = field(default_factory=dict)

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self.tensors)

    def with_parameters(self, named: dict[str, Tensor]) -> "PromptParams":
        return PromptParams({name: named[name] for name in self.tensors})

    def prompt(self, modality: str) -> Tensor:
        return self.tensors[f"{modality}.prompt"]

    def deep(self, modality: str) -> list[Tensor]:
        prefix = f"{modality}.deep."
        found = {
            int(n[len(prefix) :]): t
            for n, t in self.tensors.items()
            if n.startswith(prefix)
        }
        return [found[i] for i in sorted(found)]

    def fusion(self, modality: str) -> dict[int, dict[str, Tensor]]:
        """Fusion parameters keyed by insertion layer."""
        prefix = f"{modality}.fusion."
        layers: dict[int, dict[str, Tensor]] = {}
        for name, tensor in self.tensors.items():
            if name.startswith(prefix):
                layer, param = name[len(prefix) :].split(".", 1)
                layers.setdefault(int(layer), {})[param] = tensor
        return layers


def _broadcast(prompt: Tensor, seq: TokenSequence) -> Tensor:
    if prompt.ndim != 2 or prompt.shape[1] != seq.width:
        raise ConfigError(
            f"prompt of shape {prompt.shape} does not match token width {seq.width}"
        )
    length = prompt.shape[0]
    shared = F.reshape(prompt, (length, 1, seq.width))
    return F.broadcast_to(shared, (length, seq.batch, seq.width))


def append_prompt(seq: TokenSequence, prompt: Tensor) -> TokenSequence:
    """`[E, P]`: the prompt, shared across the batch, after the pretrained tokens."""
    tokens = F.concat([seq.tokens, _broadcast(prompt, seq)], axis=0)
    return TokenSequence(
        tokens,
        prompt_start=seq.length,
        prompt_length=prompt.shape[0],
        pool_index=seq.pool_index,
    )


def split_tokens(seq: TokenSequence) -> tuple[Tensor, Tensor]:
    """Pretrained segment (every non-prompt position, in order) and prompt segment."""
    start, stop = seq.prompt_start, seq.prompt_start + seq.prompt_length
    prompt = F.slice_axis(seq.tokens, 0, start, stop)
    if stop == seq.length:
        return F.slice_axis(seq.tokens, 0, 0, start), prompt
    before = F.slice_axis(seq.tokens, 0, 0, start)
    after = F.slice_axis(seq.tokens, 0, stop, seq.length)
    return F.concat([before, after], axis=0), prompt


def merge_tokens(
    seq: TokenSequence, pretrained: Tensor, prompt: Tensor
) -> TokenSequence:
    """Inverse of `split_tokens`, putting `prompt` back into `seq`'s prompt span."""
    start = seq.prompt_start
    if prompt.shape[0] != seq.prompt_length:
        raise ContractError(
            f"prompt segment of length {prompt.shape[0]} does not fit a span of "
            f"{seq.prompt_length}"
        )
    if pretrained.shape[0] != seq.length - seq.prompt_length:
        raise ContractError("pretrained segment length changed between split and merge")
    if start == pretrained.shape[0]:
        return seq.with_tokens(F.concat([pretrained, prompt], axis=0))
    before = F.slice_axis(pretrained, 0, 0, start)
    after = F.slice_axis(pretrained, 0, start, pretrained.shape[0])
    return seq.with_tokens(F.concat([before, prompt, after], axis=0))


def place_prompt(seq: TokenSequence, prompt: Tensor) -> TokenSequence:
    """Append `prompt` to a sequence without a prompt span, otherwise overwrite
    the span with it."""
    if seq.prompt_length == 0 and seq.prompt_start == seq.length:
        return append_prompt(seq, prompt)
    pretrained, _ = split_tokens(seq)
    return merge_tokens(seq, pretrained, _broadcast(prompt, seq))


def save_prompts(
    prompts: PromptParams, config: SepConfig, path: Path, meta: dict | None = None
) -> None:
    header = {"sep": config.model_dump(mode="json"), **(meta or {})}
    arrays = {name: t.data for name, t in prompts.tensors.items()}
    write_container(path, PROMPTS_MAGIC, header, arrays)


def load_prompts(path: Path) -> tuple[PromptParams, SepConfig, dict]:
    """Prompt tensors, the SepConfig they were tuned with, and the header."""
    container = read_container(path, PROMPTS_MAGIC)
    try:
        config = SepConfig.model_validate(container.meta["sep"])
    except (KeyError, ValueError) as e:
        raise ArtifactError(
            f"{path}: prompt header has no valid sep config ({e})"
        ) from e
    tensors = {
        name: Tensor(array, requires_grad=True)
        for name, array in container.arrays.items()
    }
    return PromptParams(tensors), config, container.meta
