"""Parameter containers for the dual encoder.

Parameters are plain dataclasses of `Tensor`s. Names are dotted paths
(`visual.layers.0.w_q`) and are what checkpoints store.
"""

import dataclasses
import hashlib
from collections.abc import Callable, Iterator
from dataclasses import dataclass, fields
from typing import Any

import numpy as np

from autodiff import Tensor
from models import BackboneConfig


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor


@dataclass
class EncoderLayerParams:
    """One pre-norm transformer block: attention then MLP, both residual."""

    ln_1: LayerNormParams
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor
    ln_2: LayerNormParams
    w_fc: Tensor
    b_fc: Tensor
    w_proj: Tensor
    b_proj: Tensor


@dataclass
class TowerParams:
    layers: list[EncoderLayerParams]
    ln_post: LayerNormParams
    proj: Tensor  # [d_model, d_joint]


@dataclass
class BackboneParams:
    config: BackboneConfig
    patch_embedding: Tensor  # [patch_dim, d_model]
    class_embedding: Tensor  # [d_model]
    visual_positions: Tensor  # [L_e, d_model]
    token_embedding: Tensor  # [vocab_size, d_model]
    text_positions: Tensor  # [text_len, d_model]
    visual: TowerParams
    text: TowerParams
    frozen: bool = False

    @classmethod
    def initialize(
        cls, config: BackboneConfig, rng: np.random.Generator | None = None
    ) -> "BackboneParams":
        """Random parameters, or all-zero placeholders of the right shapes when
        `rng` is None (used to validate checkpoints)."""

        def normal(std: float, *shape: int) -> Tensor:
            if rng is None:
                return Tensor(np.zeros(shape))
            return Tensor(rng.normal(0.0, std, size=shape))

        def ones(*shape: int) -> Tensor:
            return Tensor(np.ones(shape) if rng is not None else np.zeros(shape))

        d = config.d_model
        hidden = d * config.mlp_ratio

        def layer_norm() -> LayerNormParams:
            return LayerNormParams(gain=ones(d), bias=normal(0.0, d))

        def tower() -> TowerParams:
            layers = [
                EncoderLayerParams(
                    ln_1=layer_norm(),
                    w_q=normal(d**-0.5, d, d),
                    b_q=normal(0.0, d),
                    w_k=normal(d**-0.5, d, d),
                    b_k=normal(0.0, d),
                    w_v=normal(d**-0.5, d, d),
                    b_v=normal(0.0, d),
                    w_o=normal(d**-0.5, d, d),
                    b_o=normal(0.0, d),
                    ln_2=layer_norm(),
                    w_fc=normal(d**-0.5, d, hidden),
                    b_fc=normal(0.0, hidden),
                    w_proj=normal(hidden**-0.5, hidden, d),
                    b_proj=normal(0.0, d),
                )
                for _ in range(config.n_layers)
            ]
            return TowerParams(
                layers=layers,
                ln_post=layer_norm(),
                proj=normal(d**-0.5, d, config.d_joint),
            )

        return cls(
            config=config,
            patch_embedding=normal(config.patch_dim**-0.5, config.patch_dim, d),
            class_embedding=normal(0.02, d),
            visual_positions=normal(0.01, config.visual_tokens, d),
            token_embedding=normal(0.02, config.vocab_size, d),
            text_positions=normal(0.01, config.text_len, d),
            visual=tower(),
            text=tower(),
        )

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(_walk(self, ""))

    def map_parameters(self, fn: Callable[[str, Tensor], Tensor]) -> "BackboneParams":
        """A structurally identical copy with every tensor replaced by `fn`."""
        return _map(self, fn, "")

    def with_parameters(self, named: dict[str, Tensor]) -> "BackboneParams":
        return self.map_parameters(lambda name, _: named[name])

    def freeze(self) -> "BackboneParams":
        frozen = self.map_parameters(
            lambda _, t: Tensor.wrap(t.data, requires_grad=False)
        )
        return dataclasses.replace(frozen, frozen=True)

    def unfreeze(self) -> "BackboneParams":
        live = self.map_parameters(
            lambda _, t: Tensor.wrap(t.data, requires_grad=True)
        )
        return dataclasses.replace(live, frozen=False)

    def checksum(self) -> str:
        """sha256 over parameter names and values."""
        digest = hashlib.sha256()
        for name, tensor in sorted(self.named_parameters().items()):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(tensor.data).tobytes())
        return digest.hexdigest()


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def _walk(obj: Any, prefix: str) -> Iterator[tuple[str, Tensor]]:
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif isinstance(obj, list):
        for i, item in enumerate(obj):
            yield from _walk(item, _join(prefix, str(i)))
    elif dataclasses.is_dataclass(obj):
        for f in fields(obj):
            yield from _walk(getattr(obj, f.name), _join(prefix, f.name))


def _map(obj: Any, fn: Callable[[str, Tensor], Tensor], prefix: str) -> Any:
    if isinstance(obj, Tensor):
        return fn(prefix, obj)
    if isinstance(obj, list):
        return [_map(item, fn, _join(prefix, str(i))) for i, item in enumerate(obj)]
    if dataclasses.is_dataclass(obj):
        changes = {
            f.name: _map(getattr(obj, f.name), fn, _join(prefix, f.name))
            for f in fields(obj)
        }
        return dataclasses.replace(obj, **changes)
    return obj
