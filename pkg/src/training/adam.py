"""Bias-corrected Adam over named tensors."""

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from autodiff import Tensor
from errors import ContractError


@dataclass
class AdamState:
    """Moment buffers keyed by parameter name, created on first update."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
    lr: float,
) -> dict[str, Tensor]:
    """One Adam update. Returns new tensors; `state` is advanced in place.

    Raises:
        ContractError: If any parameter has no gradient, which means it was
            detached from the loss.
    """
    missing = sorted(name for name in params if grads.get(name) is None)
    if missing:
        raise ContractError(f"no gradient for learnable parameters {missing}")

    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    step_size = lr / bc1

    updated = {}
    for name, tensor in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if name not in state.m:
            state.m[name] = np.zeros(tensor.shape)
            state.v[name] = np.zeros(tensor.shape)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        denom = np.sqrt(state.v[name] / bc2) + state.eps
        updated[name] = Tensor(
            tensor.data - step_size * state.m[name] / denom,
            requires_grad=tensor.requires_grad,
            name=tensor.name,
        )
    return updated
