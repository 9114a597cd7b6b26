"""Finite-difference oracle for the autodiff tape."""

from collections.abc import Callable, Iterable, Mapping

import numpy as np
import structlog

from autodiff.tensor import Tape, Tensor
from errors import ContractError
from models import GradCheckReport, ParameterCheck

log = structlog.get_logger(__name__)

Objective = Callable[[Mapping[str, Tensor]], Tensor]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, 1e-6)."""
    diff = float(np.linalg.norm(analytic - numeric))
    floor = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-6)
    return diff / floor


def numerical_gradient(
    objective: Objective, params: Mapping[str, Tensor], name: str, step: float = 1e-5
) -> np.ndarray:
    """Central differences of `objective` with respect to `params[name]`.

    The objective is evaluated outside any tape, so nothing is recorded.
    """
    base = params[name]
    grad = np.zeros(base.shape)
    flat = base.data.reshape(-1)
    for i in range(flat.size):
        values = []
        for sign in (1.0, -1.0):
            shifted = flat.copy()
            shifted[i] += sign * step
            trial = dict(params)
            trial[name] = Tensor(shifted.reshape(base.shape), requires_grad=True)
            values.append(objective(trial).item())
        grad.reshape(-1)[i] = (values[0] - values[1]) / (2.0 * step)
    return grad


def check_gradients(
    objective: Objective,
    params: Mapping[str, Tensor],
    frozen: Iterable[Tensor] = (),
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare tape gradients with central differences for every parameter.

    `frozen` tensors must come out of the backward pass without a gradient.
    """
    if not params:
        raise ContractError("gradient check needs at least one parameter")
    frozen = list(frozen)
    for tensor in frozen:
        tensor.grad = None

    with Tape() as tape:
        loss = objective(params)
        tape.backward(loss)
        analytic = {
            name: np.zeros(t.shape) if t.grad is None else t.grad.copy()
            for name, t in params.items()
        }
        frozen_without_grad = all(t.grad is None for t in frozen)
    tape.clear()

    checks = []
    for name, tensor in params.items():
        numeric = numerical_gradient(objective, params, name, step)
        check = ParameterCheck(
            name=name,
            shape=list(tensor.shape),
            rel_error=relative_error(analytic[name], numeric),
            max_abs_error=float(np.max(np.abs(analytic[name] - numeric), initial=0.0)),
        )
        log.debug("parameter_checked", name=name, rel_error=check.rel_error)
        checks.append(check)

    report = GradCheckReport(
        checks=checks, frozen_without_grad=frozen_without_grad, tolerance=tolerance
    )
    log.info(
        "gradcheck_complete",
        parameters=len(checks),
        max_rel_error=report.max_rel_error,
        frozen_without_grad=frozen_without_grad,
        passed=report.passed,
    )
    return report
