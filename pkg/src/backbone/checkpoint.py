"""Backbone checkpoints in the `SEPCKPT1` container."""

from pathlib import Path

import numpy as np
import structlog
from pydantic import ValidationError

from autodiff import Tensor
from backbone.params import BackboneParams
from errors import ArtifactError
from models import BackboneConfig
from store import CHECKPOINT_MAGIC, read_container, write_container

log = structlog.get_logger(__name__)


def save_checkpoint(params: BackboneParams, path: Path) -> None:
    """Write every parameter as f32 with the backbone config in the header."""
    arrays = {name: t.data for name, t in params.named_parameters().items()}
    meta = {"config": params.config.model_dump(mode="json"), "frozen": params.frozen}
    write_container(path, CHECKPOINT_MAGIC, meta, arrays)
    log.info("checkpoint_saved", path=str(path), parameters=len(arrays))


def load_checkpoint(path: Path) -> BackboneParams:
    """Read a checkpoint and check it against the config in its header.

    Raises:
        ArtifactError: If the file is missing or malformed, or its tensors do
            not have the shapes the header config implies.
    """
    container = read_container(path, CHECKPOINT_MAGIC)
    try:
        config = BackboneConfig.model_validate(container.meta.get("config"))
    except ValidationError as e:
        raise ArtifactError(f"{path}: header config is invalid ({e})") from e

    skeleton = BackboneParams.initialize(config)
    expected = {name: t.shape for name, t in skeleton.named_parameters().items()}
    found = {name: array.shape for name, array in container.arrays.items()}
    if expected.keys() != found.keys():
        missing = sorted(expected.keys() - found.keys())
        extra = sorted(found.keys() - expected.keys())
        raise ArtifactError(
            f"{path}: tensors disagree with header config "
            f"(missing={missing}, extra={extra})"
        )
    mismatched = [name for name in expected if tuple(expected[name]) != found[name]]
    if mismatched:
        raise ArtifactError(
            f"{path}: config in header disagrees with tensor sizes for {mismatched}"
        )

    frozen = bool(container.meta.get("frozen", False))
    params = skeleton.with_parameters(
        {
            name: Tensor(np.asarray(array), requires_grad=not frozen)
            for name, array in container.arrays.items()
        }
    )
    params.frozen = frozen
    log.info("checkpoint_loaded", path=str(path), frozen=frozen)
    return params
