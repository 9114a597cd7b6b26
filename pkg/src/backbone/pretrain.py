"""Contrastive pretraining of the stand-in backbone."""

import numpy as np
import structlog

from autodiff import Tape
from autodiff import functional as F
from backbone.clip import MiniClip
from backbone.params import BackboneParams
from errors import ContractError, TrainingDivergedError
from models import PretrainConfig
from objectives import cross_entropy
from synth.dataset import SyntheticDataset
from training.adam import AdamState, adam_step
from training.seeding import seed_all

log = structlog.get_logger(__name__)


def infonce_loss(model: MiniClip, patches: np.ndarray, class_ids: list[int]):
    """Symmetric InfoNCE over a batch with one image per distinct class."""
    image = model.encode_image(patches)
    text = model.encode_text(class_ids)
    logits = F.scale(F.matmul(image, F.transpose(text, (1, 0))), 1.0 / model.config.tau)
    targets = np.arange(len(class_ids))
    image_to_text = cross_entropy(logits, targets)
    text_to_image = cross_entropy(F.transpose(logits, (1, 0)), targets)
    return F.scale(F.add(image_to_text, text_to_image), 0.5)


def contrastive_pretrain(
    params: BackboneParams, dataset: SyntheticDataset, config: PretrainConfig
) -> BackboneParams:
    """Align image and class-name embeddings; the caller freezes the result.

    Raises:
        ContractError: If `params` is already frozen.
        TrainingDivergedError: If the loss turns NaN.
    """
    if params.frozen:
        raise ContractError("contrastive_pretrain needs an unfrozen backbone")
    if config.steps == 0:
        return params

    classes = dataset.class_ids
    per_batch = min(config.batch_size, len(classes))
    if per_batch < 2:
        raise ContractError("pretraining needs at least two classes")
    rng = seed_all(config.seed).shuffle
    state = AdamState()
    current = params.unfreeze()

    for step in range(config.steps):
        drawn = rng.choice(classes, size=per_batch, replace=False)
        batch_classes = sorted(int(c) for c in drawn)
        ids = [int(rng.choice(dataset.ids_of(c))) for c in batch_classes]
        patches, _ = dataset.batch(ids)

        named = current.named_parameters()
        with Tape() as tape:
            loss = infonce_loss(MiniClip(current), patches, batch_classes)
            value = loss.item()
            if np.isnan(value):
                raise TrainingDivergedError(step)
            tape.backward(loss)
            grads = {name: t.grad for name, t in named.items()}
        tape.clear()

        current = current.with_parameters(adam_step(named, grads, state, config.lr))
        if step % config.log_every == 0 or step == config.steps - 1:
            log.info("pretrain_step", step=step, loss=round(value, 6))

    return current
