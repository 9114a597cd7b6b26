"""Prompt tuning against a frozen backbone."""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import structlog

from autodiff import Tape
from backbone.clip import MiniClip
from errors import ContractError
from evaluation.metrics import accuracy, classify
from models import LossWeights, SepConfig, SplitManifest, StepMetrics, TrainConfig
from objectives import (
    LossParts,
    ce_visual,
    contrastive_ce,
    kg_text,
    kg_visual,
    total_loss,
)
from sep.model import SepModel, init_prompts
from sep.prompts import PromptParams
from synth.dataset import SyntheticDataset
from training.adam import AdamState, adam_step
from training.seeding import seed_all

log = structlog.get_logger(__name__)


@dataclass
class TuneResult:
    prompts: PromptParams
    metrics: list[StepMetrics] = field(default_factory=list)
    seen_ids: set[int] = field(default_factory=set)


def tune(
    clip: MiniClip,
    sep_config: SepConfig,
    dataset: SyntheticDataset,
    manifest: SplitManifest,
    train_config: TrainConfig,
    weights: LossWeights,
    seed: int,
    prompts: PromptParams | None = None,
) -> TuneResult:
    """Optimise prompt (and fusion) tensors on the manifest's support examples.

    Every step rebuilds W^sep for all trainable classes and f̂ for the batch,
    compares them with the frozen W^clip (computed once) and f (per batch),
    and applies one Adam update. The backbone is audited after every step.

    Raises:
        ContractError: If the backbone is not frozen, there is nothing to
            train on, or a backbone parameter changes or receives a gradient.
        TrainingDivergedError: If a loss term turns NaN.
    """
    if not clip.frozen:
        raise ContractError("tuning needs a frozen backbone")
    support = manifest.all_support_ids()
    if not support:
        raise ContractError("no support examples to tune on")

    streams = seed_all(seed)
    if prompts is None:
        prompts = init_prompts(sep_config, clip.config, streams.init)
    result = TuneResult(prompts=prompts)
    if not prompts.tensors:
        log.info("nothing_to_tune", reason="both encoders run without prompts")
        return result

    classes = sorted(manifest.base_classes)
    column = {class_id: i for i, class_id in enumerate(classes)}
    tau = weights.tau or clip.config.tau
    backbone_tensors = list(clip.params.named_parameters().values())
    backbone_checksum = clip.params.checksum()
    w_clip = clip.encode_frozen_text(classes)

    model = SepModel(clip, sep_config, prompts)
    state = AdamState()
    step = 0
    for epoch in range(1, train_config.epochs + 1):
        order = streams.shuffle.permutation(support)
        epoch_totals = []
        for start in range(0, len(order), train_config.batch_size):
            ids = order[start : start + train_config.batch_size]
            result.seen_ids.update(int(i) for i in ids)
            patches, labels = dataset.batch(ids)
            targets = np.array([column[int(c)] for c in labels])
            f = clip.encode_frozen_image(patches)

            named = model.prompts.named_parameters()
            with Tape() as tape:
                w_sep = model.text_classifier(classes)
                f_hat = model.image_embeddings(patches)
                parts = LossParts(
                    ce=contrastive_ce(f_hat, w_sep, targets, tau),
                    kg_text=kg_text(w_clip, w_sep),
                    kg_visual=kg_visual(f_hat, f),
                    ce_visual=ce_visual(f_hat, w_clip, targets, tau),
                )
                total, report = total_loss(parts, weights, step=step)
                tape.backward(total)
                grads = {name: t.grad for name, t in named.items()}
                if any(t.grad is not None for t in backbone_tensors):
                    raise ContractError(
                        f"a backbone parameter received a gradient at step {step}"
                    )
            tape.clear()

            model.prompts = model.prompts.with_parameters(
                adam_step(named, grads, state, train_config.lr)
            )
            if clip.params.checksum() != backbone_checksum:
                raise ContractError(f"backbone parameters changed at step {step}")

            train_acc = accuracy(classify(f_hat.data, w_sep.data), targets)
            row = StepMetrics(
                epoch=epoch, step=step, **report.model_dump(), train_acc=train_acc
            )
            result.metrics.append(row)
            epoch_totals.append(report.total)
            step += 1

        log.info(
            "epoch_complete",
            epoch=epoch,
            steps=step,
            mean_total=round(float(np.mean(epoch_totals)), 6),
        )

    result.prompts = model.prompts
    return result


def write_metrics_csv(metrics: list[StepMetrics], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(StepMetrics.model_fields))
        writer.writeheader()
        for row in metrics:
            writer.writerow(row.model_dump())
    log.info("metrics_written", path=str(path), rows=len(metrics))
