"""Base-to-new, cross-dataset, domain-shift and few-shot evaluation."""

import time
from collections import defaultdict
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import structlog

from backbone.clip import MiniClip
from errors import ContractError
from evaluation.metrics import accuracy, classify, harmonic_mean
from models import (
    EvalReport,
    RunConfig,
    SeedResult,
    SepConfig,
    SplitManifest,
    TargetAccuracy,
    TransferReport,
)
from sep.model import SepModel
from sep.prompts import PromptParams
from synth.dataset import SyntheticDataset
from synth.splits import base_new_split, few_shot_sample
from training.tune import TuneResult, tune

log = structlog.get_logger(__name__)

EVAL_BATCH = 128


@dataclass
class Classifier:
    """Encodes classes and images either zero-shot or through tuned prompts."""

    clip: MiniClip
    sep_config: SepConfig
    prompts: PromptParams | None = None

    def _model(self) -> SepModel | None:
        if self.prompts is None:
            return None
        return SepModel(self.clip, self.sep_config, self.prompts)

    def class_embeddings(self, classes: Sequence[int]) -> np.ndarray:
        model = self._model()
        if model is None:
            return self.clip.encode_frozen_text(classes).data
        return model.text_classifier(classes).data

    def image_embeddings(self, patches: np.ndarray) -> np.ndarray:
        model = self._model()
        chunks = []
        for start in range(0, len(patches), EVAL_BATCH):
            batch = patches[start : start + EVAL_BATCH]
            if model is None:
                chunks.append(self.clip.encode_frozen_image(batch).data)
            else:
                chunks.append(model.image_embeddings(batch).data)
        return np.concatenate(chunks)

    def accuracy(
        self, dataset: SyntheticDataset, ids: Sequence[int], classes: Sequence[int]
    ) -> float:
        """Accuracy on `ids` when choosing among `classes` only."""
        if len(ids) == 0:
            return 0.0
        classes = sorted(classes)
        patches, labels = dataset.batch(ids)
        predicted = np.asarray(classes)[
            classify(self.image_embeddings(patches), self.class_embeddings(classes))
        ]
        return accuracy(predicted, labels)


def base_to_new_eval(
    classifier: Classifier, dataset: SyntheticDataset, split: SplitManifest, seed: int
) -> SeedResult:
    """Base accuracy over base classes, new accuracy over new classes, with the
    classifier rebuilt for each class set from the same prompts.

    Raises:
        ContractError: If base and new classes overlap, or a test example was
            also a tuning example.
    """
    overlap = set(split.base_classes) & set(split.new_classes)
    if overlap:
        raise ContractError(f"base and new classes overlap: {sorted(overlap)}")
    base_ids = split.test_ids_for(split.base_classes)
    new_ids = split.test_ids_for(split.new_classes)
    leaked = set(split.all_support_ids()) & set(base_ids + new_ids)
    if leaked:
        raise ContractError(f"test examples {sorted(leaked)} were tuned on")
    started = time.perf_counter()
    base_acc = classifier.accuracy(dataset, base_ids, split.base_classes)
    new_acc = classifier.accuracy(dataset, new_ids, split.new_classes)
    result = SeedResult(
        seed=seed,
        base_acc=base_acc,
        new_acc=new_acc,
        h=harmonic_mean(base_acc, new_acc),
        runtime_s=time.perf_counter() - started,
    )
    log.info("base_to_new_evaluated", seed=seed, base=base_acc, new=new_acc, h=result.h)
    return result


def seed_average(
    key: str,
    results: Sequence[SeedResult],
    fingerprint: str = "",
    runtime_s: float = 0.0,
) -> EvalReport:
    """Average base and new over seeds; H is taken of the averages."""
    if not results:
        raise ContractError("no seed results to average")
    base = float(np.mean([r.base_acc for r in results]))
    new = float(np.mean([r.new_acc for r in results]))
    return EvalReport(
        key=key,
        base_acc=base,
        new_acc=new,
        h=harmonic_mean(base, new),
        per_seed=list(results),
        config_fingerprint=fingerprint,
        runtime_s=runtime_s,
    )


def cross_dataset_eval(
    classifier: Classifier,
    source: SyntheticDataset,
    targets: Sequence[tuple[str, SyntheticDataset]],
    seed: int,
) -> list[TargetAccuracy]:
    """Accuracy on each target's test examples over the target's own classes.

    Raises:
        ContractError: If a target's patch grid differs from the source's.
    """
    rows = []
    for name, target in targets:
        if target.feature_shape != source.feature_shape:
            raise ContractError(
                f"target '{name}' has patch grid {target.feature_shape}, "
                f"source has {source.feature_shape}"
            )
        ids = _test_ids(target)
        value = classifier.accuracy(target, ids, target.class_ids)
        rows.append(TargetAccuracy(name=name, seed=seed, accuracy=value))
        log.info("target_evaluated", target=name, seed=seed, accuracy=rows[-1].accuracy)
    return rows


def domain_shift_eval(
    classifier: Classifier,
    variants: Sequence[tuple[str, SyntheticDataset]],
    split: SplitManifest,
    seed: int,
) -> list[TargetAccuracy]:
    """Accuracy over the trained classes on each shifted copy of the test set."""
    rows = []
    ids = split.test_ids_for(split.base_classes)
    for name, variant in variants:
        rows.append(
            TargetAccuracy(
                name=name,
                seed=seed,
                accuracy=classifier.accuracy(variant, ids, split.base_classes),
            )
        )
        log.info(
            "variant_evaluated", variant=name, seed=seed, accuracy=rows[-1].accuracy
        )
    return rows


def few_shot_eval(
    classifier: Classifier, dataset: SyntheticDataset, split: SplitManifest, seed: int
) -> list[TargetAccuracy]:
    classes = sorted(split.base_classes + split.new_classes)
    value = classifier.accuracy(dataset, split.test_ids_for(classes), classes)
    return [TargetAccuracy(name="all-classes", seed=seed, accuracy=value)]


def transfer_report(
    mode: str, key: str, rows: Sequence[TargetAccuracy], fingerprint: str = ""
) -> TransferReport:
    """Per-target mean over seeds and the average over targets."""
    by_target: dict[str, list[float]] = defaultdict(list)
    for row in rows:
        by_target[row.name].append(row.accuracy)
    per_target = {name: float(np.mean(values)) for name, values in by_target.items()}
    average = float(np.mean(list(per_target.values()))) if per_target else 0.0
    return TransferReport(
        mode=mode,
        key=key,
        rows=list(rows),
        per_target=per_target,
        average=average,
        config_fingerprint=fingerprint,
    )


def _test_ids(dataset: SyntheticDataset) -> list[int]:
    n_test = dataset.spec.test_per_class
    return sorted(
        i for c in dataset.class_ids for i in dataset.ids_of(c)[:n_test].tolist()
    )


def make_split(
    config: RunConfig, dataset: SyntheticDataset, seed: int
) -> SplitManifest:
    """The split the configured protocol trains on.

    Class partitions follow `split.seed`; support examples follow the run seed.
    """
    shots = config.split.resolved_shots(config.train.shots)
    if config.split.protocol == "all-classes":
        return few_shot_sample(dataset, shots, seed)
    return base_new_split(
        dataset, config.split.fraction, config.split.seed, shots, shot_seed=seed
    )


def tune_and_evaluate(
    config: RunConfig, clip: MiniClip, dataset: SyntheticDataset, seed: int
) -> tuple[SeedResult, TuneResult, SplitManifest]:
    """One seed of the base-to-new protocol: split, tune on base, evaluate."""
    started = time.perf_counter()
    split = make_split(config, dataset, seed)
    tuned = tune(clip, config.sep, dataset, split, config.train, config.weights, seed)
    classifier = Classifier(clip, config.sep, tuned.prompts)
    result = base_to_new_eval(classifier, dataset, split, seed)
    result.runtime_s = time.perf_counter() - started
    return result, tuned, split
