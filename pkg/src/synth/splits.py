"""Base/new and few-shot split protocols."""

import math
from collections.abc import Iterable

import numpy as np
import structlog

from errors import ContractError
from models import SplitManifest
from synth.dataset import SyntheticDataset
from training.seeding import stream

log = structlog.get_logger(__name__)


def _partition(
    dataset: SyntheticDataset,
) -> tuple[dict[int, list[int]], dict[int, list[int]]]:
    """Per class: the first `test_per_class` examples are test, the rest train."""
    n_test = dataset.spec.test_per_class
    train, test = {}, {}
    for class_id in dataset.class_ids:
        ids = dataset.ids_of(class_id).tolist()
        test[class_id] = ids[:n_test]
        train[class_id] = ids[n_test:]
    return train, test


def _support(
    train: dict[int, list[int]],
    classes: Iterable[int],
    shots: int | None,
    rng: np.random.Generator,
) -> dict[int, list[int]]:
    support = {}
    for class_id in sorted(classes):
        pool = train[class_id]
        if shots is None:
            support[class_id] = list(pool)
            continue
        if shots > len(pool):
            raise ContractError(
                f"class {class_id} has {len(pool)} training examples, "
                f"{shots} shots requested"
            )
        drawn = rng.choice(pool, size=shots, replace=False)
        support[class_id] = sorted(int(i) for i in drawn)
    return support


def base_new_split(
    dataset: SyntheticDataset,
    fraction: float,
    seed: int,
    shots: int | None = None,
    shot_seed: int | None = None,
) -> SplitManifest:
    """Shuffle the classes; the first ⌈fraction·N_c⌉ are base, the rest new.

    Support examples are drawn for base classes only, seeded by `shot_seed`
    (default `seed`) so the class partition can stay fixed across runs.
    """
    if not 0 < fraction < 1:
        raise ContractError(f"fraction must lie in (0, 1), got {fraction}")
    classes = dataset.class_ids
    if len(classes) < 2:
        raise ContractError("a base/new split needs at least two classes")

    rng = stream(seed, "shuffle")
    order = [int(c) for c in rng.permutation(classes)]
    n_base = min(max(math.ceil(fraction * len(classes)), 1), len(classes) - 1)
    base, new = sorted(order[:n_base]), sorted(order[n_base:])

    train, test = _partition(dataset)
    shot_rng = stream(seed if shot_seed is None else shot_seed, "sample")
    manifest = SplitManifest(
        base_classes=base,
        new_classes=new,
        train_ids=train,
        test_ids=test,
        support_ids=_support(train, base, shots, shot_rng),
        shots=shots,
        seed=seed,
    )
    log.info(
        "split_created", protocol="base-to-new", base=len(base), new=len(new), seed=seed
    )
    return manifest


def few_shot_sample(dataset: SyntheticDataset, k: int, seed: int) -> SplitManifest:
    """All classes trainable with exactly `k` support examples each."""
    if k < 1:
        raise ContractError(f"k must be at least 1, got {k}")
    classes = dataset.class_ids
    train, test = _partition(dataset)
    manifest = SplitManifest(
        base_classes=classes,
        train_ids=train,
        test_ids=test,
        support_ids=_support(train, classes, k, stream(seed, "sample")),
        shots=k,
        seed=seed,
    )
    log.info(
        "split_created",
        protocol="all-classes",
        classes=len(classes),
        shots=k,
        seed=seed,
    )
    return manifest
