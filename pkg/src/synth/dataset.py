"""Class-conditional patch-feature datasets.

Each class has a prototype patch grid: a background shared by every class
plus a few salient patches carrying a class-specific pattern. Samples are
the prototype plus isotropic Gaussian noise.
"""

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import structlog

from errors import ArtifactError, ContractError
from models import DomainShift, SyntheticSpec
from store import DATASET_MAGIC, read_container, write_container
from training.seeding import stream

log = structlog.get_logger(__name__)


@dataclass(frozen=True)
class SyntheticDataset:
    spec: SyntheticSpec
    seed: int
    features: np.ndarray  # [N, n_patches, patch_dim]
    labels: np.ndarray  # [N]
    prototypes: np.ndarray  # [n_classes, n_patches, patch_dim]

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def class_ids(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.labels))

    @property
    def feature_shape(self) -> tuple[int, int]:
        return self.features.shape[1], self.features.shape[2]

    def ids_of(self, class_id: int) -> np.ndarray:
        """Example ids of one class, in storage order."""
        return np.flatnonzero(self.labels == class_id)

    def batch(self, ids) -> tuple[np.ndarray, np.ndarray]:
        ids = np.asarray(ids, dtype=np.intp)
        return self.features[ids], self.labels[ids]

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for array in (self.features, self.labels):
            digest.update(np.ascontiguousarray(array).tobytes())
        return digest.hexdigest()


def class_prototype(spec: SyntheticSpec, class_id: int) -> np.ndarray:
    """Background plus the class's salient patches, seeded by `prototype_seed`.

    A class id maps to the same prototype in every dataset sharing
    `prototype_seed`.
    """
    shape = (spec.n_patches, spec.patch_dim)
    background = np.random.default_rng([spec.prototype_seed, 1]).normal(size=shape)
    prototype = spec.background_scale * background

    rng = np.random.default_rng([spec.prototype_seed, 0, class_id])
    salient = rng.choice(spec.n_patches, size=spec.salient_patches, replace=False)
    pattern = rng.normal(size=(spec.salient_patches, spec.patch_dim))
    pattern *= spec.prototype_norm / np.linalg.norm(pattern)
    prototype[salient] += spec.salient_scale * pattern
    return prototype


def generate_dataset(spec: SyntheticSpec, seed: int) -> SyntheticDataset:
    """`samples_per_class` noisy draws around each class prototype."""
    prototypes = np.stack([class_prototype(spec, c) for c in spec.class_ids])
    flat = prototypes.reshape(len(prototypes), -1)
    gaps = np.linalg.norm(flat[:, None] - flat[None, :], axis=-1)
    np.fill_diagonal(gaps, np.inf)
    if len(prototypes) > 1 and gaps.min() == 0:
        raise ContractError("two class prototypes coincide; change prototype_seed")

    rng = stream(seed, "synth")
    features = []
    labels = []
    for prototype, class_id in zip(prototypes, spec.class_ids):
        noise = rng.normal(size=(spec.samples_per_class, *prototype.shape))
        features.append(prototype[None] + spec.noise_scale * noise)
        labels.append(np.full(spec.samples_per_class, class_id, dtype=np.int64))

    dataset = SyntheticDataset(
        spec=spec,
        seed=seed,
        features=np.concatenate(features),
        labels=np.concatenate(labels),
        prototypes=prototypes,
    )
    if spec.domain_shift is not None and not spec.domain_shift.is_identity:
        dataset = domain_shift_variant(dataset, spec.domain_shift, seed)
    log.info(
        "dataset_generated",
        n_classes=spec.n_classes,
        examples=len(dataset),
        seed=seed,
    )
    return dataset


def domain_shift_variant(
    dataset: SyntheticDataset, shift: DomainShift, seed: int
) -> SyntheticDataset:
    """Same examples and labels with `scale·x + offset + inflation·noise`."""
    if shift.is_identity:
        features = dataset.features
    else:
        noise = stream(seed, "synth").normal(size=dataset.features.shape)
        features = shift.scale * dataset.features + shift.offset
        features = features + shift.noise_inflation * noise
    spec = dataset.spec.model_copy(update={"domain_shift": shift})
    return replace(dataset, spec=spec, features=features)


def merge_datasets(datasets: list[SyntheticDataset], seed: int) -> SyntheticDataset:
    """Concatenate datasets with disjoint class sets (the pretraining corpus)."""
    if not datasets:
        raise ContractError("nothing to merge")
    seen: set[int] = set()
    for dataset in datasets:
        overlap = seen & set(dataset.class_ids)
        if overlap:
            raise ContractError(f"datasets share classes {sorted(overlap)}")
        if dataset.feature_shape != datasets[0].feature_shape:
            raise ContractError(
                f"feature shapes differ: {dataset.feature_shape} "
                f"vs {datasets[0].feature_shape}"
            )
        seen |= set(dataset.class_ids)
    first = datasets[0]
    spec = first.spec.model_copy(
        update={"n_classes": len(seen), "class_offset": min(seen), "domain_shift": None}
    )
    return SyntheticDataset(
        spec=spec,
        seed=seed,
        features=np.concatenate([d.features for d in datasets]),
        labels=np.concatenate([d.labels for d in datasets]),
        prototypes=np.concatenate([d.prototypes for d in datasets]),
    )


def save_dataset(dataset: SyntheticDataset, path: Path) -> None:
    meta = {
        "spec": dataset.spec.model_dump(mode="json"),
        "seed": dataset.seed,
        "counts": {"examples": len(dataset), "classes": len(dataset.class_ids)},
    }
    arrays = {
        "features": dataset.features,
        "labels": dataset.labels,
        "prototypes": dataset.prototypes,
    }
    write_container(path, DATASET_MAGIC, meta, arrays)


def load_dataset(path: Path) -> SyntheticDataset:
    container = read_container(path, DATASET_MAGIC)
    try:
        spec = SyntheticSpec.model_validate(container.meta["spec"])
        features = container.arrays["features"]
        labels = container.arrays["labels"]
        prototypes = container.arrays["prototypes"]
    except (KeyError, ValueError) as e:
        raise ArtifactError(f"{path}: not a complete dataset file ({e})") from e
    if len(features) != len(labels):
        raise ArtifactError(
            f"{path}: {len(features)} feature grids but {len(labels)} labels"
        )
    return SyntheticDataset(
        spec=spec,
        seed=int(container.meta.get("seed", 0)),
        features=features,
        labels=labels,
        prototypes=prototypes,
    )


def file_checksum(path: Path) -> str:
    if not path.is_file():
        raise ArtifactError(f"{path}: file not found")
    return hashlib.sha256(path.read_bytes()).hexdigest()
