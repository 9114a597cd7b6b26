import hashlib
import json
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import ConfigError


class StrictModel(BaseModel):
    """Base for every config model: unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")


# Backbone


class BackboneConfig(StrictModel):
    """Shape of the miniature frozen dual encoder."""

    d_model: int = Field(32, gt=0)
    n_layers: int = Field(6, ge=1)
    n_heads: int = Field(4, ge=1)
    n_patches: int = Field(16, ge=1)
    patch_dim: int = Field(8, ge=1)
    text_len: int = Field(16, ge=3)
    vocab_size: int = Field(72, ge=9)
    d_joint: int = Field(32, gt=0)
    tau: float = Field(0.07, gt=0)
    mlp_ratio: int = Field(4, ge=1)
    ln_eps: float = Field(1e-5, gt=0)

    @model_validator(mode="after")
    def _heads_divide_width(self) -> "BackboneConfig":
        if self.d_model % self.n_heads:
            raise ValueError(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}"
            )
        return self

    @property
    def visual_tokens(self) -> int:
        """L_e: patch tokens plus the class token."""
        return self.n_patches + 1


class PretrainConfig(StrictModel):
    """Contrastive pretraining of the stand-in backbone."""

    steps: int = Field(300, ge=0)
    lr: float = Field(1e-3, gt=0)
    batch_size: int = Field(16, ge=2)
    seed: int = 0
    log_every: int = Field(50, ge=1)


# Prompt tuning


PromptingMode = Literal["sep", "ivlp", "off"]


class SepConfig(StrictModel):
    """Where and how pretrained tokens are fused into the prompts."""

    visual_prompt_length: int = Field(4, ge=1)
    text_prompt_length: int = Field(6, ge=1)
    selection_visual: str = "activation"
    selection_text: str = "front"
    fusion: str = "tfm"
    insertion_layers: list[int] | None = None  # None: every layer 1..n_layers-1
    tfm_heads: int = Field(1, ge=1)
    learned_projections: bool = False
    visual_prompting: PromptingMode = "sep"
    text_prompting: PromptingMode = "sep"

    @model_validator(mode="after")
    def _layers_start_at_one(self) -> "SepConfig":
        if self.insertion_layers is not None and any(
            layer < 1 for layer in self.insertion_layers
        ):
            raise ValueError("insertion_layers are 1-based; every entry must be >= 1")
        return self

    def resolved_insertion_layers(self, n_layers: int) -> list[int]:
        """Validate the insertion schedule against an encoder depth."""
        if self.insertion_layers is None:
            return list(range(1, n_layers))
        bad = sorted(layer for layer in self.insertion_layers if layer >= n_layers)
        if bad:
            raise ConfigError(
                f"insertion layers {bad} need a following layer; "
                f"valid range is 1..{n_layers - 1}",
                field_paths=["sep.insertion_layers"],
            )
        return sorted(set(self.insertion_layers))


def check_prompt_lengths(
    backbone: BackboneConfig, sep: SepConfig, prefix: str = ""
) -> None:
    """Prompts must fit the templates and leave enough pretrained tokens to
    select from.

    Raises:
        ConfigError: If a prompt length does not fit the backbone.
    """
    length = sep.text_prompt_length
    needed = 2 * length + 3 if sep.text_prompting == "sep" else length + 3
    if sep.text_prompting != "off" and backbone.text_len < needed:
        raise ConfigError(
            f"text_prompt_length={length} needs text_len >= {needed}, "
            f"got {backbone.text_len}",
            field_paths=[
                f"{prefix}backbone.text_len",
                f"{prefix}sep.text_prompt_length",
            ],
        )
    length = sep.visual_prompt_length
    if sep.visual_prompting == "sep" and length > backbone.visual_tokens:
        raise ConfigError(
            f"visual_prompt_length={length} exceeds the {backbone.visual_tokens} "
            "visual tokens it selects from",
            field_paths=[
                f"{prefix}backbone.n_patches",
                f"{prefix}sep.visual_prompt_length",
            ],
        )


class LossWeights(StrictModel):
    """Weights of the consistency terms in the tuning objective."""

    omega_t: float = Field(8.0, ge=0)
    omega_v: float = Field(6.0, ge=0)
    tau: float | None = Field(None, gt=0)  # None: use the backbone temperature


class LossReport(BaseModel):
    """Scalar values of every loss term for one step."""

    ce: float
    kg_text: float
    kg_visual: float
    ce_visual: float
    total: float


class TrainConfig(StrictModel):
    lr: float = Field(2.5e-3, gt=0)
    batch_size: int = Field(16, ge=1)
    epochs: int = Field(50, ge=0)
    seeds: list[int] = Field(default_factory=lambda: [1, 2, 3], min_length=1)
    shots: int = Field(16, ge=1)


class StepMetrics(BaseModel):
    """One row of a run's metrics CSV."""

    epoch: int
    step: int
    ce: float
    kg_text: float
    kg_visual: float
    ce_visual: float
    total: float
    train_acc: float


# Synthetic data


class DomainShift(StrictModel):
    """Affine perturbation applied to patch features."""

    scale: float = 1.0
    offset: float = 0.0
    noise_inflation: float = Field(0.0, ge=0)

    @property
    def is_identity(self) -> bool:
        return self.scale == 1.0 and self.offset == 0.0 and self.noise_inflation == 0.0


class SyntheticSpec(StrictModel):
    """Class-conditional patch-feature generator."""

    n_classes: int = Field(20, ge=1)
    class_offset: int = Field(0, ge=0)
    n_patches: int = Field(16, ge=1)
    patch_dim: int = Field(8, ge=1)
    samples_per_class: int = Field(40, ge=1)
    test_per_class: int = Field(16, ge=0)
    noise_scale: float = Field(0.6, gt=0)
    prototype_norm: float = Field(3.0, gt=0)
    salient_patches: int = Field(4, ge=1)
    salient_scale: float = Field(2.0, gt=0)
    background_scale: float = Field(0.5, ge=0)
    prototype_seed: int = 0
    domain_shift: DomainShift | None = None

    @model_validator(mode="after")
    def _consistent_counts(self) -> "SyntheticSpec":
        if self.test_per_class >= self.samples_per_class:
            raise ValueError("test_per_class must leave at least one training example")
        if self.salient_patches > self.n_patches:
            raise ValueError("salient_patches cannot exceed n_patches")
        return self

    @property
    def class_ids(self) -> list[int]:
        return list(range(self.class_offset, self.class_offset + self.n_classes))


class SplitManifest(BaseModel):
    """Which classes and examples each phase may read.

    `train_ids` and `test_ids` partition every class's examples;
    `support_ids` is the k-shot subset of `train_ids` that tuning reads.
    """

    base_classes: list[int]
    new_classes: list[int] = []
    train_ids: dict[int, list[int]]
    test_ids: dict[int, list[int]]
    support_ids: dict[int, list[int]] = {}
    shots: int | None = None
    seed: int = 0

    @model_validator(mode="after")
    def _is_partition(self) -> "SplitManifest":
        if set(self.base_classes) & set(self.new_classes):
            raise ValueError("base and new classes overlap")
        for class_id, train in self.train_ids.items():
            if set(train) & set(self.test_ids.get(class_id, [])):
                raise ValueError(
                    f"class {class_id} has examples in both train and test"
                )
        for class_id, support in self.support_ids.items():
            if class_id not in self.base_classes:
                raise ValueError(
                    f"class {class_id} is not trainable but has support examples"
                )
            if not set(support) <= set(self.train_ids.get(class_id, [])):
                raise ValueError(
                    f"support examples of class {class_id} are not training examples"
                )
        return self

    def all_support_ids(self) -> list[int]:
        return sorted(i for ids in self.support_ids.values() for i in ids)

    def test_ids_for(self, classes: list[int]) -> list[int]:
        return sorted(i for c in classes for i in self.test_ids.get(c, []))


class TargetDatasetConfig(StrictModel):
    """A cross-dataset transfer target with its own class set."""

    name: str
    path: Path
    seed: int
    class_offset: int = Field(ge=0)
    n_classes: int = Field(10, ge=1)
    prototype_seed: int = 1


class ShiftVariantConfig(StrictModel):
    """A domain-shifted copy of the benchmark."""

    name: str
    path: Path
    shift: DomainShift
    seed: int = 0


class DataConfig(StrictModel):
    spec: SyntheticSpec = Field(default_factory=SyntheticSpec)
    benchmark: Path = Path("data/benchmark.sepdata")
    benchmark_seed: int = 1
    pretrain_corpus: Path = Path("data/pretrain.sepdata")
    pretrain_seed: int = 100
    pretrain_samples_per_class: int = Field(40, ge=2)
    targets: list[TargetDatasetConfig] = []
    shifts: list[ShiftVariantConfig] = []


FEW_SHOT_DEFAULT = 4


class SplitConfig(StrictModel):
    protocol: Literal["base-to-new", "all-classes"] = "base-to-new"
    fraction: float = Field(0.5, gt=0, lt=1)
    seed: int = 1
    shots: int | None = Field(None, ge=1)  # None: 4 for all-classes, else train.shots

    def resolved_shots(self, train_shots: int) -> int:
        if self.shots is not None:
            return self.shots
        return FEW_SHOT_DEFAULT if self.protocol == "all-classes" else train_shots


class EvalConfig(StrictModel):
    prompts_dir: Path | None = None  # None: evaluate the frozen backbone zero-shot


class GradCheckConfig(StrictModel):
    """Toy instance for the full-objective finite-difference audit."""

    backbone: BackboneConfig = Field(
        default_factory=lambda: BackboneConfig(
            d_model=8,
            n_layers=2,
            n_heads=2,
            n_patches=3,
            patch_dim=4,
            text_len=8,
            vocab_size=16,
            d_joint=8,
        )
    )
    sep: SepConfig = Field(
        default_factory=lambda: SepConfig(visual_prompt_length=2, text_prompt_length=2)
    )
    n_classes: int = Field(2, ge=2)
    batch_size: int = Field(2, ge=1)
    step: float = Field(1e-5, gt=0)
    tolerance: float = Field(1e-4, gt=0)
    seed: int = 0

    @model_validator(mode="after")
    def _prompts_fit(self) -> "GradCheckConfig":
        check_prompt_lengths(self.backbone, self.sep, prefix="gradcheck.")
        return self


class RunConfig(StrictModel):
    """Everything one command needs; written verbatim into every run directory."""

    version: Literal[1]
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    checkpoint: Path = Path("artifacts/backbone.sepckpt")
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    sep: SepConfig = Field(default_factory=SepConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    weights: LossWeights = Field(default_factory=LossWeights)
    data: DataConfig = Field(default_factory=DataConfig)
    split: SplitConfig = Field(default_factory=SplitConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    gradcheck: GradCheckConfig = Field(default_factory=GradCheckConfig)
    output_dir: Path | None = None  # None: SEPLAB_RUNS_DIR

    @model_validator(mode="after")
    def _prompts_fit(self) -> "RunConfig":
        check_prompt_lengths(self.backbone, self.sep)
        return self

    def fingerprint(self) -> str:
        """Short stable hash of the resolved configuration."""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]

    def with_overrides(self, overrides: dict[str, dict[str, Any]]) -> "RunConfig":
        """Return a validated copy with section-level field overrides applied."""
        payload = self.model_dump(mode="json")
        for section, fields in overrides.items():
            if section not in payload or not isinstance(payload[section], dict):
                raise ValueError(f"unknown config section '{section}'")
            payload[section].update(fields)
        return RunConfig.model_validate(payload)


# Reports


class SeedResult(BaseModel):
    seed: int
    base_acc: float = Field(ge=0, le=100)
    new_acc: float = Field(ge=0, le=100)
    h: float = Field(ge=0, le=100)
    runtime_s: float = 0.0


class EvalReport(BaseModel):
    """Base/new accuracy and harmonic mean, averaged over seeds."""

    key: str
    base_acc: float = Field(ge=0, le=100)
    new_acc: float = Field(ge=0, le=100)
    h: float = Field(ge=0, le=100)
    per_seed: list[SeedResult] = []
    config_fingerprint: str = ""
    runtime_s: float = 0.0

    @model_validator(mode="after")
    def _h_is_harmonic(self) -> "EvalReport":
        total = self.base_acc + self.new_acc
        expected = 0.0 if total == 0 else 2 * self.base_acc * self.new_acc / total
        if abs(expected - self.h) > 1e-9:
            raise ValueError(
                f"h={self.h} is not the harmonic mean of base/new ({expected})"
            )
        return self


class TargetAccuracy(BaseModel):
    name: str
    seed: int
    accuracy: float = Field(ge=0, le=100)


class TransferReport(BaseModel):
    """Per-target accuracies for cross-dataset, domain-shift and few-shot modes."""

    mode: str
    key: str
    rows: list[TargetAccuracy] = []
    per_target: dict[str, float] = {}
    average: float = 0.0
    config_fingerprint: str = ""


class ParameterCheck(BaseModel):
    name: str
    shape: list[int]
    rel_error: float
    max_abs_error: float


class GradCheckReport(BaseModel):
    checks: list[ParameterCheck]
    frozen_without_grad: bool
    tolerance: float

    @property
    def worst(self) -> ParameterCheck | None:
        return max(self.checks, key=lambda c: c.rel_error, default=None)

    @property
    def max_rel_error(self) -> float:
        worst = self.worst
        return 0.0 if worst is None else worst.rel_error

    @property
    def passed(self) -> bool:
        return self.frozen_without_grad and self.max_rel_error <= self.tolerance


class AblationCell(StrictModel):
    """One grid cell: section-level overrides of the base run config."""

    key: str
    overrides: dict[str, dict[str, Any]] = {}


class AblationGrid(StrictModel):
    name: str
    cells: list[AblationCell]


class AblationGridFile(StrictModel):
    version: Literal[1] = 1
    grids: list[AblationGrid]


class CellReport(BaseModel):
    grid: str
    key: str
    status: Literal["ok", "failed"]
    error: str | None = None
    report: EvalReport | None = None
    dataset_checksum: str = ""
    delta: list[dict[str, Any]] = []


class RunMetadata(BaseModel):
    command: str
    run_id: str
    seeds: list[int] = []
    config_fingerprint: str
    started_at: str
    wall_time_s: float = 0.0
    outputs: list[str] = []
