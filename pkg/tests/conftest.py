"""Shared fixtures: a tiny frozen backbone and a tiny synthetic benchmark."""

import hashlib
from pathlib import Path

import numpy as np
import pytest

from backbone import BackboneParams, MiniClip, save_checkpoint
from models import BackboneConfig, RunConfig, SepConfig, SyntheticSpec
from synth.dataset import generate_dataset, save_dataset

GOLDEN_DIR = Path(__file__).parent / "data" / "golden"


@pytest.fixture
def backbone_config() -> BackboneConfig:
    return BackboneConfig(
        d_model=8,
        n_layers=2,
        n_heads=2,
        n_patches=3,
        patch_dim=4,
        text_len=10,
        vocab_size=24,
        d_joint=8,
    )


@pytest.fixture
def frozen_clip(backbone_config) -> MiniClip:
    params = BackboneParams.initialize(backbone_config, rng=np.random.default_rng(0))
    return MiniClip(params.freeze())


@pytest.fixture
def sep_config() -> SepConfig:
    return SepConfig(visual_prompt_length=2, text_prompt_length=2)


@pytest.fixture
def synthetic_spec() -> SyntheticSpec:
    return SyntheticSpec(
        n_classes=4,
        n_patches=3,
        patch_dim=4,
        samples_per_class=8,
        test_per_class=3,
        salient_patches=2,
    )


@pytest.fixture
def dataset(synthetic_spec):
    return generate_dataset(synthetic_spec, seed=1)


@pytest.fixture
def run_config(tmp_path, backbone_config, sep_config, synthetic_spec) -> RunConfig:
    """A complete run config whose artifacts live under `tmp_path`."""
    return RunConfig.model_validate(
        {
            "version": 1,
            "backbone": backbone_config.model_dump(),
            "checkpoint": str(tmp_path / "backbone.sepckpt"),
            "pretrain": {"steps": 3, "batch_size": 4},
            "sep": sep_config.model_dump(),
            "train": {"epochs": 2, "batch_size": 4, "seeds": [1], "shots": 2},
            "data": {
                "spec": synthetic_spec.model_dump(),
                "benchmark": str(tmp_path / "benchmark.sepdata"),
                "pretrain_corpus": str(tmp_path / "pretrain.sepdata"),
                "pretrain_samples_per_class": 4,
            },
            "output_dir": str(tmp_path / "runs"),
        }
    )


@pytest.fixture
def artifacts(run_config, frozen_clip, dataset) -> RunConfig:
    """`run_config` with its checkpoint and benchmark written to disk."""
    save_checkpoint(frozen_clip.params, run_config.checkpoint)
    save_dataset(dataset, run_config.data.benchmark)
    return run_config


@pytest.fixture
def golden():
    """Compare an array with the digest recorded in `data/golden/<name>.sha256`.

    The first run on a new tree records the digest; later runs must match it.
    Values are compared after rounding to 6 decimals.
    """

    def check(name: str, array: np.ndarray) -> None:
        rounded = np.round(np.asarray(array, dtype=np.float64), 6) + 0.0
        digest = hashlib.sha256(str(rounded.shape).encode())
        digest.update(rounded.tobytes())
        path = GOLDEN_DIR / f"{name}.sha256"
        if not path.is_file():
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(f"{digest.hexdigest()}\n")
        assert path.read_text().strip() == digest.hexdigest(), f"{name} drifted"

    return check
