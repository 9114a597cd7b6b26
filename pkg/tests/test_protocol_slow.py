"""Desk-scale check of the base-to-new protocol on the shipped benchmark config.

Pretrains the 20-class backbone and tunes three seeds per method, so it takes
minutes rather than seconds: run it with `pdm run test-slow`.
"""

from pathlib import Path

import pytest

from evaluation.protocols import (
    Classifier,
    base_to_new_eval,
    make_split,
    seed_average,
    tune_and_evaluate,
)
from runs import load_run_config
from seplab import _load_backbone, main
from synth import load_dataset

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).parent.parent / "configs"


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    root = tmp_path_factory.mktemp("protocol")
    config = load_run_config(CONFIGS / "default.yaml").model_copy(
        update={"checkpoint": root / "backbone.sepckpt"}
    )
    config = config.with_overrides(
        {
            "data": {
                "benchmark": str(root / "benchmark.sepdata"),
                "pretrain_corpus": str(root / "pretrain.sepdata"),
                "targets": [],
                "shifts": [],
            }
        }
    )
    path = root / "run.yaml"
    path.write_text(config.model_dump_json())
    for command in ("synth", "pretrain"):
        assert main([command, "--config", str(path), "--out", str(root / "runs")]) == 0
    return config, _load_backbone(config), load_dataset(config.data.benchmark)


@pytest.fixture(scope="module")
def tuned(prepared):
    """Seed-averaged reports of SEP and IVLP prompting on both encoders."""
    base, clip, dataset = prepared
    reports = {}
    for prompting in ("sep", "ivlp"):
        config = base.with_overrides(
            {"sep": {"visual_prompting": prompting, "text_prompting": prompting}}
        )
        results = [
            tune_and_evaluate(config, clip, dataset, seed)[0]
            for seed in config.train.seeds
        ]
        reports[prompting] = seed_average(prompting, results)
    return reports


def test_tuning_beats_zero_shot_on_base_classes(prepared, tuned):
    config, clip, dataset = prepared
    zero_shot = seed_average(
        "zero-shot",
        [
            base_to_new_eval(
                Classifier(clip, config.sep),
                dataset,
                make_split(config, dataset, seed),
                seed,
            )
            for seed in config.train.seeds
        ],
    )
    assert tuned["sep"].base_acc >= zero_shot.base_acc + 5.0


def test_self_enhancement_does_not_hurt_harmonic_mean(tuned):
    assert tuned["sep"].h >= tuned["ivlp"].h
