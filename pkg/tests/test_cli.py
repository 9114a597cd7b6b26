import csv
import json
from pathlib import Path

import pytest
import yaml

from errors import ArtifactError, ConfigError
from runs import RunDirectory, load_run_config
from sep import load_prompts
from seplab import main
from synth import base_new_split

CONFIGS = Path(__file__).parent.parent / "configs"


def write_config(path: Path, config) -> Path:
    path.write_text(yaml.safe_dump(config.model_dump(mode="json")))
    return path


def only_run(out: Path, command: str) -> Path:
    runs = sorted(out.glob(f"{command}_*"))
    assert len(runs) == 1
    return runs[0]


class TestConfigFiles:
    @pytest.mark.parametrize(
        "name", ["default.yaml", "gradcheck.yaml", "few_shot.yaml"]
    )
    def test_shipped_configs_validate(self, name):
        assert load_run_config(CONFIGS / name).version == 1

    def test_unknown_key_names_its_path(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("version: 1\nsep:\n  fusoin: tfm\n")
        with pytest.raises(ConfigError) as info:
            load_run_config(path)
        assert info.value.field_paths == ["sep.fusoin"]
        assert info.value.exit_code == 2

    def test_version_is_required(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"sep": {}}')
        with pytest.raises(ConfigError) as info:
            load_run_config(path)
        assert "version" in info.value.field_paths

    def test_text_prompt_must_leave_pretrained_tokens(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("version: 1\nbackbone:\n  text_len: 12\n")
        with pytest.raises(ConfigError) as info:
            load_run_config(path)
        assert "backbone.text_len" in info.value.field_paths

    def test_per_layer_text_prompts_only_need_the_template(self, tmp_path):
        path = tmp_path / "ivlp.yaml"
        path.write_text(
            "version: 1\nbackbone:\n  text_len: 12\nsep:\n  text_prompting: ivlp\n"
        )
        assert load_run_config(path).backbone.text_len == 12

    def test_visual_prompt_longer_than_the_image_sequence(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("version: 1\nsep:\n  visual_prompt_length: 18\n")
        with pytest.raises(ConfigError) as info:
            load_run_config(path)
        assert "sep.visual_prompt_length" in info.value.field_paths

    def test_few_shot_split_takes_shots(self):
        config = load_run_config(CONFIGS / "few_shot.yaml")
        assert config.split.shots == 4

    def test_missing_file(self, tmp_path):
        with pytest.raises(ArtifactError):
            load_run_config(tmp_path / "absent.yaml")


def test_run_directory_is_self_describing(tmp_path, run_config):
    run = RunDirectory.create("tune", run_config, tmp_path)
    run.write_json("extra.json", {"a": 1})
    metadata = run.finish([1, 2])
    assert load_run_config(run.path / "config.json") == run_config
    saved = json.loads((run.path / "metadata.json").read_text())
    assert saved["config_fingerprint"] == run_config.fingerprint()
    assert metadata.config_fingerprint == run_config.fingerprint()
    assert saved["outputs"] == ["extra.json"]
    second = RunDirectory.create("tune", run_config, tmp_path)
    assert second.path != run.path


def seplab(command: str, config: Path, out: Path, *extra: str) -> int:
    return main([command, "--config", str(config), "--out", str(out), *extra])


class TestCommands:
    def test_gradcheck_passes_on_shipped_toy(self, tmp_path):
        assert seplab("gradcheck", CONFIGS / "gradcheck.yaml", tmp_path) == 0
        report_path = only_run(tmp_path, "gradcheck") / "gradcheck.json"
        report = json.loads(report_path.read_text())
        assert report["frozen_without_grad"]
        assert max(c["rel_error"] for c in report["checks"]) <= 1e-4

    def test_config_error_exit_code(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("version: 1\nbogus: true\n")
        assert seplab("tune", path, tmp_path) == 2

    def test_missing_checkpoint_exit_code(self, tmp_path, run_config):
        path = write_config(tmp_path / "run.yaml", run_config)
        assert seplab("tune", path, tmp_path / "out") == 3

    def test_seed_flag_overrides_config(self, tmp_path, artifacts):
        path = write_config(tmp_path / "run.yaml", artifacts)
        out = tmp_path / "out"
        assert seplab("tune", path, out, "--seed", "7") == 0
        run = only_run(out, "tune")
        assert (run / "prompts_seed7.sepprompts").is_file()
        assert json.loads((run / "metadata.json").read_text())["seeds"] == [7]

    def test_pipeline_is_reproducible(self, tmp_path, run_config):
        path = write_config(tmp_path / "run.yaml", run_config)
        out = tmp_path / "out"
        assert seplab("synth", path, out) == 0
        assert seplab("pretrain", path, out) == 0
        assert run_config.checkpoint.is_file()

        metrics = []
        for attempt in ("first", "second"):
            assert seplab("tune", path, out / attempt) == 0
            metrics.append(only_run(out / attempt, "tune") / "metrics_seed1.csv")
        assert metrics[0].read_bytes() == metrics[1].read_bytes()

        tuned = run_config.with_overrides(
            {"eval": {"prompts_dir": str(metrics[0].parent)}}
        )
        eval_path = write_config(tmp_path / "eval.yaml", tuned)
        tables = []
        for attempt in ("eval_first", "eval_second"):
            assert seplab("eval", eval_path, out / attempt) == 0
            run = only_run(out / attempt, "eval")
            tables.append((run / "eval_base-to-new.csv").read_bytes())
        assert tables[0] == tables[1]

    def test_zero_shot_few_shot_eval(self, tmp_path, artifacts):
        path = write_config(tmp_path / "run.yaml", artifacts)
        assert seplab("eval", path, tmp_path, "--mode", "few-shot") == 0
        report_path = only_run(tmp_path, "eval") / "eval_few-shot.json"
        report = json.loads(report_path.read_text())
        assert report["key"] == "zero-shot"
        assert list(report["per_target"]) == ["all-classes"]

    def test_cross_dataset_without_targets(self, tmp_path, artifacts):
        path = write_config(tmp_path / "run.yaml", artifacts)
        assert seplab("eval", path, tmp_path, "--mode", "cross-dataset") == 2


class TestEvalSplit:
    @pytest.fixture
    def tuned(self, tmp_path, artifacts):
        """Prompts tuned under `artifacts`' split, and the tune run directory."""
        path = write_config(tmp_path / "run.yaml", artifacts)
        assert seplab("tune", path, tmp_path / "tune") == 0
        return only_run(tmp_path / "tune", "tune")

    def eval_config(self, tmp_path, artifacts, tuned, split: dict) -> Path:
        config = artifacts.with_overrides(
            {"eval": {"prompts_dir": str(tuned)}, "split": split}
        )
        return write_config(tmp_path / "eval.yaml", config)

    def test_header_records_the_tuned_split(self, tuned):
        _, _, header = load_prompts(tuned / "prompts_seed1.sepprompts")
        manifest = json.loads((tuned / "split_seed1.json").read_text())
        assert header["base_classes"] == manifest["base_classes"]
        assert header["new_classes"] == manifest["new_classes"]
        assert header["split"]["seed"] == 1

    def test_eval_scores_the_tuned_classes(self, tmp_path, artifacts, tuned):
        path = self.eval_config(tmp_path, artifacts, tuned, {})
        assert seplab("eval", path, tmp_path / "eval") == 0
        table = only_run(tmp_path / "eval", "eval") / "eval_base-to-new.csv"
        rows = list(csv.DictReader(table.read_text().splitlines()))
        assert list(rows[0]) == ["key", "seed", "base", "new", "h"]
        assert rows[0]["key"] == str(tuned)

    def test_other_split_seed_is_rejected(self, tmp_path, artifacts, dataset, tuned):
        trained = base_new_split(dataset, 0.5, seed=1).base_classes
        other = next(
            seed
            for seed in range(2, 50)
            if base_new_split(dataset, 0.5, seed=seed).base_classes != trained
        )
        path = self.eval_config(tmp_path, artifacts, tuned, {"seed": other})
        assert seplab("eval", path, tmp_path / "eval") == 2
        assert not list((tmp_path / "eval").glob("eval_*/eval_base-to-new.csv"))

    def test_missing_split_manifest(self, tmp_path, artifacts, tuned):
        (tuned / "split_seed1.json").unlink()
        path = self.eval_config(tmp_path, artifacts, tuned, {})
        assert seplab("eval", path, tmp_path / "eval") == 3
