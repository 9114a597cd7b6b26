import csv
import json
from pathlib import Path

import pytest
import yaml

from errors import ConfigError
from evaluation.ablation import default_ablation_grids, rescale_layers, resolve_cell
from graph import build_ablation_graph
from graph.delta import compute_config_delta
from models import AblationCell, AblationGrid, AblationGridFile

PUBLISHED = yaml.safe_load(
    (Path(__file__).parent / "data" / "ablations.yaml").read_text()
)


class TestGrids:
    def test_default_grids(self):
        grids = {g.name: g for g in default_ablation_grids(12).grids}
        assert list(grids) == [
            "prompting", "insertion", "selection", "fusion", "multimodal", "omega_v"
        ]
        keys = [c.key for c in grids["omega_v"].cells]
        assert keys == ["0", "2", "4", "6", "8", "10"]

    @pytest.mark.parametrize(
        "name", ["prompting", "insertion", "selection", "fusion", "multimodal"]
    )
    def test_cells_mirror_published_tables(self, name):
        grids = {g.name: g for g in default_ablation_grids(12).grids}
        assert [c.key for c in grids[name].cells] == list(PUBLISHED[name])

    def test_reference_depth_keeps_layers(self):
        assert rescale_layers((2, 4, 6, 8, 10), 12) == [2, 4, 6, 8, 10]

    def test_rescaled_layers_stay_inside_the_tower(self):
        assert rescale_layers((4, 8, 10), 6) == [2, 4, 5]
        assert rescale_layers((10,), 2) == [1]
        assert rescale_layers((4,), 1) == []

    def test_every_default_cell_resolves(self, run_config):
        deep = run_config.with_overrides({"backbone": {"n_layers": 6}})
        for grid in default_ablation_grids(6).grids:
            for cell in grid.cells:
                resolve_cell(deep, cell)

    @pytest.mark.parametrize(
        "overrides",
        [
            {"sep": {"fusion": "unknown"}},
            {"sep": {"insertion_layers": [5]}},
            {"sep": {"no_such_field": 1}},
            {"no_such_section": {"x": 1}},
            {"weights": {"omega_v": -1}},
        ],
    )
    def test_invalid_cells(self, run_config, overrides):
        with pytest.raises(ConfigError):
            resolve_cell(run_config, AblationCell(key="bad", overrides=overrides))


def test_config_delta_lists_changed_leaves():
    base = {"sep": {"fusion": "tfm", "heads": 1}, "seed": 1}
    cell = {"sep": {"fusion": "add", "heads": 1}, "seed": 1}
    assert compute_config_delta(base, cell) == [
        {"field": "sep.fusion", "base": "tfm", "cell": "add"}
    ]


class TestWorkflow:
    @pytest.fixture
    def result(self, tmp_path, artifacts):
        grids = AblationGridFile(
            grids=[
                AblationGrid(
                    name="fusion",
                    cells=[
                        AblationCell(key="add", overrides={"sep": {"fusion": "add"}}),
                        AblationCell(
                            key="broken", overrides={"sep": {"fusion": "nope"}}
                        ),
                        AblationCell(key="tfm", overrides={"sep": {"fusion": "tfm"}}),
                    ],
                )
            ]
        )
        config = artifacts.with_overrides({"train": {"epochs": 1}})
        out = tmp_path / "ablation"
        state = {
            "run_config": config,
            "grids": grids,
            "checkpoint": str(config.checkpoint),
            "dataset": str(config.data.benchmark),
            "output_dir": str(out),
            "dataset_checksum": "",
            "cell_order": [],
            "pending": [],
            "reports": [],
            "tables_saved": False,
        }
        values = build_ablation_graph().invoke(
            state, config={"configurable": {"thread_id": "test"}}
        )
        return values, out

    def test_invalid_cell_fails_alone(self, result):
        values, _ = result
        status = {r.key: r.status for r in values["reports"]}
        assert status == {"add": "ok", "broken": "failed", "tfm": "ok"}
        assert values["tables_saved"]

    def test_cells_share_dataset_checksum(self, result):
        values, _ = result
        checksums = {r.dataset_checksum for r in values["reports"] if r.status == "ok"}
        assert checksums == {values["dataset_checksum"]}

    def test_cell_delta_names_changed_field(self, result):
        values, _ = result
        add = next(r for r in values["reports"] if r.key == "add")
        assert add.delta == [{"field": "sep.fusion", "base": "tfm", "cell": "add"}]

    def test_tables_follow_grid_order(self, result):
        _, out = result
        with (out / "ablation.csv").open() as handle:
            rows = list(csv.DictReader(handle))
        assert [row["key"] for row in rows] == ["add", "broken", "tfm"]
        assert rows[1]["status"] == "failed"
        summary = json.loads((out / "ablation_summary.json").read_text())
        assert [cell["key"] for cell in summary] == ["add", "broken", "tfm"]
