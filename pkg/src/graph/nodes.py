"""Node functions for the ablation graph."""

import csv
import time
from functools import lru_cache
from pathlib import Path
from typing import Literal

import structlog
from langgraph.types import Send

from backbone.checkpoint import load_checkpoint
from backbone.clip import MiniClip
from errors import ConfigError, SeplabError
from evaluation.ablation import resolve_cell
from evaluation.protocols import seed_average, tune_and_evaluate
from graph.delta import compute_config_delta
from graph.state import AblationState, CellTask
from models import CellReport
from synth.dataset import SyntheticDataset, file_checksum, load_dataset

log = structlog.get_logger(__name__)

TABLE_COLUMNS = [
    "grid",
    "key",
    "status",
    "seed",
    "base",
    "new",
    "h",
    "runtime_s",
    "dataset_checksum",
]


@lru_cache(maxsize=4)
def _backbone(path: str) -> MiniClip:
    params = load_checkpoint(Path(path))
    return MiniClip(params if params.frozen else params.freeze())


@lru_cache(maxsize=4)
def _dataset(path: str) -> SyntheticDataset:
    return load_dataset(Path(path))


def load_grids_node(state: AblationState) -> dict:
    """Validate every cell; invalid cells become failed reports up front."""
    base = state["run_config"]
    checksum = file_checksum(Path(state["dataset"]))
    base_dump = base.model_dump(mode="json")

    order, pending, failed = [], [], []
    for grid in state["grids"].grids:
        for cell in grid.cells:
            order.append(f"{grid.name}/{cell.key}")
            try:
                config = resolve_cell(base, cell)
            except ConfigError as e:
                log.warning("cell_invalid", grid=grid.name, key=cell.key, error=str(e))
                report = CellReport(
                    grid=grid.name, key=cell.key, status="failed", error=str(e)
                )
                failed.append(report)
                continue
            pending.append(
                CellTask(
                    run_config=config,
                    grid=grid.name,
                    key=cell.key,
                    checkpoint=state["checkpoint"],
                    dataset=state["dataset"],
                    dataset_checksum=checksum,
                    delta=compute_config_delta(
                        base_dump, config.model_dump(mode="json")
                    ),
                )
            )

    log.info("grids_loaded", cells=len(order), valid=len(pending), invalid=len(failed))
    return {
        "dataset_checksum": checksum,
        "cell_order": order,
        "pending": pending,
        "reports": failed,
    }


def fan_out_cells(state: AblationState) -> list[Send] | Literal["save_tables"]:
    """One `run_cell` branch per valid cell."""
    if not state["pending"]:
        return "save_tables"
    return [Send("run_cell", task) for task in state["pending"]]


def run_cell_node(task: CellTask) -> dict:
    """Tune and evaluate one cell on every configured seed."""
    config = task["run_config"]
    grid, key = task["grid"], task["key"]
    log.info("running_cell", grid=grid, key=key, delta=task["delta"])
    started = time.perf_counter()
    try:
        checksum = file_checksum(Path(task["dataset"]))
        clip = _backbone(task["checkpoint"])
        dataset = _dataset(task["dataset"])
        results = [
            tune_and_evaluate(config, clip, dataset, seed)[0]
            for seed in config.train.seeds
        ]
    except SeplabError as e:
        log.warning("cell_failed", grid=grid, key=key, error=str(e))
        report = CellReport(
            grid=grid,
            key=key,
            status="failed",
            error=str(e),
            dataset_checksum=task["dataset_checksum"],
            delta=task["delta"],
        )
        return {"reports": [report]}

    report = CellReport(
        grid=grid,
        key=key,
        status="ok",
        report=seed_average(
            key, results, config.fingerprint(), runtime_s=time.perf_counter() - started
        ),
        dataset_checksum=checksum,
        delta=task["delta"],
    )
    log.info(
        "cell_complete",
        grid=grid,
        key=key,
        base=report.report.base_acc,
        new=report.report.new_acc,
        h=report.report.h,
    )
    return {"reports": [report]}


def ordered_reports(state: AblationState) -> list[CellReport]:
    """Reports in grid-file order, whatever order the branches finished in."""
    rank = {name: i for i, name in enumerate(state["cell_order"])}
    return sorted(
        state["reports"], key=lambda r: rank.get(f"{r.grid}/{r.key}", len(rank))
    )


def save_tables_node(state: AblationState) -> dict:
    """Write the per-seed CSV and the JSON summary (idempotent)."""
    if state["tables_saved"]:
        return {}

    output_dir = Path(state["output_dir"])
    output_dir.mkdir(parents=True, exist_ok=True)
    reports = ordered_reports(state)

    table_path = output_dir / "ablation.csv"
    with table_path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        for cell in reports:
            row = {"grid": cell.grid, "key": cell.key, "status": cell.status}
            if cell.report is None:
                writer.writerow({**row, "dataset_checksum": cell.dataset_checksum})
                continue
            for result in cell.report.per_seed:
                writer.writerow(
                    {
                        **row,
                        "seed": result.seed,
                        "base": f"{result.base_acc:.2f}",
                        "new": f"{result.new_acc:.2f}",
                        "h": f"{result.h:.2f}",
                        "runtime_s": f"{result.runtime_s:.3f}",
                        "dataset_checksum": cell.dataset_checksum,
                    }
                )
    log.info("table_saved", path=str(table_path), cells=len(reports))

    summary_path = output_dir / "ablation_summary.json"
    summary_path.write_text(
        "[\n" + ",\n".join(r.model_dump_json(indent=2) for r in reports) + "\n]\n"
    )
    log.info("summary_saved", path=str(summary_path))

    return {"tables_saved": True}
