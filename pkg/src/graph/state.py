"""State schema for the ablation graph."""

import operator
from typing import Annotated

from typing_extensions import TypedDict

from models import AblationGridFile, CellReport, RunConfig


class AblationState(TypedDict):
    """State for the ablation graph."""

    run_config: RunConfig
    grids: AblationGridFile
    checkpoint: str
    dataset: str
    output_dir: str
    dataset_checksum: str
    cell_order: list[str]  # "grid/key" in grid-file order
    pending: list["CellTask"]  # valid cells still to run
    reports: Annotated[list[CellReport], operator.add]  # Reducer for append
    tables_saved: bool


class CellTask(TypedDict):
    """Payload sent to one `run_cell` invocation."""

    run_config: RunConfig
    grid: str
    key: str
    checkpoint: str
    dataset: str
    dataset_checksum: str
    delta: list[dict]
