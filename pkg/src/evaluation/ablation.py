"""Default ablation grids and per-cell config resolution."""

import math

import structlog
from pydantic import ValidationError

from errors import ConfigError
from models import AblationCell, AblationGrid, AblationGridFile, RunConfig
from runs import config_error
from sep.discovery import get_fusion, get_selection

log = structlog.get_logger(__name__)

REFERENCE_DEPTH = 12

# Insertion sets studied on a 12-layer encoder; None means every layer.
REFERENCE_LAYER_SETS: list[tuple[int, ...] | None] = [
    (4,),
    (8,),
    (10,),
    (4, 8),
    (4, 8, 10),
    (3, 6, 9),
    (2, 4, 6, 8, 10),
    None,
]

OMEGA_V_SWEEP = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0]


def rescale_layers(layers: tuple[int, ...], depth: int) -> list[int]:
    """Map 12-layer insertion indices onto `depth` layers, keeping their
    relative position and staying inside 1..depth-1."""
    if depth < 2:
        return []
    scaled = {
        min(max(math.floor(layer * depth / REFERENCE_DEPTH + 0.5), 1), depth - 1)
        for layer in layers
    }
    return sorted(scaled)


def _modes(visual: str, text: str) -> dict[str, dict]:
    return {"sep": {"visual_prompting": visual, "text_prompting": text}}


def default_ablation_grids(depth: int) -> AblationGridFile:
    """Prompting mode per encoder, insertion layers, selection, fusion, modality
    on/off and the visual-consistency weight sweep."""
    modality = AblationGrid(
        name="prompting",
        cells=[
            AblationCell(key=f"{v}/{t}", overrides=_modes(v, t))
            for v, t in [
                ("ivlp", "ivlp"),
                ("ivlp", "sep"),
                ("sep", "ivlp"),
                ("sep", "sep"),
            ]
        ],
    )

    layer_cells = []
    for layers in REFERENCE_LAYER_SETS:
        if layers is None:
            key, resolved = "all", None
        else:
            key, resolved = "+".join(map(str, layers)), rescale_layers(layers, depth)
        overrides = {"sep": {"insertion_layers": resolved}}
        layer_cells.append(AblationCell(key=key, overrides=overrides))
    insertion = AblationGrid(name="insertion", cells=layer_cells)

    selection = AblationGrid(
        name="selection",
        cells=[
            AblationCell(
                key=f"{v}/{t}",
                overrides={"sep": {"selection_visual": v, "selection_text": t}},
            )
            for v, t in [
                ("activation", "front"),
                ("front", "front"),
                ("front", "activation"),
                ("activation", "activation"),
            ]
        ],
    )

    fusion = AblationGrid(
        name="fusion",
        cells=[
            AblationCell(key=name, overrides={"sep": {"fusion": name}})
            for name in ("add", "mlp", "tfm")
        ],
    )

    multimodal = AblationGrid(
        name="multimodal",
        cells=[
            AblationCell(key=f"{v}/{t}", overrides=_modes(v, t))
            for v, t in [("off", "off"), ("off", "sep"), ("sep", "off"), ("sep", "sep")]
        ],
    )

    omega = AblationGrid(
        name="omega_v",
        cells=[
            AblationCell(key=f"{w:g}", overrides={"weights": {"omega_v": w}})
            for w in OMEGA_V_SWEEP
        ],
    )
    return AblationGridFile(
        grids=[modality, insertion, selection, fusion, multimodal, omega]
    )


def resolve_cell(base: RunConfig, cell: AblationCell) -> RunConfig:
    """Apply a cell's overrides and validate the result end to end.

    Raises:
        ConfigError: If the overrides name unknown sections or fields, fail
            schema validation, or describe an impossible insertion schedule.
    """
    try:
        config = base.with_overrides(cell.overrides)
    except ValidationError as e:
        raise config_error(e) from e
    except ValueError as e:
        raise ConfigError(str(e), field_paths=sorted(cell.overrides)) from e
    config.sep.resolved_insertion_layers(config.backbone.n_layers)

    get_selection(config.sep.selection_visual)
    get_selection(config.sep.selection_text)
    get_fusion(config.sep.fusion, config.sep)
    return config
