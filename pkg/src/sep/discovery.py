"""Strategy discovery via Python entry points.

Built-in strategies are always available; installed packages can add more
(or override a built-in) by registering entry points.
"""

from importlib.metadata import entry_points
from typing import TYPE_CHECKING

from errors import ConfigError

if TYPE_CHECKING:
    from models import SepConfig
    from sep.protocols import FusionStrategy, SelectionStrategy


def _builtin_selections() -> dict[str, type]:
    from sep.selection import ActivationSelection, FrontSelection

    return {"activation": ActivationSelection, "front": FrontSelection}


def _builtin_fusions() -> dict[str, type]:
    from sep.fusion import AddFusion, MlpFusion, TokenFusion

    return {"add": AddFusion, "mlp": MlpFusion, "tfm": TokenFusion}


def discover_selections() -> dict[str, type]:
    """Discover all selection strategies.

    Returns:
        A dictionary mapping strategy names to their classes.
    """
    eps = entry_points(group="seplab.selections")
    return {**_builtin_selections(), **{ep.name: ep.load() for ep in eps}}


def discover_fusions() -> dict[str, type]:
    """Discover all fusion strategies.

    Returns:
        A dictionary mapping strategy names to their classes.
    """
    eps = entry_points(group="seplab.fusions")
    return {**_builtin_fusions(), **{ep.name: ep.load() for ep in eps}}


def get_selection(name: str) -> "SelectionStrategy":
    """Get a selection strategy instance by name.

    Raises:
        ConfigError: If the name is not registered.
    """
    selections = discover_selections()
    if name not in selections:
        available = ", ".join(sorted(selections.keys())) or "(none)"
        raise ConfigError(
            f"Unknown selection '{name}'. Available: {available}",
            field_paths=["sep.selection_visual", "sep.selection_text"],
        )
    return selections[name]()


def get_fusion(name: str, config: "SepConfig") -> "FusionStrategy":
    """Get a fusion strategy instance by name, configured from `config`.

    Raises:
        ConfigError: If the name is not registered.
    """
    fusions = discover_fusions()
    if name not in fusions:
        available = ", ".join(sorted(fusions.keys())) or "(none)"
        raise ConfigError(
            f"Unknown fusion '{name}'. Available: {available}",
            field_paths=["sep.fusion"],
        )
    return fusions[name](config)


def list_selections() -> list[str]:
    return sorted(discover_selections().keys())


def list_fusions() -> list[str]:
    return sorted(discover_fusions().keys())
