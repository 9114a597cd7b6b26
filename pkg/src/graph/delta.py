"""Delta computation between a base config and an ablation cell."""

from typing import Any


def _flatten(value: Any, prefix: str = "") -> dict[str, Any]:
    if isinstance(value, dict):
        flat = {}
        for key, item in value.items():
            flat.update(_flatten(item, f"{prefix}.{key}" if prefix else str(key)))
        return flat
    return {prefix: value}


def compute_config_delta(base: dict, cell: dict) -> list[dict]:
    """List the fields a cell changes relative to the base config.

    Returns a list of dicts with "field", "base" and "cell" keys, ordered by
    field path. Returns empty list if the configs are identical.
    """
    if base == cell:
        return []

    flat_base, flat_cell = _flatten(base), _flatten(cell)
    deltas = []
    for path in sorted(flat_base.keys() | flat_cell.keys()):
        before, after = flat_base.get(path), flat_cell.get(path)
        if before != after:
            deltas.append({"field": path, "base": before, "cell": after})
    return deltas
