"""Config loading and run-directory bookkeeping."""

import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from time import perf_counter
from typing import TypeVar

import structlog
import yaml
from pydantic import BaseModel, ValidationError

from errors import ArtifactError, ConfigError
from models import AblationGridFile, RunConfig, RunMetadata

log = structlog.get_logger(__name__)

M = TypeVar("M", bound=BaseModel)


def config_error(error: ValidationError, prefix: str = "") -> ConfigError:
    """A `ConfigError` listing the dotted path of every failing field."""
    paths = []
    for detail in error.errors():
        path = ".".join(str(part) for part in detail["loc"])
        paths.append(f"{prefix}{path}" if path else prefix.rstrip("."))
    return ConfigError(
        f"invalid configuration at {', '.join(paths)}: {error}", field_paths=paths
    )


def _load(path: Path, model: type[M]) -> M:
    if not path.is_file():
        raise ArtifactError(f"{path}: file not found")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML or JSON ({e})") from e
    try:
        return model.model_validate(data or {})
    except ValidationError as e:
        raise config_error(e) from e


def load_run_config(path: Path) -> RunConfig:
    """Read a run config (YAML or JSON); unknown keys are rejected."""
    return _load(path, RunConfig)


def load_grid_file(path: Path) -> AblationGridFile:
    return _load(path, AblationGridFile)


@dataclass
class RunDirectory:
    """`<out>/<command>_<timestamp>/` holding the resolved config, the JSON
    log and every output a command writes."""

    command: str
    path: Path
    config: RunConfig
    started_at: str
    outputs: list[str] = field(default_factory=list)
    _clock: float = field(default_factory=perf_counter)

    @classmethod
    def create(cls, command: str, config: RunConfig, out_dir: Path) -> "RunDirectory":
        now = datetime.now()
        base = out_dir / f"{command}_{now.strftime('%Y%m%d_%H%M%S')}"
        path, suffix = base, 1
        while path.exists():
            suffix += 1
            path = base.with_name(f"{base.name}_{suffix}")
        path.mkdir(parents=True)
        (path / "config.json").write_text(config.model_dump_json(indent=2))
        return cls(
            command=command, path=path, config=config, started_at=now.isoformat()
        )

    @property
    def run_id(self) -> str:
        return self.path.name

    @property
    def log_file(self) -> Path:
        return self.path / "run.log"

    def output(self, name: str) -> Path:
        """Path for an output file, recorded in the run metadata."""
        self.outputs.append(name)
        return self.path / name

    def write_json(self, name: str, payload: BaseModel | list | dict) -> Path:
        target = self.output(name)
        if isinstance(payload, BaseModel):
            target.write_text(payload.model_dump_json(indent=2))
        else:
            target.write_text(json.dumps(payload, indent=2, sort_keys=True))
        return target

    def finish(self, seeds: list[int]) -> RunMetadata:
        metadata = RunMetadata(
            command=self.command,
            run_id=self.run_id,
            seeds=seeds,
            config_fingerprint=self.config.fingerprint(),
            started_at=self.started_at,
            wall_time_s=perf_counter() - self._clock,
            outputs=sorted(self.outputs),
        )
        (self.path / "metadata.json").write_text(metadata.model_dump_json(indent=2))
        log.info(
            "run_finished",
            run_id=self.run_id,
            wall_time_s=round(metadata.wall_time_s, 3),
        )
        return metadata
