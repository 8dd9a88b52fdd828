import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Union

from dotenv import dotenv_values
from pydantic import ValidationError

from metalr.core.errors import ConfigError
from metalr.models.schemas import ExperimentConfig, RunSection

logger = logging.getLogger(__name__)


def _decode(key: str, value: Optional[str]) -> Any:
    if value is None:
        raise ConfigError(key, "missing value")
    if not isinstance(value, str):
        return value
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def parse_config(flat: Mapping[str, Any]) -> ExperimentConfig:
    """Validate a flat {"section.key": value} mapping into an ExperimentConfig."""
    nested: Dict[str, Dict[str, Any]] = {}
    for key, value in flat.items():
        section, _, name = key.partition(".")
        if not section or not name or "." in name:
            raise ConfigError(key, "keys must have the form 'section.key'")
        nested.setdefault(section, {})[name] = _decode(key, value)
    try:
        return ExperimentConfig.model_validate(nested)
    except ValidationError as exc:
        error = exc.errors()[0]
        key_path = ".".join(str(part) for part in error["loc"]) or "<config>"
        raise ConfigError(key_path, error["msg"]) from exc


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(str(path), "config file not found")
    config = parse_config(dotenv_values(path))
    logger.info(f"Loaded config {path} (fingerprint {config.fingerprint()[:12]})")
    return config


def apply_overrides(
    config: ExperimentConfig,
    seeds: Optional[Sequence[int]] = None,
    out: Optional[str] = None,
    trace: Optional[bool] = None,
    workers: Optional[int] = None,
) -> ExperimentConfig:
    """Command-line overrides for the run section, re-validated."""
    updates: Dict[str, Any] = {}
    if seeds is not None:
        updates["seeds"] = list(seeds)
    if out is not None:
        updates["out"] = out
    if trace is not None:
        updates["trace"] = trace
    if workers is not None:
        updates["workers"] = workers
    if not updates:
        return config
    try:
        run = RunSection.model_validate({**config.run.model_dump(), **updates})
    except ValidationError as exc:
        error = exc.errors()[0]
        raise ConfigError("run." + ".".join(str(part) for part in error["loc"]), error["msg"]) from exc
    return config.model_copy(update={"run": run})
