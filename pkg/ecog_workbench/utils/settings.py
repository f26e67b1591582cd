"""
Experiment settings management

A run is described by one JSON document mirroring ExperimentConfig. Nested
sections (preprocess, spectral, rlda, fbcsp, architecture, train) map onto
the configuration dataclasses; command-line flags override file values.
"""

import dataclasses
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from ..config import ExperimentConfig
from ..errors import ConfigError, DataError
from .io_utils import read_json, write_json

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def _tupled(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def config_to_dict(config: Any) -> Dict[str, Any]:
    """Plain-JSON dictionary of a configuration dataclass"""
    return _plain(dataclasses.asdict(config))


def _build(cls: type, data: Mapping[str, Any], section: str) -> Any:
    if not isinstance(data, Mapping):
        raise ConfigError(f"'{section}' must be a JSON object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {', '.join(unknown)}")

    defaults = cls()
    values: Dict[str, Any] = {}
    for name, raw in data.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            values[name] = _build(type(current), raw, f"{section}.{name}" if section else name)
        elif isinstance(current, Enum):
            try:
                values[name] = type(current)(raw)
            except ValueError as e:
                raise ConfigError(f"{section}.{name}: {e}") from e
        elif isinstance(current, frozenset):
            values[name] = frozenset(raw)
        else:
            values[name] = _tupled(raw)
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"invalid '{section or 'config'}' section: {e}") from e


def config_from_dict(data: Mapping[str, Any]) -> ExperimentConfig:
    """
    Build an ExperimentConfig from a JSON-style dictionary

    Missing keys keep their defaults.

    Raises:
        ConfigError: On unknown keys or malformed sections
    """
    return _build(ExperimentConfig, data, "")


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Load an experiment configuration file

    Args:
        path: JSON document mirroring ExperimentConfig

    Returns:
        ExperimentConfig (not yet validated)

    Raises:
        ConfigError: If the file is missing, unreadable or malformed
    """
    try:
        data = read_json(path)
    except DataError as e:
        raise ConfigError(str(e)) from e
    logger.debug(f"[Settings] loaded configuration from {path}")
    return config_from_dict(data)


def save_experiment_config(config: ExperimentConfig, path: Union[str, Path]) -> None:
    """Write the effective configuration next to the results"""
    write_json(path, config_to_dict(config))


def merge_overrides(config: ExperimentConfig, overrides: Mapping[str, Optional[Any]]) -> ExperimentConfig:
    """
    Apply command-line overrides on top of a configuration

    Keys are field names, dotted for nested sections ("train.max_epochs").
    None values are ignored.

    Returns:
        New ExperimentConfig
    """
    result = config
    for key, value in overrides.items():
        if value is None:
            continue
        head, _, rest = key.partition(".")
        if not hasattr(result, head):
            raise ConfigError(f"unknown setting '{key}'")
        if rest:
            section = getattr(result, head)
            if not hasattr(section, rest):
                raise ConfigError(f"unknown setting '{key}'")
            result = dataclasses.replace(result, **{head: dataclasses.replace(section, **{rest: value})})
        else:
            result = dataclasses.replace(result, **{head: value})
    return result
