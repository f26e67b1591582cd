"""
File output helpers shared by the report writers
"""

import csv
import json
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

import numpy as np

from ..config import UNDEFINED_MARKER
from ..errors import DataError

PathLike = Union[str, Path]


def json_safe(value: Any) -> Any:
    """
    Convert to plain JSON types

    NaN and infinities become None, numpy scalars and arrays become Python
    numbers and lists, tuples become lists.
    """
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return json_safe(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if np.isfinite(value) else None
    return value


def write_json(path: PathLike, data: Any) -> None:
    """
    Write deterministic JSON (sorted keys, two-space indent, trailing newline)

    Raises:
        DataError: On I/O failure
    """
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(json_safe(data), f, indent=2, sort_keys=True, allow_nan=False)
            f.write("\n")
    except OSError as e:
        raise DataError(f"failed to write {path}: {e}") from e


def read_json(path: PathLike) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise DataError(f"{path} does not exist") from e
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read {path}: {e}") from e


def format_float(value: Any, digits: int = 6) -> str:
    """Fixed-point text, NA for missing or non-finite values"""
    if value is None:
        return UNDEFINED_MARKER
    value = float(value)
    return f"{value:.{digits}f}" if np.isfinite(value) else UNDEFINED_MARKER


def write_csv_rows(path: PathLike, header: Sequence[Any], rows: Iterable[Sequence[Any]]) -> None:
    """
    Write a header row and data rows with Unix line endings

    Raises:
        DataError: On I/O failure
    """
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        raise DataError(f"failed to write {path}: {e}") from e


def ensure_directory(path: PathLike) -> Path:
    directory = Path(path)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create directory {directory}: {e}") from e
    return directory
