"""File I/O helpers: deterministic CSVs and their YAML run manifests."""
from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, Sequence, Union

import yaml

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def format_cell(value: Any) -> str:
    """CSV text for one value: shortest round-trip floats, ``inf``, '' for None."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def write_csv(filename: PathLike, headers: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Write a CSV with ``\\n`` line endings and locale-independent numbers."""
    with open(filename, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(headers)
        writer.writerows([format_cell(v) for v in row] for row in rows)
    logger.debug("Wrote %s", filename)


MANIFEST_SUFFIX = ".manifest.yml"


def manifest_path(csv_path: PathLike) -> Path:
    p = Path(csv_path)
    return p.with_name(p.name + MANIFEST_SUFFIX)


def write_manifest(csv_path: PathLike, data: Dict[str, Any]) -> Path:
    """Write ``<csv>.manifest.yml`` next to ``csv_path`` (sorted keys, no timestamps)."""
    target = manifest_path(csv_path)
    with open(target, "w", encoding="utf-8", newline="\n") as f:
        yaml.safe_dump(data, f, sort_keys=True, default_flow_style=False)
    logger.debug("Wrote %s", target)
    return target


def read_manifest(path: PathLike) -> Dict[str, Any]:
    with open(path, encoding="utf-8") as f:
        return yaml.safe_load(f) or {}
