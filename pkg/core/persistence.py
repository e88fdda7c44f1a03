"""File formats: columnar text series and schema-tagged JSON reports."""
import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

logger = logging.getLogger(__name__)


def write_columns(path: Path, columns: Mapping[str, Sequence[float]], meta: Mapping[str, Any]) -> Path:
    """
    Write equal-length columns with ``numpy.savetxt``.

    The header has two ``#`` lines: ``key=value`` metadata (must include ``schema``)
    followed by the column names.
    """
    if "schema" not in meta:
        raise ValueError("columnar files need a schema tag")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    data = np.column_stack([np.asarray(columns[name], dtype=float) for name in names])
    for key, value in meta.items():
        if " " in str(value) or " " in key:
            raise ValueError(f"metadata entry {key}={value!r} must not contain spaces")
    header = " ".join(f"{key}={value}" for key, value in meta.items()) + "\n" + " ".join(names)
    np.savetxt(path, data, fmt="%.17g", header=header)
    logger.debug("wrote %d rows to %s", data.shape[0], path)
    return path


def read_columns(path: Path) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    path = Path(path)
    with path.open() as handle:
        meta_line = handle.readline().lstrip("#").strip()
        names_line = handle.readline().lstrip("#").strip()
    meta = dict(token.split("=", 1) for token in meta_line.split())
    names = names_line.split()
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] != len(names):
        raise ValueError(f"{path}: {len(names)} column names but {data.shape[1]} columns")
    return meta, {name: data[:, i] for i, name in enumerate(names)}


def write_report(path: Path, report: BaseModel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2) + "\n")
    logger.debug("wrote report %s", path)
    return path


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
