"""Bit-stable text formats: CSV tables, field dumps, matrix triplets and JSON summaries."""

import collections.abc
import dataclasses
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .geometry import ScalarField

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def format_value(value: Any) -> str:
    """Floats as repr-exact .17g; everything else via str."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _header(config_hash: str, units: str) -> str:
    return f"# config_hash={config_hash} units={units}"


def _prepare(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _save_columns(path: PathLike, data: np.ndarray, names: Sequence[str], config_hash: str, units: str) -> Path:
    path = _prepare(path)
    header = _header(config_hash, units) + "\n" + ",".join(names)
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="", encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def write_table(
    path: PathLike,
    rows: Iterable[Mapping[str, Any]],
    columns: Sequence[str],
    config_hash: str = "none",
    units: str = "dimensionless",
) -> Path:
    """Mixed-type rows (check names, flags) go through format_value column by column."""
    path = _prepare(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(_header(config_hash, units) + "\n")
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(format_value(row[c]) for c in columns) + "\n")
    logger.info(f"Wrote {path}")
    return path


def write_field(path: PathLike, u: ScalarField, config_hash: str = "none", name: str = "u") -> Path:
    """x1[,x2[,x3]],u rows in row-major node order."""
    grid = u.grid
    columns = [f"x{k + 1}" for k in range(grid.ndim)] + [name]
    return _save_columns(path, np.column_stack([grid.coordinates, u.values]), columns, config_hash, "length,value")


def write_profile(path: PathLike, x: np.ndarray, columns: Dict[str, np.ndarray], config_hash: str = "none") -> Path:
    data = np.column_stack([x] + [np.asarray(v) for v in columns.values()])
    return _save_columns(path, data, ["x"] + list(columns), config_hash, "length,value")


def write_triplets(path: PathLike, matrix: sp.spmatrix) -> Path:
    """(row, col, value) lines of a sparse matrix, sorted by row then column."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    data = np.column_stack([coo.row[order], coo.col[order], coo.data[order]])
    path = _prepare(path)
    np.savetxt(path, data, fmt=["%d", "%d", "%.17g"], delimiter=" ", encoding="utf-8")
    return path


def read_table(path: PathLike) -> Dict[str, Any]:
    """Numeric CSV written by this module: header metadata plus one array per column."""
    with open(path, "r", encoding="utf-8") as f:
        meta_line = f.readline().lstrip("#").strip()
        columns = f.readline().strip().split(",")
    meta = dict(item.split("=", 1) for item in meta_line.split())
    body = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2, encoding="utf-8")
    data = {c: body[:, i] for i, c in enumerate(columns)}
    return {"meta": meta, "columns": columns, "data": data}


class NumpyEncoder(json.JSONEncoder):
    """
    JSON encoder for reports.
    Usage: json.dumps(data, cls=NumpyEncoder)
    """

    def default(self, obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, np.generic):
            return obj.item()
        if isinstance(obj, ScalarField):
            return {"shape": list(obj.grid.shape), "sup": float(np.max(np.abs(obj.values)))}
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj) if f.repr}
        if isinstance(obj, collections.abc.Mapping):
            return dict(obj)
        return super().default(obj)


def write_json(path: PathLike, data: Any) -> Path:
    path = _prepare(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, cls=NumpyEncoder, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Wrote {path}")
    return path
