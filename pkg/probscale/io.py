"""
probscale - File formats
========================

- Dataset CSV: header `x1,...,xn,y`, one observation per row
- Bound CSV: `x,y,bound_lo,bound_hi,method` for plotting
- JSON reports written by `calibrate` / `family` and read back by `validate`
- Predictor config hash tying a report to the predictor it was calibrated for
"""
import csv
import hashlib
import json
import math
import re
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
from pydantic import ValidationError

from .errors import ContractError, DataFormatError
from .models import Dataset

PathLike = Union[str, Path]

BOUND_COLUMNS = ["x", "y", "bound_lo", "bound_hi", "method"]

_FEATURE_COLUMN = re.compile(r"^x(\d+)$")


# ============================================================================
# Dataset CSV
# ============================================================================

def _check_header(header: List[str], path: Path) -> int:
    """Number of input columns, or DataFormatError if the header is not x1..xn,y"""
    names = [h.strip() for h in header]
    if len(names) < 2 or names[-1] != "y":
        raise DataFormatError(f"{path}: header must be x1,...,xn,y; got {','.join(names)}", line=1)
    for position, name in enumerate(names[:-1], start=1):
        match = _FEATURE_COLUMN.match(name)
        if not match or int(match.group(1)) != position:
            raise DataFormatError(
                f"{path}: column {position} must be named x{position}, got {name!r}", line=1
            )
    return len(names) - 1


def read_dataset_csv(path: PathLike) -> Dataset:
    """Load observations from a CSV with a mandatory `x1..xn,y` header.

    Args:
        path: CSV file

    Returns:
        Dataset with source "csv:<resolved path>"

    Raises:
        DataFormatError: bad header, ragged or non-numeric row, or no rows
    """
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"{path}: file not found")

    rows: List[List[float]] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: file is empty", line=1)
        n_x = _check_header(header, path)

        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != n_x + 1:
                raise DataFormatError(
                    f"{path}: expected {n_x + 1} fields, got {len(row)}", line=line_no
                )
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise DataFormatError(f"{path}: non-numeric field in {row}", line=line_no)
            if not all(math.isfinite(v) for v in values):
                raise DataFormatError(f"{path}: non-finite field in {row}", line=line_no)
            rows.append(values)

    if not rows:
        raise DataFormatError(f"{path}: no observations after the header", line=2)

    table = np.asarray(rows, dtype=float)
    try:
        return Dataset(X=table[:, :-1], y=table[:, -1], source=f"csv:{path.resolve()}")
    except ValidationError as e:
        raise DataFormatError(f"{path}: {e.errors()[0]['msg']}")


def write_dataset_csv(path: PathLike, data: Dataset) -> Path:
    """Write observations with the `x1..xn,y` header"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([f"x{i}" for i in range(1, data.n_features + 1)] + ["y"])
        for x_row, y_value in zip(data.X, data.y):
            writer.writerow([repr(float(v)) for v in x_row] + [repr(float(y_value))])
    return path


# ============================================================================
# Bound CSV
# ============================================================================

def bound_rows(x, y, center, half_width, method: str) -> List[Dict[str, Any]]:
    """Rows of the bound CSV: [center - w, center + w] around T(x)"""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    center = np.asarray(center, dtype=float).reshape(-1)
    half_width = np.broadcast_to(np.asarray(half_width, dtype=float), center.shape)
    return [
        {
            "x": float(x[i]),
            "y": float(y[i]),
            "bound_lo": float(center[i] - half_width[i]),
            "bound_hi": float(center[i] + half_width[i]),
            "method": method,
        }
        for i in range(center.shape[0])
    ]


def write_bounds_csv(path: PathLike, rows: Iterable[Dict[str, Any]]) -> Path:
    """Write bound rows with the fixed `x,y,bound_lo,bound_hi,method` header"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=BOUND_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


# ============================================================================
# JSON reports
# ============================================================================

def config_hash(predictor_config: Dict[str, Any]) -> str:
    """sha256 of the canonical JSON form of a predictor/sigma config"""
    canonical = json.dumps(predictor_config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def file_sha256(path: PathLike) -> str:
    """Content hash of a data file, used to pin training data in a config"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def dumps_report(report: Dict[str, Any]) -> str:
    """Deterministic JSON text (sorted keys; inf is written as Infinity)"""
    return json.dumps(report, indent=2, sort_keys=True, default=_json_default)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_json_report(path: PathLike, report: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_report(report) + "\n", encoding="utf-8")
    return path


def read_json_report(path: PathLike, required: Optional[Iterable[str]] = None) -> Dict[str, Any]:
    """Load a calibration report.

    Raises:
        ContractError: missing file, invalid JSON, or a required key absent
    """
    path = Path(path)
    if not path.exists():
        raise ContractError(f"report {path} not found")
    try:
        report = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ContractError(f"report {path} is not valid JSON: {e}")
    if not isinstance(report, dict):
        raise ContractError(f"report {path} must hold a JSON object")
    missing = [key for key in (required or ()) if key not in report]
    if missing:
        raise ContractError(f"report {path} lacks {', '.join(missing)}")
    return report
