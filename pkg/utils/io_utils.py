"""
Trace CSV, summary JSON and sweep table persistence.
"""

import csv
import io
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Union

import numpy as np

from utils.functional_utils import ForceSample
from utils.strouhal_utils import TraceError, TraceSeries

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("t", "drag_b", "lift_b", "drag_vol", "lift_vol", "drag_v", "drag_p", "div_l2", "energy")
SWEEP_COLUMNS = ("reynolds", "mean_drag", "mean_period", "std_period", "classification", "status", "message")
FLOAT_FORMAT = "%.17g"


class TraceWriter:
    """Appends ForceSample rows to a trace CSV, writing the header for new files."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists() or self.path.stat().st_size == 0:
            self.path.write_text(",".join(TRACE_COLUMNS) + "\n")
        else:
            _check_header(self.path)

    def write(self, samples: Iterable[ForceSample]) -> None:
        rows = np.array([s.as_row() for s in samples], dtype=float).reshape(-1, len(TRACE_COLUMNS))
        if len(rows) == 0:
            return
        with open(self.path, "a") as fh:
            np.savetxt(fh, rows, fmt=FLOAT_FORMAT, delimiter=",")


def _check_header(path: Path) -> None:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if tuple(header) != TRACE_COLUMNS:
        raise TraceError(f"{path}: unexpected trace header {header}, expected {list(TRACE_COLUMNS)}")


def read_trace_table(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise TraceError(f"Trace file not found: {path}")
    _check_header(path)
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as e:
        raise TraceError(f"{path}: malformed trace rows: {e}") from e
    if data.size == 0:
        data = np.zeros((0, len(TRACE_COLUMNS)))
    if data.shape[1] != len(TRACE_COLUMNS):
        raise TraceError(f"{path}: expected {len(TRACE_COLUMNS)} columns, found {data.shape[1]}")
    return {name: data[:, i] for i, name in enumerate(TRACE_COLUMNS)}


def parse_trace_text(text: str, source: str = "<upload>") -> Dict[str, np.ndarray]:
    """Trace table from CSV text; only the t, drag_b and lift_b columns are required."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise TraceError(f"{source}: empty trace")
    missing = [c for c in ("t", "drag_b", "lift_b") if c not in header]
    if missing:
        raise TraceError(f"{source}: missing columns {missing}")
    rows: List[List[float]] = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise TraceError(f"{source}:{lineno}: expected {len(header)} values, found {len(row)}")
        try:
            rows.append([float(v) for v in row])
        except ValueError:
            raise TraceError(f"{source}:{lineno}: non-numeric value")
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def trace_series(table: Mapping[str, np.ndarray]) -> TraceSeries:
    return TraceSeries(t=table["t"], drag=table["drag_b"], lift=table["lift_b"])


def read_trace(path: Union[str, Path]) -> TraceSeries:
    return trace_series(read_trace_table(path))


def truncate_trace(path: Union[str, Path], t_max: float) -> int:
    """Drop rows with t > t_max (restart); returns the number of rows kept."""
    path = Path(path)
    if not path.exists():
        return 0
    lines = path.read_text().splitlines()
    header, body = lines[0], lines[1:]
    kept = [line for line in body if line and float(line.split(",", 1)[0]) <= t_max + 1e-12 * max(1.0, abs(t_max))]
    path.write_text("\n".join([header] + kept) + "\n")
    dropped = len(body) - len(kept)
    if dropped:
        logger.info(f"{path}: dropped {dropped} rows after t={t_max:.6g}")
    return len(kept)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_json(path: Union[str, Path], payload: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(dict(payload)), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    return json.loads(Path(path).read_text())


def write_sweep_table(path: Union[str, Path], rows: Sequence[Mapping[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in SWEEP_COLUMNS})
    return path
