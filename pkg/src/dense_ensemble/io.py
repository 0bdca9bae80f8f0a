"""File formats: CSV time series, raw field snapshots, JSON helpers."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .pstd import ConfigError

FLOAT_FMT = "%.17g"
SNAPSHOT_DTYPE = "<f8"


@dataclass
class TimeSeries:
    """Uniformly sampled named columns sharing one time axis (seconds)."""

    time: np.ndarray
    columns: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        for k, v in list(self.columns.items()):
            v = np.asarray(v, dtype=float)
            if v.shape != self.time.shape:
                raise ValueError(f"column {k!r} has shape {v.shape}, time has {self.time.shape}")
            self.columns[k] = v

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def __len__(self) -> int:
        return len(self.time)

    @property
    def names(self) -> list:
        return list(self.columns)

    def window(self, t0: float, t1: float) -> "TimeSeries":
        m = (self.time >= t0) & (self.time <= t1)
        return TimeSeries(self.time[m], {k: v[m] for k, v in self.columns.items()}, dict(self.meta))

    def equals(self, other: "TimeSeries") -> bool:
        """Bitwise equality of time axis and every column."""
        if self.names != other.names or not np.array_equal(self.time, other.time):
            return False
        return all(np.array_equal(self[k], other[k]) for k in self.names)


def write_csv(ts: TimeSeries, path) -> Path:
    """CSV with header ``time_s,<names...>``; metadata goes to ``<path>.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack([ts.time] + [ts[k] for k in ts.names]) if len(ts) else np.empty((0, 1 + len(ts.names)))
    # np.savetxt with %-formatting is locale-independent
    np.savetxt(path, data, fmt=FLOAT_FMT, delimiter=",", header=",".join(["time_s"] + ts.names), comments="")
    if ts.meta:
        write_json(ts.meta, str(path) + ".json")
    return path


def read_csv(path) -> TimeSeries:
    """Inverse of :func:`write_csv`. Malformed input raises ConfigError naming the line."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such file", str(path))
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "time_s":
        raise ConfigError(f"{path}:1: header must start with 'time_s'", f"{path}:1")
    names = rows[0][1:]
    width = len(rows[0])
    data = np.empty((len(rows) - 1, width))
    for i, row in enumerate(rows[1:]):
        if len(row) != width:
            raise ConfigError(f"{path}:{i + 2}: expected {width} fields, got {len(row)}", f"{path}:{i + 2}")
        try:
            data[i] = [float(x) for x in row]
        except ValueError as exc:
            raise ConfigError(f"{path}:{i + 2}: {exc}", f"{path}:{i + 2}") from None
    meta = {}
    side = Path(str(path) + ".json")
    if side.exists():
        meta = json.loads(side.read_text())
    return TimeSeries(data[:, 0], {n: data[:, j + 1] for j, n in enumerate(names)}, meta)


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def file_inventory(paths) -> list:
    return [{"path": str(p), "size": os.path.getsize(p), "sha256": sha256_file(p)} for p in sorted(map(str, paths))]


# ----------------------------------------------------------------- snapshots
def write_snapshot(array: np.ndarray, path, *, name: str, spacing: float, time: float, units: str, extra=None) -> Path:
    """Raw little-endian float64, first axis fastest, plus a JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    a = np.asarray(array, dtype=SNAPSHOT_DTYPE)
    path.write_bytes(a.tobytes(order="F"))
    meta = {
        "component": name,
        "dims": list(a.shape),
        "order": "x-fastest",
        "dtype": "float64-le",
        "spacing_m": spacing,
        "time_s": time,
        "units": units,
    }
    if extra:
        meta.update(extra)
    write_json(meta, str(path) + ".json")
    return path


def read_snapshot(path) -> tuple:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    raw = np.frombuffer(path.read_bytes(), dtype=SNAPSHOT_DTYPE)
    return raw.reshape(meta["dims"], order="F"), meta


def output_root(default: Optional[str] = None) -> Path:
    """Default output directory, overridable with DENSE_ENSEMBLE_OUT."""
    return Path(os.environ.get("DENSE_ENSEMBLE_OUT", default or "runs"))
