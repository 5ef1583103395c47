"""Result persistence: CSV tables, JSON summaries and binary field snapshots.

Every file carries the package version and the hash of the configuration
that produced it.  Floats are written with 17 significant digits so that
a round trip through text is exact.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .errors import KellerSegelError
from .spectral import Field, GridSpec

SNAPSHOT_MAGIC = b"KSFIELD1"
_SNAPSHOT_HEAD = struct.Struct("<QddI")  # n, L, time, name length


class SnapshotFormatError(KellerSegelError, ValueError):
    """A snapshot file is truncated or has the wrong magic."""


def format_float(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def header_line(config_hash: str = "") -> str:
    return f"# kellersegel {__version__} config_hash={config_hash}"


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], config_hash: str = "") -> Path:
    """Write a numeric table preceded by a version/hash comment line."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(header_line(config_hash) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_float(x) for x in row])
    return path


def write_series_csv(path, series: Mapping[str, np.ndarray], config_hash: str = "") -> Path:
    cols = list(series.keys())
    data = np.column_stack([np.asarray(series[c], dtype=float) for c in cols]) if cols else []
    return write_csv(path, cols, data, config_hash)


def read_csv(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return (metadata from the comment line, columns as float arrays)."""
    meta = {}
    with Path(path).open() as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) >= 2 and parts[0] == "kellersegel":
                meta["version"] = parts[1]
            for p in parts[2:]:
                if "=" in p:
                    k, v = p.split("=", 1)
                    meta[k] = v
        elif line.strip():
            body.append(line)
    if not body:
        return meta, {}
    reader = csv.reader(body)
    cols = next(reader)
    values = [[float(x) for x in row] for row in reader]
    arr = np.array(values, dtype=float).reshape(len(values), len(cols))
    return meta, {c: arr[:, i] for i, c in enumerate(cols)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    return obj


def write_json(path, payload: Mapping, config_hash: str = "") -> Path:
    """JSON with sorted keys; non-finite floats become strings."""
    doc = {"version": __version__, "config_hash": config_hash}
    doc.update(_jsonable(dict(payload)))
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_snapshot(path, field: Field, name: str, time: float, config_hash: str = "",
                   meta: Mapping | None = None) -> Path:
    """Binary snapshot: magic, header (n, L, time, name), JSON metadata, float64 data."""
    g = field.grid
    name_b = name.encode("utf-8")
    info = {"version": __version__, "config_hash": config_hash}
    if meta:
        info.update(_jsonable(dict(meta)))
    info_b = json.dumps(info, sort_keys=True).encode("utf-8")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(_SNAPSHOT_HEAD.pack(g.n, g.L, float(time), len(name_b)))
        fh.write(name_b)
        fh.write(struct.pack("<I", len(info_b)))
        fh.write(info_b)
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C"))
    return path


def read_snapshot(path) -> tuple[Field, str, float, dict]:
    raw = Path(path).read_bytes()
    m = len(SNAPSHOT_MAGIC)
    if raw[:m] != SNAPSHOT_MAGIC:
        raise SnapshotFormatError(f"{path}: not a field snapshot")
    try:
        n, L, time, nlen = _SNAPSHOT_HEAD.unpack_from(raw, m)
        pos = m + _SNAPSHOT_HEAD.size
        name = raw[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ilen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        info = json.loads(raw[pos:pos + ilen].decode("utf-8"))
        pos += ilen
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotFormatError(f"{path}: corrupt header") from exc
    data = raw[pos:]
    if len(data) != 8 * n * n:
        raise SnapshotFormatError(f"{path}: expected {8 * n * n} data bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f8").reshape(n, n).astype(float)
    return Field(GridSpec(int(n), float(L)), values), name, float(time), info


def snapshot_to_csv(snapshot_path, csv_path) -> Path:
    """Long-format x,y,value export for plotting."""
    f, name, time, info = read_snapshot(snapshot_path)
    X, Y = f.grid.mesh
    rows = np.column_stack([X.ravel(), Y.ravel(), f.values.ravel()])
    return write_csv(csv_path, ["x", "y", name], rows, info.get("config_hash", ""))


def mass_map_rows(a: np.ndarray, epsilon: float, mass: np.ndarray) -> list[list[float]]:
    return [[x, epsilon, m, m / (8.0 * math.pi)] for x, m in zip(a, mass)]


MASS_MAP_COLUMNS = ("a", "epsilon", "mass", "mass_over_8pi")
PROFILE_COLUMNS = ("r", "U", "V", "Vprime")
