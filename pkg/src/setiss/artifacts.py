"""CSV and JSON artifacts."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .sets import TargetSet, dist_point

SCHEMA_VERSION = 1


def _fmt(v: float) -> str:
    return repr(float(v))


def trajectory_rows(traj, A: TargetSet | None, max_rows: int = 0):
    """Header and node rows ``t, x1..xn, w1..wm, dist_A`` (strided if capped)."""
    n = traj.states.shape[1]
    m = traj.disturbance.shape[1]
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"w{j + 1}" for j in range(m)] + ["dist_A"]
    idx = np.arange(traj.times.size)
    if max_rows and idx.size > max_rows:
        stride = math.ceil((idx.size - 1) / (max_rows - 1))
        idx = idx[::stride]
        if idx[-1] != traj.times.size - 1:
            idx = np.append(idx, traj.times.size - 1)
    x = traj.states[idx]
    d = dist_point(A, x) if A is not None else np.linalg.norm(x, axis=1)
    rows = np.column_stack([traj.times[idx], x, traj.disturbance[idx], np.atleast_1d(d)])
    return header, rows


def write_csv(path: Path, header, rows) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(v) for v in r])


def read_csv(path: Path):
    """Return ``(header, rows)`` with rows as a float array."""
    with Path(path).open(newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        rows = [[float(v) for v in r] for r in rd if r]
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def write_trajectory_csv(path: Path, traj, A: TargetSet | None, max_rows: int = 0) -> int:
    header, rows = trajectory_rows(traj, A, max_rows)
    write_csv(path, header, rows)
    return rows.shape[0]


def write_envelope_csv(path: Path, envelope) -> None:
    write_csv(path, ["offset", "bound"], np.column_stack([envelope.offsets, envelope.bounds]))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return obj


def write_json(path: Path, payload: dict) -> None:
    """Deterministic JSON: sorted keys, schema tag, no timestamps."""
    body = {"schema": SCHEMA_VERSION, **payload}
    Path(path).write_text(json.dumps(_clean(body), indent=2, sort_keys=True) + "\n")


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text())
