"""CSV and JSON writers that stamp every artifact with the config hash."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

__all__ = ["config_hash", "to_jsonable", "write_json", "write_csv", "write_schema", "SCHEMA"]

SCHEMA = {
    "comment_line": "every CSV starts with '# config_hash=<hex>'; JSON files carry a 'config_hash' key",
    "trajectory.csv": {
        "t": "time node",
        "x_<j>": "state value at grid node j (x = j / (M + 1), boundary nodes included)",
    },
    "traces.csv": {
        "start": "index of the multistart initial point",
        "iteration": "optimizer iteration (0 is the initial point)",
        "cost": "J at that iterate",
    },
    "sweep.csv": {
        "sigma": "prior standard deviation",
        "t_N": "last observation time",
        "lhs": "certificate left-hand side",
        "rhs": "sigma^-2",
        "passes": "1 when lhs < rhs",
    },
    "chain.csv": {
        "sample": "index of the kept (thinned) sample",
        "log_potential": "Phi(u) = scaled data misfit",
        "x_<j>": "sample value at grid node j",
    },
}


def to_jsonable(obj):
    """Convert numpy containers and non-finite floats to plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def config_hash(config: dict) -> str:
    blob = json.dumps(to_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_json(path, payload: dict, chash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"config_hash": chash, **to_jsonable(payload)}
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path


def write_csv(path, header, rows, chash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# config_hash={chash}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_schema(directory, chash: str) -> Path:
    return write_json(Path(directory) / "schema.json", SCHEMA, chash)
