"""Deterministic table output with embedded config hashes and JSON sidecars."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(blob.encode()).hexdigest()


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(v)


def write_table(path: Path, header: list[str], rows, chash: str, fmt_kind: str = "csv") -> Path:
    """Write rows as CSV (first line ``# config_sha256=...``) or as JSON."""
    rows = [list(r) for r in rows]
    if fmt_kind == "csv":
        path = path.with_suffix(".csv")
        with open(path, "w", newline="") as fh:
            fh.write(f"# config_sha256={chash}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([fmt(v) for v in r])
    elif fmt_kind == "json":
        path = path.with_suffix(".json")
        recs = [{h: _plain(v) for h, v in zip(header, r)} for r in rows]
        write_json(path, {"config_sha256": chash, "columns": header, "rows": recs})
    else:
        raise ValueError(f"unknown format {fmt_kind!r}")
    return path


def _plain(v):
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v)
    return v


def write_json(path: Path, obj) -> Path:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def read_table(path: Path) -> tuple[str, list[str], list[list[str]]]:
    """Inverse of :func:`write_table` for CSV files: (hash, header, rows)."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# config_sha256="):
            raise ValueError("missing config hash line")
        r = list(csv.reader(fh))
    return first.split("=", 1)[1], r[0], r[1:]


def write_sidecar(path: Path, chash: str, command: str, seed: int, files: list[Path], extra: dict | None = None) -> Path:
    import numpy
    import scipy

    from mdplab import __version__

    meta = {
        "config_sha256": chash,
        "command": command,
        "seed": seed,
        "files": [p.name for p in files],
        "versions": {
            "mdplab": __version__,
            "python": sys.version.split()[0],
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
            "platform": platform.platform(),
        },
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    meta.update(extra or {})
    return write_json(path, meta)
