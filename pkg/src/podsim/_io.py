"""Deterministic serialization shared by the command line and the sweeps."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import __version__

FLOAT_DIGITS = 17


def fmt(v: Any) -> str:
    """CSV cell: floats with 17 significant digits, booleans lower-case."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if not math.isfinite(v) else f"{v:.{FLOAT_DIGITS}g}"
    if isinstance(v, (np.integer,)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def jsonable(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become strings."""
    if is_dataclass(obj) and not isinstance(obj, type):
        obj = obj.to_dict() if hasattr(obj, "to_dict") else asdict(obj)
    if isinstance(obj, Mapping):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def metadata(config_hash: str | None, seed: int | None, command: str) -> dict:
    return {"command": command, "config_hash": config_hash, "seed": seed, "version": __version__}


def json_text(payload: Mapping[str, Any], meta: Mapping[str, Any] | None = None) -> str:
    body = dict(jsonable(payload))
    if meta is not None:
        body = {"metadata": dict(meta), **body}
    return json.dumps(body, sort_keys=True, indent=2) + "\n"


def csv_text(rows: Iterable[Mapping[str, Any]], columns: Sequence[str], meta: Mapping[str, Any] | None = None) -> str:
    """CSV with an optional ``#``-prefixed metadata line before the header."""
    buf = io.StringIO()
    if meta is not None:
        buf.write("# " + " ".join(f"{k}={fmt(v)}" for k, v in sorted(meta.items())) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_all(out_dir: str | Path, files: Mapping[str, str]) -> list[Path]:
    """Write every file or none: each goes to a temp file first, then all are renamed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    staged: list[tuple[str, Path]] = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.", suffix=".tmp")
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            staged.append((tmp, out / name))
    except BaseException:
        for tmp, _ in staged:
            Path(tmp).unlink(missing_ok=True)
        raise
    for tmp, dest in staged:
        os.replace(tmp, dest)
    return [dest for _, dest in staged]
