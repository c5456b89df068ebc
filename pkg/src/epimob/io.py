"""File helpers: atomic writes, digests, run manifests and series folders."""
from __future__ import annotations

import hashlib
import json
import os
import platform
import tempfile
from pathlib import Path

import numpy as np

from .errors import MissingPrerequisiteError
from .fda.basis import SmoothedCurve
from .series import DailySeries, format_float


def atomic_write_text(path, text: str) -> Path:
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    if hasattr(o, "isoformat"):
        return o.isoformat()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(path, obj) -> Path:
    return atomic_write_text(path, dumps_json(obj))


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise MissingPrerequisiteError(path)
    return json.loads(path.read_text())


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    import numpy
    import pandas
    import scipy

    from . import __version__

    return {
        "epimob": __version__,
        "numpy": numpy.__version__,
        "pandas": pandas.__version__,
        "python": platform.python_version(),
        "scipy": scipy.__version__,
    }


def _digests(paths, root: Path) -> dict:
    out = {}
    for p in sorted({Path(p) for p in paths}):
        key = os.path.relpath(p, root) if root else str(p)
        out[key.replace(os.sep, "/")] = sha256_file(p)
    return out


def write_manifest(path, stage: str, parameters: dict, inputs, outputs, root=None) -> Path:
    """JSON record of a stage run: parameters, input and output digests, versions.

    Paths are stored relative to ``root`` and no timestamps are included, so
    identical runs produce identical manifests.
    """
    root = Path(root) if root else Path(path).parent
    body = {
        "stage": stage,
        "parameters": parameters,
        "inputs": _digests(inputs, root),
        "outputs": _digests(outputs, root),
        "versions": versions(),
    }
    return write_json(path, body)


def require(path, what="input") -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingPrerequisiteError(path, what)
    return path


def write_series(path, series: DailySeries) -> Path:
    return atomic_write_text(path, series.to_csv())


def read_series(path, kind="mobility", unit_id=None) -> DailySeries:
    path = require(path)
    return DailySeries.from_csv(path.read_text(), unit_id or path.stem, kind)


def write_series_dir(directory, serieses) -> list[Path]:
    return [write_series(Path(directory) / f"{s.unit_id}.csv", s) for s in serieses]


def read_series_dir(directory, kind="mobility") -> list[DailySeries]:
    """All ``<unit>.csv`` series in a folder, sorted by unit id."""
    directory = require(directory, "series folder")
    if directory.is_file():
        return [read_series(directory, kind)]
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise MissingPrerequisiteError(directory / "<unit>.csv", "series files")
    return [read_series(f, kind) for f in files]


def write_curves(path, curves, extra=None) -> Path:
    body = {"curves": [c.to_dict() for c in curves]}
    if extra:
        body.update(extra)
    return write_json(path, body)


def read_curves(path) -> list[SmoothedCurve]:
    return [SmoothedCurve.from_dict(d) for d in read_json(path)["curves"]]


def csv_text(header, rows) -> str:
    """CSV with floats written by ``repr`` so they parse back exactly."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else format_float(float(v))
    if hasattr(v, "isoformat"):
        return v.isoformat()
    return str(v)
