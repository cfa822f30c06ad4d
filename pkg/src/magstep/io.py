"""Small file helpers: atomic JSON, CSV tables, cache location."""
import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np

CACHE_ENV = "MAGSTEP_CACHE"


def cache_dir(override=None) -> Path:
    """Resolve the cache directory; the environment variable wins over ``override``."""
    env = os.environ.get(CACHE_ENV)
    if env:
        path = Path(env)
    elif override:
        path = Path(override)
    else:
        path = Path.home() / ".cache" / "magstep"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _atomic_write(path, text, mode="w"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj):
    """Write ``obj`` as JSON through a temp file and rename."""
    return _atomic_write(path, json.dumps(obj, indent=1, default=_default) + "\n")


def write_bytes(path, data: bytes):
    return _atomic_write(path, data, mode="wb")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_csv(path, header, rows, schema=None):
    """CSV with a leading ``# schema`` comment line and a header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            if schema:
                fh.write(f"# {schema}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path
