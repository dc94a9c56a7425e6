"""Output serialisation: commented CSV headers, 17-digit numbers, atomic writes, manifests."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import __version__


def header_lines(config_sha256: str, seed: int, extra: Mapping[str, object] = ()) -> list[str]:
    lines = [f"polygene {__version__}", f"config_sha256={config_sha256}", f"seed={seed}"]
    lines += [f"{k}={v}" for k, v in dict(extra).items()]
    return lines


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def csv_text(header: Sequence[str], columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    out = [f"# {line}" for line in header]
    out.append(",".join(columns))
    for row in rows:
        out.append(",".join(format_value(v) for v in row))
    return "\n".join(out) + "\n"


def columns_to_rows(cols: Mapping[str, Sequence]) -> list[tuple]:
    return list(zip(*cols.values()))


def json_text(header: Sequence[str], payload: Mapping) -> str:
    """JSON cannot carry comments, so the header lines go in a leading ``header`` field."""
    return json.dumps({"header": list(header), **payload}, indent=2, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def atomic_write(path: Path, text: str) -> str:
    """Write via a temporary file in the same directory and rename; returns the sha256."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = text.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return sha256_bytes(data)


def write_outputs(out_dir: Path, files: Mapping[str, str]) -> dict[str, str]:
    """Write fully rendered files; on failure, remove whatever this call already wrote."""
    written: dict[str, str] = {}
    try:
        for name, text in files.items():
            written[name] = atomic_write(Path(out_dir) / name, text)
    except BaseException:
        for name in written:
            try:
                os.unlink(Path(out_dir) / name)
            except FileNotFoundError:
                pass
        raise
    return written


def read_csv(path) -> tuple[list[str], list[str], np.ndarray]:
    """Parse a file written by :func:`csv_text` into (header lines, columns, float matrix)."""
    header, body = [], []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            header.append(line[1:].strip())
        else:
            body.append(line)
    columns = body[0].split(",")
    data = np.array([[float(x) for x in row.split(",")] for row in body[1:]]) if len(body) > 1 \
        else np.zeros((0, len(columns)))
    return header, columns, data
