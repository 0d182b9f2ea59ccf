"""CSV and manifest files used by the command-line tools.

Point clouds: header ``x,y,z,t``. Encoder streams: header ``t,theta``.
Floats are written with ``repr`` so a read-write cycle is lossless.
"""

import csv
import json
from pathlib import Path

import numpy as np

POINTS_HEADER = ("x", "y", "z", "t")
ENCODER_HEADER = ("t", "theta")


class InputFormatError(ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = f"{path}" if path is not None else ""
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_numeric_csv(path, header) -> np.ndarray:
    """Read a float table whose first line must equal ``header``."""
    p = Path(path)
    try:
        fh = open(p, newline="")
    except OSError as exc:
        raise InputFormatError(f"cannot open ({exc.strerror})", p) from None
    with fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or [c.strip() for c in first] != list(header):
            raise InputFormatError(f"expected header {','.join(header)}", p, 1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputFormatError(f"expected {len(header)} columns, got {len(row)}", p, lineno)
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise InputFormatError(f"non-numeric value in {row!r}", p, lineno) from None
            if not all(np.isfinite(vals)):
                raise InputFormatError("non-finite value", p, lineno)
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, len(header))


def write_points(path, points, timestamps) -> None:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    t = np.asarray(timestamps, dtype=float).reshape(-1)
    write_rows(path, POINTS_HEADER, (tuple(p) + (tt,) for p, tt in zip(pts, t)))


def read_points(path):
    """``(points (N, 3), timestamps (N,))``."""
    a = read_numeric_csv(path, POINTS_HEADER)
    return a[:, :3].copy(), a[:, 3].copy()


def write_encoder(path, t, theta) -> None:
    write_rows(path, ENCODER_HEADER, zip(np.asarray(t, dtype=float), np.asarray(theta, dtype=float)))


def read_encoder(path):
    a = read_numeric_csv(path, ENCODER_HEADER)
    return a[:, 0].copy(), a[:, 1].copy()


def write_manifest(path, command: str, config: dict, outputs=()) -> None:
    from . import __version__

    doc = {"command": command, "version": __version__, "config": config,
           "outputs": [str(Path(o).name) for o in outputs]}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"cannot serialise {type(obj).__name__}")
