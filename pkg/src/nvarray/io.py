"""File formats shared by the pipeline stages.

Floats are written with ``repr`` so that reading a file back reproduces the
exact values, and no file carries timestamps: identical inputs give
byte-identical outputs.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    def __init__(self, path, line: int | None, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}" if line is not None else f"{path}: {message}")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: list[str], rows, comments: list[str] = ()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path, columns: dict[str, type]) -> tuple[dict[str, list], dict[str, str]]:
    """Read a CSV whose header must name exactly ``columns`` (in order).

    Returns (column -> list of values, comment key/value pairs from ``# key=value`` lines).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing input file {path}")
    out = {k: [] for k in columns}
    meta = {}
    header_seen = False
    with open(path, encoding="utf-8", newline="") as fh:
        for n, line in enumerate(fh, start=1):
            text = line.rstrip("\r\n")
            if text.startswith("#"):
                body = text[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            if not text.strip():
                continue
            cells = next(csv.reader([text]))
            if not header_seen:
                if cells != list(columns):
                    raise FormatError(path, n, f"expected header {','.join(columns)}, got {text}")
                header_seen = True
                continue
            if len(cells) != len(columns):
                raise FormatError(path, n, f"expected {len(columns)} fields, got {len(cells)}")
            for (k, typ), cell in zip(columns.items(), cells):
                try:
                    out[k].append(typ(cell))
                except ValueError:
                    raise FormatError(path, n, f"bad {typ.__name__} value {cell!r} in column {k}") from None
    if not header_seen:
        raise FormatError(path, None, "no header line")
    return out, meta


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(obj), fh, indent=1, sort_keys=True, allow_nan=False)
        fh.write("\n")


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing input file {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(path, exc.lineno, exc.msg) from None


def write_matrix_csv(path, data: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_pgm(path, data: np.ndarray) -> None:
    """16-bit binary portable graymap scaled to the image maximum."""
    data = np.asarray(data, dtype=float)
    top = float(data.max()) if data.size else 0.0
    scaled = np.zeros(data.shape, dtype=">u2") if top <= 0 else \
        np.rint(data / top * 65535).astype(">u2")
    ny, nx = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n65535\n".encode("ascii"))
        fh.write(scaled.tobytes())


TIMESTAMP_COLUMNS = {"channel": str, "t_ns": float}


def write_timestamps(path, stream) -> None:
    """Two-column event list; the acquisition duration rides in a comment line."""
    a, b = stream.detector_a_times, stream.detector_b_times
    ch = np.concatenate([np.zeros(len(a), dtype=np.int8), np.ones(len(b), dtype=np.int8)])
    t = np.concatenate([a, b])
    order = np.lexsort((ch, t))
    names = np.array(["A", "B"])
    write_csv(path, list(TIMESTAMP_COLUMNS), zip(names[ch[order]], t[order]),
              comments=[f"duration_ns={stream.duration!r}"])


def read_timestamps(path):
    """(a_times, b_times, duration_ns) from a timestamp CSV."""
    cols, meta = read_csv(path, TIMESTAMP_COLUMNS)
    if "duration_ns" not in meta:
        raise FormatError(path, None, "missing '# duration_ns=<value>' comment")
    try:
        duration = float(meta["duration_ns"])
    except ValueError:
        raise FormatError(path, 1, f"bad duration {meta['duration_ns']!r}") from None
    ch = np.array(cols["channel"], dtype=object)
    t = np.array(cols["t_ns"], dtype=float)
    bad = ~np.isin(ch, ["A", "B"])
    if bad.any():
        raise FormatError(path, None, f"unknown channel {ch[bad][0]!r}; expected A or B")
    if np.any(t < 0) or np.any(t > duration):
        raise FormatError(path, None, "timestamps outside [0, duration_ns]")
    return np.sort(t[ch == "A"]), np.sort(t[ch == "B"]), duration
