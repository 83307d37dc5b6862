"""CSV/JSON writers and run manifests.

Floats are written with ``repr`` (shortest round-trip form) so reruns are
byte-identical and values survive a text round trip exactly.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(target, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write rows to a path or text stream with ``\\n`` line endings."""
    def _emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])

    if isinstance(target, (str, os.PathLike)):
        with open(target, "w", newline="") as fh:
            _emit(fh)
    else:
        _emit(target)


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r]
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    if hasattr(o, "to_json"):
        return o.to_json()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def dump_json(obj, path) -> None:
    Path(path).write_text(dumps(obj))


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    write_csv(buf, header, rows)
    return buf.getvalue()


@dataclass
class RunManifest:
    """Everything needed to reproduce a CLI run."""

    command: str
    argv: list[str]
    config: dict
    master_seed: int | None = None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    wall_clock_s: float = 0.0
    version: str = __version__

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path) -> None:
        self.outputs[str(path)] = sha256_file(path)

    def to_json(self) -> dict:
        return asdict(self)
