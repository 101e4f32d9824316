"""Structured-text serialization shared by the CLI and module exports.

Complex data is stored as nested row-major [re, im] pairs; CSV output is
RFC-4180 style with a header row.  JSON writing is deterministic (sorted
keys, no timestamps) so identical runs produce bit-identical artifacts.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


def complex_to_pairs(arr: np.ndarray):
    """Nested lists of [re, im] pairs mirroring the array shape."""
    a = np.asarray(arr, dtype=np.complex128)
    stacked = np.stack([a.real, a.imag], axis=-1)
    return stacked.tolist()


def pairs_to_complex(payload) -> np.ndarray:
    a = np.asarray(payload, dtype=np.float64)
    if a.shape[-1] != 2:
        raise ValueError("expected trailing [re, im] pairs")
    return a[..., 0] + 1j * a[..., 1]


def vector_payload(components: np.ndarray) -> dict:
    return {"kind": "vector", "dim": int(components.size), "data": complex_to_pairs(components)}


def operator_payload(matrix: np.ndarray) -> dict:
    return {"kind": "operator", "dim": int(matrix.shape[0]), "data": complex_to_pairs(matrix)}


def write_json(path, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    Path(path).write_text(text + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def _cell(value):
    """Shortest round-trip text for numbers; numpy scalars lose their wrapper."""
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader]
    return header, rows
