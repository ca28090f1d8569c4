"""Checkpoints: a flat float32 blob plus a text manifest.

A checkpoint is a directory holding ``weights.bin`` (little-endian float32
arrays back to back) and ``manifest.txt``. Manifest lines are either
``meta <key> <value>`` or ``array <name> <shape> <byte offset>`` where shape is
comma separated (``-`` for a scalar).
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = []
    for key, val in sorted((meta or {}).items()):
        if any(c.isspace() for c in str(key)) or "\n" in str(val):
            raise CheckpointError(f"meta entry {key!r} must be whitespace-free / single-line")
        lines.append(f"meta {key} {val}")
    offset = 0
    tmp = path / "weights.bin.tmp"
    with open(tmp, "wb") as fh:
        for name in sorted(arrays):
            if any(c.isspace() for c in name):
                raise CheckpointError(f"array name {name!r} contains whitespace")
            arr = np.asarray(arrays[name], dtype="<f4")  # keeps 0-d shapes; tobytes() is C order
            shape = ",".join(str(s) for s in arr.shape) or "-"
            lines.append(f"array {name} {shape} {offset}")
            fh.write(arr.tobytes())
            offset += arr.nbytes
    os.replace(tmp, path / "weights.bin")
    (path / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    path = Path(path)
    manifest, blob_path = path / "manifest.txt", path / "weights.bin"
    if not manifest.is_file() or not blob_path.is_file():
        raise CheckpointError(f"{path}: not a checkpoint (missing manifest.txt or weights.bin)")
    blob = blob_path.read_bytes()
    arrays, meta = {}, {}
    for lineno, line in enumerate(manifest.read_text().splitlines()):
        tok = line.split(" ", 2) if line.startswith("meta ") else line.split()
        if not tok:
            continue
        if tok[0] == "meta" and len(tok) == 3:
            meta[tok[1]] = tok[2]
        elif tok[0] == "array" and len(tok) == 4:
            shape = () if tok[2] == "-" else tuple(int(s) for s in tok[2].split(","))
            offset = int(tok[3])
            n = int(np.prod(shape)) if shape else 1
            if offset + 4 * n > len(blob):
                raise CheckpointError(f"{manifest}:{lineno + 1}: array {tok[1]} runs past end of weights.bin")
            arrays[tok[1]] = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(shape).copy()
        else:
            raise CheckpointError(f"{manifest}:{lineno + 1}: malformed line {line!r}")
    return arrays, meta
