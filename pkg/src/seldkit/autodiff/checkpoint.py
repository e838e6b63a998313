"""Named-parameter checkpoints.

Binary layout (little-endian), one record per entry::

    u32 name_length | utf-8 name | u32 ndim | u32 dims[ndim] | f32 payload

A JSON manifest next to the binary (``<path>.json``) lists every entry's
name, shape and byte offset so the file can be inspected without parsing it.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .tensor import ShapeError


def save_checkpoint(path, state: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    with open(path, "wb") as fh:
        for name, arr in state.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            entries.append({"name": name, "shape": list(arr.shape), "offset": fh.tell()})
            fh.write(arr.tobytes())
    manifest = {"format": "seldkit-params-v1", "entries": entries, "meta": meta or {}}
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=1))
    return path


def load_checkpoint(path, expected: dict[str, tuple[int, ...]] | None = None) -> dict[str, np.ndarray]:
    """Read a checkpoint; if ``expected`` shapes are given, every entry is validated."""
    data = Path(path).read_bytes()
    pos = 0
    state: dict[str, np.ndarray] = {}
    while pos < len(data):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).copy()
        pos += 4 * count
    if expected is not None:
        for name, shape in expected.items():
            if name not in state:
                raise KeyError(f"checkpoint lacks {name!r}")
            if tuple(state[name].shape) != tuple(shape):
                raise ShapeError(f"{name}: checkpoint shape {state[name].shape} != expected {tuple(shape)}")
    return state
