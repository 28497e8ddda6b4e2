"""Named-tensor checkpoint container.

One file holds a JSON manifest (tensor names, shapes, offsets, plus a free-form
metadata block) followed by the concatenated little-endian float64 payloads.
Writes are atomic: the file appears fully formed or not at all.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import CheckpointMismatchError

_MAGIC = b"VGCNTNS1"


def atomic_write_bytes(path, payload):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def save_tensors(path, tensors, meta=None):
    """Write named float64 tensors plus a JSON metadata block."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        blob = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"tensors": entries, "meta": meta or {}},
                        sort_keys=True).encode("utf-8")
    payload = _MAGIC + struct.pack("<Q", len(header)) + header + b"".join(blobs)
    atomic_write_bytes(path, payload)


def load_tensors(path):
    """Read a checkpoint back as ({name: array}, meta dict)."""
    raw = Path(path).read_bytes()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise CheckpointMismatchError(f"{path}: not a tensor checkpoint")
    pos = len(_MAGIC)
    (header_len,) = struct.unpack("<Q", raw[pos:pos + 8])
    pos += 8
    try:
        header = json.loads(raw[pos:pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointMismatchError(f"{path}: corrupt manifest ({err})") from None
    pos += header_len
    body = raw[pos:]
    tensors = {}
    for entry in header["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        shape = tuple(entry["shape"])
        if start + nbytes > len(body) or nbytes != 8 * int(np.prod(shape)):
            raise CheckpointMismatchError(
                f"{path}: tensor {entry['name']!r} payload does not match its shape")
        tensors[entry["name"]] = np.frombuffer(
            body[start:start + nbytes], dtype="<f8").reshape(shape).copy()
    return tensors, header.get("meta", {})
