"""
shared/utils/container.py
Binary array container used for feature stores and model checkpoints.

Layout:
    8 bytes   magic  b"SDWBIN01"
    4 bytes   little-endian uint32 header length
    N bytes   UTF-8 JSON header {"meta": {...}, "arrays": [{"name", "shape"}, ...]}
    rest      float64 little-endian bodies, row-major, in header order
"""

import json
import struct
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np

from shared.exceptions import InputMissingError, SchemaError

MAGIC = b"SDWBIN01"
_DTYPE = np.dtype("<f8")


def write_container(path: Path, meta: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> Path:
    path = Path(path)
    entries = []
    bodies = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype=_DTYPE)
        entries.append({"name": name, "shape": list(a.shape)})
        bodies.append(a.tobytes(order="C"))
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for body in bodies:
            fh.write(body)
    return path


def read_container(path: Path) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise InputMissingError(f"container not found: {path}")
    raw = path.read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise SchemaError(f"{path} is not a workbench container (bad magic)")
    (hlen,) = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])
    offset = len(MAGIC) + 4
    header = json.loads(raw[offset:offset + hlen].decode("utf-8"))
    offset += hlen
    arrays: Dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * _DTYPE.itemsize
        if offset + nbytes > len(raw):
            raise SchemaError(f"{path} is truncated in array '{entry['name']}'")
        arrays[entry["name"]] = np.frombuffer(raw, dtype=_DTYPE, count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    return header["meta"], arrays
