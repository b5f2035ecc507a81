"""Single-file binary container for indexes, codebooks and compressed stores.

Layout: magic b"BRIX", u32 header length, UTF-8 JSON header, then the raw
array payloads at the offsets listed in the header (relative to the end of
the header).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import DataError

MAGIC = b"BRIX"
_PREFIX = struct.Struct("<4sI")


def save_container(path, kind: str, meta: dict, arrays: dict) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        raw = arr.astype(dt, copy=False).tobytes()
        entries.append({"name": name, "dtype": dt.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"kind": kind, "meta": meta, "arrays": entries}).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_container(path, expect_kind=None) -> tuple[str, dict, dict]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc})") from exc
    if len(raw) < _PREFIX.size:
        raise DataError(f"{path}: truncated container at offset 0")
    magic, hlen = _PREFIX.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r} at offset 0")
    try:
        header = json.loads(raw[_PREFIX.size:_PREFIX.size + hlen])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: corrupt header at offset {_PREFIX.size}") from exc
    kind = header["kind"]
    if expect_kind is not None and kind not in ((expect_kind,) if isinstance(expect_kind, str) else expect_kind):
        raise DataError(f"{path}: expected a {expect_kind} container, found {kind}")
    base = _PREFIX.size + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        if start + e["nbytes"] > len(raw):
            raise DataError(f"{path}: array {e['name']} truncated at offset {start}")
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"]), count=e["nbytes"] // np.dtype(e["dtype"]).itemsize, offset=start)
        arrays[e["name"]] = arr.reshape(e["shape"])
    return kind, header["meta"], arrays
