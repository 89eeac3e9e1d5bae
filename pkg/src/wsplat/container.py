"""Length-prefixed binary container: named little-endian arrays plus a JSON index.

Layout::

    8 bytes   magic
    8 bytes   header length H (uint64, little-endian)
    H bytes   UTF-8 JSON {"meta": ..., "entries": [{name, dtype, shape, offset, nbytes}]}
    ...       concatenated array payloads; offsets are relative to the payload start
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"WSPLCKP1"
RAW_IMAGE_MAGIC = b"WSPLRAW1"


def _le(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode(arrays: dict[str, np.ndarray], meta: dict | None = None, magic: bytes = CHECKPOINT_MAGIC) -> bytes:
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        data = _le(np.asarray(arr))
        raw = data.tobytes()
        entries.append(
            {"name": name, "dtype": data.dtype.str, "shape": list(data.shape),
             "offset": offset, "nbytes": len(raw)}
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "entries": entries}, sort_keys=True).encode()
    return magic + struct.pack("<Q", len(header)) + header + b"".join(blobs)


def decode(data: bytes, magic: bytes = CHECKPOINT_MAGIC) -> tuple[dict[str, np.ndarray], dict]:
    if data[:8] != magic:
        raise ValueError(f"bad container magic {data[:8]!r}, expected {magic!r}")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + hlen].decode())
    base = 16 + hlen
    arrays = {}
    for e in header["entries"]:
        start = base + e["offset"]
        buf = data[start : start + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise ValueError(f"truncated payload for {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header["meta"]


def write_container(path, arrays, meta=None, magic: bytes = CHECKPOINT_MAGIC) -> None:
    atomic_write_bytes(path, encode(arrays, meta, magic))


def read_container(path, magic: bytes = CHECKPOINT_MAGIC):
    return decode(Path(path).read_bytes(), magic)
