"""Self-describing checkpoint container with deterministic bytes.

Layout (all little-endian):

    bytes 0..7   magic ``HFREIDV1``
    bytes 8..11  uint32 header length in bytes
    header       UTF-8 JSON: {"config": {...}, "arrays": [
                     {"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    payload      raw C-order array bytes at the stated offsets
                 (offsets relative to the payload start)

Arrays are stored sorted by name and the header JSON uses sorted keys, so
identical (config, arrays) always produce identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import InputError

MAGIC = b"HFREIDV1"


def save_checkpoint(path: str, config: dict, arrays: dict[str, np.ndarray]):
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        blob = arr.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"config": config, "arrays": entries}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise InputError(f"{path} is not a checkpoint file (bad magic {magic!r})")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    arrays = {}
    for entry in header["arrays"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(payload[start : start + nbytes], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header["config"], arrays
