"""Checkpoint container.

Layout (all integers little-endian)::

    bytes 0..7    magic b"CMPCKPT1"
    bytes 8..15   uint64 length L of the JSON header
    bytes 16..    UTF-8 JSON header (sorted keys, no whitespace)
    remainder     float64 '<f8' payload, parameters concatenated in header order

The header holds ``params``: a list of ``{"name", "shape", "offset"}`` where
``offset`` counts float64 elements into the payload, plus free-form metadata
(config, config hash, seed, vocabulary, init scheme).
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"CMPCKPT1"


def dumps(state: "OrderedDict[str, np.ndarray]", meta: dict) -> bytes:
    entries = []
    offset = 0
    for name, arr in state.items():
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += int(arr.size)
    header = dict(meta)
    header["params"] = entries
    header["payload_floats"] = offset
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in state.values())
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + payload


def loads(blob: bytes):
    if blob[:8] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    flat = np.frombuffer(blob, dtype="<f8", offset=16 + hlen)
    if flat.size != header["payload_floats"]:
        raise ValueError(f"payload holds {flat.size} floats, header says {header['payload_floats']}")
    state = OrderedDict()
    for e in header.pop("params"):
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        state[e["name"]] = flat[e["offset"]:e["offset"] + n].reshape(e["shape"]).astype(np.float64)
    header.pop("payload_floats")
    return state, header


def save(path, state, meta) -> Path:
    path = Path(path)
    path.write_bytes(dumps(state, meta))
    return path


def load(path):
    return loads(Path(path).read_bytes())
