"""Named-parameter checkpoint container.

Layout: magic, u32 header length, UTF-8 JSON header, raw little-endian
payload. The header carries a format version, the run config for
provenance, and one index entry per tensor (name, dtype, shape, offset).
Partial loading by name pattern is what lets E2T-PTR pick up only the
EEG-side modules.
"""

from __future__ import annotations

import fnmatch
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import TransferError

MAGIC = b"ETCK"
VERSION = 1


def save(path, named_arrays: dict, config: dict | None = None):
    """Write name -> array pairs plus an embedded config."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in named_arrays.items():
        data = np.ascontiguousarray(arr)
        raw = data.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": data.dtype.str,
                "shape": list(data.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"version": VERSION, "config": config or {}, "tensors": entries}).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load(path):
    """Return (config, dict name -> array)."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise TransferError(f"{path}: not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<I", raw[len(MAGIC) : len(MAGIC) + 4])
    header = json.loads(raw[len(MAGIC) + 4 : len(MAGIC) + 4 + hlen].decode("utf-8"))
    if header["version"] != VERSION:
        raise TransferError(f"{path}: unsupported checkpoint version {header['version']}")
    payload = raw[len(MAGIC) + 4 + hlen :]
    arrays = {}
    for entry in header["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(payload[start : start + n], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header["config"], arrays


@dataclass
class TransferReport:
    matched: list
    unmatched_checkpoint: list  # checkpoint names no pattern selected
    missing_in_model: list  # selected names absent from the model


def load_partial(path, named_params: dict, patterns) -> TransferReport:
    """Restore checkpoint tensors whose names match any pattern.

    Matching is fnmatch-style (``eeg_encoder.*``). Raises on shape mismatch
    and on patterns that select nothing; unmatched checkpoint names are
    reported, not errors.
    """
    _, arrays = load(path)
    selected = {
        name: arr for name, arr in arrays.items() if any(fnmatch.fnmatch(name, pat) for pat in patterns)
    }
    if not selected:
        raise TransferError(f"{path}: no checkpoint tensors match patterns {list(patterns)}")

    dead_patterns = [pat for pat in patterns if not any(fnmatch.fnmatch(name, pat) for name in arrays)]
    if dead_patterns:
        raise TransferError(f"{path}: patterns match no checkpoint tensors: {dead_patterns}")

    matched, missing, mismatched = [], [], []
    for name, arr in selected.items():
        if name not in named_params:
            missing.append(name)
            continue
        target = named_params[name]
        if tuple(target.data.shape) != tuple(arr.shape):
            mismatched.append(f"{name}: checkpoint {tuple(arr.shape)} vs model {tuple(target.data.shape)}")
            continue
        target.data = arr.astype(target.data.dtype)
        matched.append(name)
    if mismatched:
        raise TransferError("shape mismatch on load: " + "; ".join(mismatched))
    unmatched = [name for name in arrays if name not in selected]
    return TransferReport(matched=sorted(matched), unmatched_checkpoint=sorted(unmatched), missing_in_model=sorted(missing))
