"""Binary checkpoint container.

Layout::

    b"PW2SSCKP"                8-byte magic
    uint32 little-endian       format version
    uint64 little-endian       manifest length in bytes
    manifest                   UTF-8 JSON (names, shapes, offsets, meta)
    blobs                      little-endian float64, in manifest order
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from ..errors import IoFailure, MissingParameter, VersionMismatch

MAGIC = b"PW2SSCKP"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    moments: Optional[Dict[str, np.ndarray]] = None
    meta: dict = field(default_factory=dict)
    step: int = 0
    version: int = FORMAT_VERSION

    def require(self, name):
        if name not in self.params:
            raise MissingParameter(f"checkpoint has no parameter {name!r}")
        return self.params[name]


def _entries(arrays, offset):
    entries, blobs = [], []
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        raw = data.tobytes()
        entries.append({"name": name, "shape": list(data.shape), "offset": offset,
                        "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    return entries, blobs, offset


def save_checkpoint(path, params, moments=None, meta=None, step=0, version=FORMAT_VERSION):
    """Write ``params`` (name -> array, or a Module) and optional optimizer moments."""
    if hasattr(params, "state_dict"):
        params = params.state_dict()
    names = list(params)
    if len(set(names)) != len(names):
        raise ValueError("parameter names must be unique")
    p_entries, p_blobs, offset = _entries(params, 0)
    m_entries, m_blobs, _ = _entries(moments or {}, offset)
    manifest = {
        "params": p_entries,
        "optimizer_state": moments is not None,
        "moments": m_entries,
        "step": int(step),
        "meta": meta or {},
    }
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQ", version, len(header)))
            fh.write(header)
            for blob in p_blobs + m_blobs:
                fh.write(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {os.fspath(path)!r}: {exc}") from exc


def load_checkpoint(path, expected_version=FORMAT_VERSION) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {os.fspath(path)!r}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise IoFailure(f"{os.fspath(path)!r} is not a checkpoint (bad magic)")
    if len(raw) < 20:
        raise IoFailure(f"{os.fspath(path)!r} is truncated")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != expected_version:
        raise VersionMismatch(f"checkpoint format version {version}, reader expects {expected_version}")
    try:
        manifest = json.loads(raw[20:20 + hlen].decode("utf-8"))
    except ValueError as exc:
        raise IoFailure(f"corrupt checkpoint manifest: {exc}") from exc
    base = 20 + hlen

    def read(entries):
        out = {}
        for e in entries:
            start = base + e["offset"]
            chunk = raw[start:start + e["nbytes"]]
            if len(chunk) != e["nbytes"]:
                raise IoFailure(f"checkpoint blob for {e['name']!r} is truncated")
            out[e["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(e["shape"]).astype(np.float64)
        return out

    moments = read(manifest["moments"]) if manifest.get("optimizer_state") else None
    return Checkpoint(read(manifest["params"]), moments, manifest.get("meta", {}),
                      manifest.get("step", 0), version)
