"""Binary checkpoint format.

Layout::

    b"BCFPLCK1"                      8-byte magic
    uint32 LE header length
    header (UTF-8 JSON): version, architecture fingerprint, array directory
    raw little-endian float32 arrays at the directory's offsets
    uint32 LE CRC-32 of everything between the magic and the CRC
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import (
    ArchitectureMismatchError,
    CheckpointFormatError,
    CheckpointVersionError,
    ChecksumError,
)
from .nn import BUFFER_SHAPES, PARAM_SHAPES, BcfplModel
from .train import AdamWState

MAGIC = b"BCFPLCK1"
FORMAT_VERSION = 1


def fingerprint(shapes: dict) -> str:
    spec = ";".join(f"{k}:{'x'.join(map(str, s))}" for k, s in shapes.items())
    return hashlib.sha256(spec.encode()).hexdigest()[:16]


ARCHITECTURE = fingerprint({**PARAM_SHAPES, **BUFFER_SHAPES})


def write_arrays(path, arrays: dict, meta: dict | None = None, architecture: str | None = None) -> None:
    """Low-level writer; ``architecture`` defaults to the fingerprint of the given shapes."""
    directory, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    model_shapes = {k: tuple(a.shape) for k, a in arrays.items() if not k.startswith("adam.")}
    header = {
        "version": FORMAT_VERSION,
        "architecture": architecture or fingerprint(model_shapes),
        "arrays": directory,
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = struct.pack("<I", len(hbytes)) + hbytes + b"".join(blobs)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + payload + struct.pack("<I", crc))
    os.replace(tmp, path)


def read_arrays(path) -> tuple[dict, dict]:
    """Return ``(header, arrays)`` after validating magic, checksum and version."""
    buf = Path(path).read_bytes()
    if len(buf) < len(MAGIC) or buf[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic bytes)")
    if len(buf) < len(MAGIC) + 8:
        raise CheckpointFormatError(f"{path}: file too short")
    payload, (crc,) = buf[len(MAGIC):-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{path}: checksum mismatch, file is corrupt")
    (hlen,) = struct.unpack("<I", payload[:4])
    try:
        header = json.loads(payload[4:4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {header.get('version')}, expected {FORMAT_VERSION}"
        )
    body = payload[4 + hlen:]
    arrays = {}
    for entry in header["arrays"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(body):
            raise CheckpointFormatError(f"{path}: array {entry['name']} extends past end of file")
        arr = np.frombuffer(body[start:start + n], dtype="<f4").astype(np.float32)
        arrays[entry["name"]] = arr.reshape(entry["shape"])
    return header, arrays


def save_checkpoint(path, model: BcfplModel, optimizer: AdamWState | None = None, meta: dict | None = None) -> None:
    arrays = dict(model.arrays())
    meta = dict(meta or {})
    meta["dropout_p"] = model.dropout_p
    if optimizer is not None:
        meta["adam_t"] = optimizer.t
        for k in model.params:
            arrays[f"adam.m.{k}"] = optimizer.m[k]
            arrays[f"adam.v.{k}"] = optimizer.v[k]
    write_arrays(path, arrays, meta)


def load_checkpoint(path) -> tuple[BcfplModel, AdamWState | None, dict]:
    """Return ``(model, optimizer_state_or_None, meta)``."""
    header, arrays = read_arrays(path)
    expected = {**PARAM_SHAPES, **BUFFER_SHAPES}
    found = {k: tuple(a.shape) for k, a in arrays.items() if not k.startswith("adam.")}
    if header["architecture"] != ARCHITECTURE or found != expected:
        diffs = sorted(
            f"{k}: {found.get(k)} vs {expected.get(k)}"
            for k in set(found) | set(expected)
            if found.get(k) != expected.get(k)
        )
        raise ArchitectureMismatchError(f"{path}: architecture mismatch ({', '.join(diffs) or 'fingerprint'})")
    meta = header.get("meta", {})
    model = BcfplModel({k: arrays[k] for k in PARAM_SHAPES}, {k: arrays[k] for k in BUFFER_SHAPES},
                       dropout_p=meta.get("dropout_p", 0.5), mode="infer")
    state = None
    if "adam_t" in meta:
        state = AdamWState({k: arrays[f"adam.m.{k}"] for k in PARAM_SHAPES},
                           {k: arrays[f"adam.v.{k}"] for k in PARAM_SHAPES}, int(meta["adam_t"]))
    return model, state, meta
