"""Checkpoint container and atomic file helpers.

Layout: magic, format version (u32), header length (u64), canonical JSON
header, raw little-endian float64 arrays, SHA-256 of everything before it.
Nothing time-dependent is stored, so identical parameters give identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractViolationError
from .learn.mlp import MLP

MAGIC = b"PRLCKPT\x00"
FORMAT_VERSION = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def atomic_write(path, data) -> Path:
    """Write bytes or text to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def checkpoint_bytes(nets: dict, config_hash: str, meta: dict | None = None) -> bytes:
    header = {"format": FORMAT_VERSION, "config_hash": config_hash, "meta": meta or {}, "nets": {}}
    blobs = []
    for name in sorted(nets):
        net = nets[name]
        header["nets"][name] = {**net.descriptor(), "shapes": [list(a.shape) for a in net.arrays]}
        blobs += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in net.arrays]
    head = canonical_json(header).encode()
    body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(head)) + head + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path, nets: dict, config_hash: str, meta: dict | None = None) -> Path:
    return atomic_write(path, checkpoint_bytes(nets, config_hash, meta))


def load_checkpoint(path, expect_hash: str | None = None):
    """Returns (nets, config_hash, meta)."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 12 + 32 or raw[:len(MAGIC)] != MAGIC:
        raise ContractViolationError(f"{path}: not a checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ContractViolationError(f"{path}: checkpoint checksum mismatch")
    version, hlen = struct.unpack("<IQ", body[len(MAGIC):len(MAGIC) + 12])
    if version != FORMAT_VERSION:
        raise ContractViolationError(f"{path}: unsupported checkpoint format {version}")
    off = len(MAGIC) + 12
    header = json.loads(body[off:off + hlen])
    off += hlen
    nets = {}
    for name in sorted(header["nets"]):
        d = header["nets"][name]
        arrays = []
        for shape in d["shapes"]:
            n = int(np.prod(shape))
            arrays.append(np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64))
            off += 8 * n
        nets[name] = MLP(tuple(d["sizes"]), arrays[0::2], arrays[1::2])
    if off != len(body):
        raise ContractViolationError(f"{path}: trailing bytes in checkpoint")
    if expect_hash is not None and header["config_hash"] != expect_hash:
        raise ConfigError(f"{path}: checkpoint config hash {header['config_hash']} != {expect_hash}")
    return nets, header["config_hash"], header["meta"]
