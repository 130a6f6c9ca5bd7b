"""Versioned binary checkpoint format.

Layout (all integers little-endian)::

    b"SKIM"                     magic
    uint32                      format_version
    uint32 n, n bytes           JSON header: config, step, meta, param manifest
    float32[...]                parameters, concatenated in manifest order

The manifest order is :func:`skim.model.param_spec` order.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from skim.model import ModelConfig, param_spec

MAGIC = b"SKIM"
FORMAT_VERSION = 1
_LE_F32 = np.dtype("<f4")


class CheckpointError(Exception):
    pass


class TruncatedCheckpoint(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class ParameterMismatch(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    step: int = 0
    meta: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, _ in param_spec(self.config):
            h.update(np.ascontiguousarray(self.params[name], dtype=_LE_F32).tobytes())
        return h.hexdigest()


def save(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    spec = param_spec(ckpt.config)
    header = json.dumps({
        "config": ckpt.config.to_dict(),
        "step": int(ckpt.step),
        "meta": ckpt.meta,
        "params": [[name, list(shape)] for name, shape in spec],
    }, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name, shape in spec:
            arr = ckpt.params[name]
            if arr.shape != shape:
                raise ParameterMismatch(f"{name}: shape {arr.shape} != expected {shape}")
            fh.write(np.ascontiguousarray(arr, dtype=_LE_F32).tobytes())
    tmp.replace(path)
    return path


def load(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise TruncatedCheckpoint(f"{path}: file too short ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format_version {version}, expected {FORMAT_VERSION}")
    (hlen,) = struct.unpack_from("<I", data, 8)
    if 12 + hlen > len(data):
        raise TruncatedCheckpoint(f"{path}: header truncated")
    header = json.loads(data[12:12 + hlen])
    config = ModelConfig(**header["config"])
    spec = param_spec(config)
    manifest = [(name, tuple(shape)) for name, shape in header["params"]]
    if manifest != spec:
        raise ParameterMismatch(
            f"{path}: parameter manifest ({sum(math.prod(s) for _, s in manifest)} values) "
            f"does not match config ({sum(math.prod(s) for _, s in spec)} values)"
        )
    expected = sum(math.prod(shape) for _, shape in spec) * 4
    body = memoryview(data)[12 + hlen:]
    if len(body) < expected:
        raise TruncatedCheckpoint(f"{path}: expected {expected} parameter bytes, found {len(body)}")
    if len(body) > expected:
        raise CheckpointError(f"{path}: {len(body) - expected} trailing bytes")
    params, pos = {}, 0
    for name, shape in spec:
        n = math.prod(shape)
        params[name] = np.frombuffer(body, dtype=_LE_F32, count=n, offset=pos).astype(np.float32).reshape(shape)
        pos += 4 * n
    return Checkpoint(config, params, header["step"], header.get("meta", {}), version)
