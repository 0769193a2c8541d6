"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"PBJCKPT\\0"                     magic, 8 bytes
    u32 version
    u32 header length, header bytes   UTF-8 JSON: head, backbone kind, C, d, gamma,
                                      backbone config, free-form run metadata
    u32 block count
    per block:
        u16 name length, name         UTF-8, "param:<name>" or "buffer:<name>"
        u32 ndim, u32 * ndim dims
        float32 payload, row-major
        u32 crc32 of the payload
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .model import BackboneConfig, build_model

MAGIC = b"PBJCKPT\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def _blocks(model):
    for name, p in model.named_parameters().items():
        yield f"param:{name}", p.data
    for name, b in model.buffers.items():
        yield f"buffer:{name}", b


def save_checkpoint(model, path, meta: dict | None = None) -> Path:
    """Write ``model`` to ``path``; ``meta`` (JSON-serialisable) rides along in the header."""
    path = Path(path)
    header = {
        "head": model.head_kind,
        "backbone_kind": model.config.kind,
        "num_classes": model.num_classes,
        "latent_dim": model.config.latent_dim,
        "gamma": model.gamma,
        "backbone": model.config.to_dict(),
        "meta": meta if meta is not None else getattr(model, "meta", {}),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    blocks = list(_blocks(model))
    out = bytearray(MAGIC)
    out += struct.pack("<I", FORMAT_VERSION)
    out += struct.pack("<I", len(header_bytes)) + header_bytes
    out += struct.pack("<I", len(blocks))
    for name, arr in blocks:
        name_bytes = name.encode()
        payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        out += struct.pack("<H", len(name_bytes)) + name_bytes
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += payload
        out += struct.pack("<I", zlib.crc32(payload))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(bytes(out))
    return path


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated at offset {self.pos}")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Header dict and named float32 arrays, validated but not yet bound to a model."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointVersionError(f"{path}: not a PBJ checkpoint (bad magic)")
    r = _Reader(raw, path)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    (hlen,) = r.unpack("<I")
    header = json.loads(r.take(hlen).decode())
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        payload = r.take(4 * int(np.prod(shape, dtype=np.int64)))
        (crc,) = r.unpack("<I")
        if zlib.crc32(payload) != crc:
            raise CheckpointError(f"{path}: corrupt block {name!r}")
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - r.pos} trailing bytes")
    return header, arrays


def load_checkpoint(path):
    header, arrays = read_checkpoint(path)
    config = BackboneConfig.from_dict(header["backbone"])
    model = build_model(header["head"], config, header["num_classes"], gamma=header["gamma"])
    expected = {name for name, _ in _blocks(model)}
    if expected != set(arrays):
        raise CheckpointError(f"{path}: block names do not match a {header['head']} model")
    for name, p in model.named_parameters().items():
        arr = arrays[f"param:{name}"]
        if arr.shape != p.shape:
            raise CheckpointError(f"{path}: {name} has shape {arr.shape}, expected {p.shape}")
        p.data = arr
    for name in model.buffers:
        model.buffers[name] = arrays[f"buffer:{name}"].copy()
    model.meta = header.get("meta", {})
    return model.eval()
