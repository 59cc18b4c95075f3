"""Versioned checkpoint container.

Layout (little-endian)::

    b"FWCK" | uint32 version | uint32 n | n bytes of UTF-8 JSON header
    uint32 tensor count
    per tensor: uint32 name length | name | uint32 ndim | ndim x uint32 dims | FWF1 matrix

Each tensor is stored as an FWF1 matrix of shape ``(prod(dims[:-1]), dims[-1])``
(scalars and vectors use one row).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .dataio import LoadError, decode_matrix, encode_matrix

MAGIC = b"FWCK"
VERSION = 1
_U32 = struct.Struct("<I")


def encode(header: dict, tensors: dict[str, torch.Tensor]) -> bytes:
    meta = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(meta)), meta, _U32.pack(len(tensors))]
    for name, t in tensors.items():
        arr = t.detach().cpu().numpy()
        dims = arr.shape
        key = name.encode("utf-8")
        parts += [_U32.pack(len(key)), key, _U32.pack(len(dims))]
        parts += [_U32.pack(d) for d in dims]
        cols = dims[-1] if dims else 1
        parts.append(encode_matrix(arr.reshape(-1, cols) if arr.size else arr.reshape(0, cols)))
    return b"".join(parts)


def decode(buf: bytes, path="<bytes>") -> tuple[dict, dict[str, torch.Tensor]]:
    def u32(off):
        if off + 4 > len(buf):
            raise LoadError(path, off, "truncated checkpoint")
        return _U32.unpack_from(buf, off)[0], off + 4

    if buf[:4] != MAGIC:
        raise LoadError(path, 0, f"bad magic {buf[:4]!r}")
    version, off = u32(4)
    if version != VERSION:
        raise LoadError(path, 4, f"unsupported checkpoint version {version}")
    n, off = u32(off)
    header = json.loads(buf[off : off + n].decode("utf-8"))
    off += n
    count, off = u32(off)
    tensors = {}
    for _ in range(count):
        n, off = u32(off)
        name = buf[off : off + n].decode("utf-8")
        off += n
        ndim, off = u32(off)
        dims = []
        for _ in range(ndim):
            d, off = u32(off)
            dims.append(d)
        m = decode_matrix(buf, path, off)
        off += 12 + m.size * 4
        tensors[name] = torch.from_numpy(np.ascontiguousarray(m).reshape(dims))
    return header, tensors


def save(path, kind: str, config: dict, module: torch.nn.Module, extra: dict | None = None) -> None:
    header = {"kind": kind, "config": config}
    if extra:
        header["extra"] = extra
    state = {k: v for k, v in module.state_dict().items()}
    Path(path).write_bytes(encode(header, state))


def load(path) -> tuple[dict, dict[str, torch.Tensor]]:
    return decode(Path(path).read_bytes(), path)


def save_fusion(path, model, extra: dict | None = None) -> None:
    save(path, "fusion", model.cfg.to_dict(), model, extra)


def load_fusion(path):
    from .fusionnet import FusionConfig, FusionModel

    header, state = load(path)
    if header.get("kind") != "fusion":
        raise LoadError(path, 12, f"expected a fusion checkpoint, got {header.get('kind')!r}")
    model = FusionModel(FusionConfig(**header["config"]))
    model.load_state_dict(state)
    model.eval()
    return model
