"""Binary containers for feature tensors and model checkpoints.

All integers are little-endian u32, all arrays little-endian float64 in
row-major order.

Feature file::

    b"PGTN" | version u32 | molecule count u32
    per molecule: n u32 | F_n u32 | F_p u32 | x (n*F_n f64) | p (n*n*F_p f64)

Checkpoint file::

    b"PGTC" | version u32 | metadata length u32 | metadata (UTF-8 JSON)
    | tensor count u32
    per tensor: name length u32 | name (UTF-8) | ndim u32 | dims u32 * ndim
    | values f64 * prod(dims)

The metadata holds the model config, feature layout, task, fold and seed.
Target normalization statistics are stored as the tensors ``norm.mean``
and ``norm.std`` so they round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import PagtnConfig
from .molgraph import path_feature_layout
from .smiles import NUM_NODE_FEATURES

__all__ = [
    "FEATURE_MAGIC",
    "CHECKPOINT_MAGIC",
    "FORMAT_VERSION",
    "FormatError",
    "Checkpoint",
    "write_features",
    "read_features",
    "save_checkpoint",
    "load_checkpoint",
    "feature_layout",
]

FEATURE_MAGIC = b"PGTN"
CHECKPOINT_MAGIC = b"PGTC"
FORMAT_VERSION = 1

_U32 = struct.Struct("<I")


class FormatError(ValueError):
    pass


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def f64(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def _check_header(r: _Reader, magic: bytes) -> None:
    got = r.take(4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version} (this build reads {FORMAT_VERSION})")


def write_features(path, molecules) -> None:
    """Write ``(x, p)`` pairs (or objects with ``.x`` and ``.p``)."""
    chunks = [FEATURE_MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(molecules))]
    for m in molecules:
        x, p = (m.x, m.p) if hasattr(m, "x") else m
        n, f_n = x.shape
        if p.shape[:2] != (n, n):
            raise ValueError(f"path tensor shape {p.shape} does not match {n} atoms")
        chunks += [_U32.pack(n), _U32.pack(f_n), _U32.pack(p.shape[2]), _f64(x), _f64(p)]
    Path(path).write_bytes(b"".join(chunks))


def read_features(path) -> list[tuple[np.ndarray, np.ndarray]]:
    r = _Reader(Path(path).read_bytes())
    _check_header(r, FEATURE_MAGIC)
    out = []
    for _ in range(r.u32()):
        n, f_n, f_p = r.u32(), r.u32(), r.u32()
        x = r.f64(n * f_n).reshape(n, f_n)
        p = r.f64(n * n * f_p).reshape(n, n, f_p)
        out.append((x, p))
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after last molecule")
    return out


def feature_layout(d: int) -> dict:
    return {
        "F_n": NUM_NODE_FEATURES,
        "F_p": path_feature_layout(d)["rings"][1],
        "d": d,
        "path_blocks": {k: list(v) for k, v in path_feature_layout(d).items()},
    }


@dataclass
class Checkpoint:
    config: PagtnConfig
    params: dict[str, np.ndarray]
    norm_mean: np.ndarray
    norm_std: np.ndarray
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def layout(self) -> dict:
        return feature_layout(self.config.d)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta = {
        "config": ckpt.config.to_dict(),
        "layout": ckpt.layout,
        "seed": ckpt.seed,
        "meta": ckpt.meta,
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    tensors = dict(ckpt.params)
    tensors["norm.mean"] = np.asarray(ckpt.norm_mean, dtype=np.float64)
    tensors["norm.std"] = np.asarray(ckpt.norm_std, dtype=np.float64)
    chunks = [CHECKPOINT_MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(blob)), blob, _U32.pack(len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode()
        chunks += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        chunks += [_U32.pack(s) for s in arr.shape]
        chunks.append(_f64(arr))
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    _check_header(r, CHECKPOINT_MAGIC)
    meta = json.loads(r.take(r.u32()).decode())
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        shape = tuple(r.u32() for _ in range(r.u32()))
        tensors[name] = r.f64(int(np.prod(shape, dtype=np.int64))).reshape(shape)
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after last tensor")
    config = PagtnConfig(**meta["config"])
    if meta["layout"] != feature_layout(config.d):
        raise FormatError("feature layout in checkpoint does not match this build")
    mean = tensors.pop("norm.mean")
    std = tensors.pop("norm.std")
    return Checkpoint(config, tensors, mean, std, meta.get("seed", 0), meta.get("meta", {}))
