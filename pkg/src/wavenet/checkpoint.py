"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"WVNT"  u32 version  u64 len  <UTF-8 JSON document>
    u32 tensor count
    per tensor: u16 name len, name, u8 rank, u32 dims[rank], f32 data
    u64 byte length of everything above (trailer)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IntegrityError, VersionError
from .model import ModelConfig, param_shapes

MAGIC = b"WVNT"
VERSION = 1


@dataclass
class Checkpoint:
    """Model config plus named float64 arrays (values are float32-representable)."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    vocab: dict = field(default_factory=dict)  # {"file", "size", "sha256"}
    rng: dict = field(default_factory=dict)    # {"seed", "step"}
    extra: dict = field(default_factory=dict)  # dataset schema, train config, ...
    version: int = VERSION


def to_storage_precision(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype="<f4").astype(np.float64)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    doc = json.dumps(
        {"model": ckpt.config.to_dict(), "vocab": ckpt.vocab, "rng": ckpt.rng, "extra": ckpt.extra},
        sort_keys=True,
    ).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", ckpt.version), struct.pack("<Q", len(doc)), doc]
    parts.append(struct.pack("<I", len(ckpt.params)))
    for name, arr in ckpt.params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    payload = b"".join(parts)
    tmp = Path(path).with_suffix(Path(path).suffix + ".tmp")
    tmp.write_bytes(payload + struct.pack("<Q", len(payload)))
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise IntegrityError("checkpoint ends in the middle of a record")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", buf[4:8])
    if version != VERSION:
        raise VersionError(f"{path}: format version {version}, expected {VERSION}")
    if len(buf) < 16 or struct.unpack("<Q", buf[-8:])[0] != len(buf) - 8:
        raise IntegrityError(f"{path}: length check failed (truncated or padded file)")
    r = _Reader(buf[:-8])
    r.pos = 8
    (doc_len,) = r.unpack("<Q")
    try:
        doc = json.loads(r.take(doc_len).decode("utf-8"))
        config = ModelConfig.from_dict(doc["model"])
    except (ValueError, KeyError, TypeError) as exc:
        raise IntegrityError(f"{path}: unreadable config document ({exc})") from None
    expected = param_shapes(config)
    (count,) = r.unpack("<I")
    if count != len(expected):
        raise IntegrityError(f"{path}: {count} tensors, config implies {len(expected)}")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8", errors="replace")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        if expected.get(name) != tuple(dims):
            raise IntegrityError(f"{path}: tensor {name!r} dims {list(dims)} do not match config")
        size = int(np.prod(dims, dtype=np.int64))
        params[name] = np.frombuffer(r.take(4 * size), dtype="<f4").astype(np.float64).reshape(dims)
    if r.pos != len(r.buf):
        raise IntegrityError(f"{path}: {len(r.buf) - r.pos} unexpected trailing bytes")
    if set(params) != set(expected):
        raise IntegrityError(f"{path}: missing tensors {sorted(set(expected) - set(params))}")
    return Checkpoint(
        config=config,
        params={k: params[k] for k in expected},
        vocab=doc.get("vocab", {}),
        rng=doc.get("rng", {}),
        extra=doc.get("extra", {}),
        version=version,
    )
