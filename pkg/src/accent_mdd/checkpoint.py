"""Binary model checkpoints.

Layout (all integers unsigned 64-bit little-endian)::

    b"AMDD1"
    u64 config_len, config_len bytes of UTF-8 ``key=value`` lines
    repeated until EOF:
        u64 name_len, name bytes (UTF-8)
        u64 rank, rank x u64 dims
        prod(dims) x float64 little-endian, C order

Parameters are written in store order, so equal models give equal bytes.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .layers import ParamStore
from .model import AccentMDD, ModelConfig

MAGIC = b"AMDD1"
_U64 = struct.Struct("<Q")


class CheckpointError(ValueError):
    pass


def dumps(model: AccentMDD) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    cfg = model.config.to_text().encode("utf-8")
    buf.write(_U64.pack(len(cfg)))
    buf.write(cfg)
    for name, t in model.store:
        raw = name.encode("utf-8")
        buf.write(_U64.pack(len(raw)))
        buf.write(raw)
        data = np.ascontiguousarray(t.data, dtype="<f8")
        buf.write(_U64.pack(data.ndim))
        for d in data.shape:
            buf.write(_U64.pack(d))
        buf.write(data.tobytes(order="C"))
    return buf.getvalue()


def _read(fh, n: int) -> bytes:
    b = fh.read(n)
    if len(b) != n:
        raise CheckpointError("truncated checkpoint")
    return b


def _u64(fh) -> int:
    return _U64.unpack(_read(fh, 8))[0]


def loads(blob: bytes) -> AccentMDD:
    fh = io.BytesIO(blob)
    if fh.read(len(MAGIC)) != MAGIC:
        raise CheckpointError("not an AMDD1 checkpoint (bad magic)")
    config = ModelConfig.from_text(_read(fh, _u64(fh)).decode("utf-8"))
    store = ParamStore()
    while fh.tell() < len(blob):
        name = _read(fh, _u64(fh)).decode("utf-8")
        rank = _u64(fh)
        shape = tuple(_u64(fh) for _ in range(rank))
        n = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(_read(fh, 8 * n), dtype="<f8").astype(np.float64).reshape(shape)
        store.add(name, data)
    return AccentMDD(config, store=store)


def save(model: AccentMDD, path) -> None:
    Path(path).write_bytes(dumps(model))


def load(path) -> AccentMDD:
    return loads(Path(path).read_bytes())
