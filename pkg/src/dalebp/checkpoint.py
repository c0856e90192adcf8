"""
Binary checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic b"DALEBPCK"
    u32       format version (1)
    u64       length of the JSON metadata blob
    ...       UTF-8 JSON: {"config": ..., "epoch": ..., "optimizer_step": ..., "extra": ...}
    u32       number of weight matrices
    ...       DaleMatrix records
    u32       number of optimizer moment matrices
    ...       DaleMatrix records named "m:<param>" / "v:<param>" (sign 0)

A DaleMatrix record is: u16 name length, name bytes, i8 sign, u8 ndim (=2),
two u64 dims, then rows*cols float64 values in row-major order.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

from .errors import ParseError
from .learning import OptimizerState
from .weights import MIXED, DaleMatrix

MAGIC = b"DALEBPCK"
VERSION = 1


def _records(mats) -> bytes:
    return struct.pack("<I", len(mats)) + b"".join(m.to_bytes() for m in mats)


def dumps(params: dict[str, DaleMatrix], config: dict, epoch: int = 0,
          opt: OptimizerState | None = None, extra: dict | None = None) -> bytes:
    opt = opt or OptimizerState()
    meta = json.dumps(
        {"config": config, "epoch": epoch, "optimizer_step": opt.step, "extra": extra or {}},
        sort_keys=True,
    ).encode()
    moments = [DaleMatrix(a, MIXED, f"{k}:{name}") for k, d in (("m", opt.m), ("v", opt.v)) for name, a in sorted(d.items())]
    return (
        MAGIC
        + struct.pack("<IQ", VERSION, len(meta))
        + meta
        + _records([params[k] for k in sorted(params)])
        + _records(moments)
    )


def _read_records(buf, offset):
    if len(buf) < offset + 4:
        raise ParseError(f"truncated checkpoint: record count needs 4 bytes at {offset}", offset=offset)
    (n,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    out = []
    for _ in range(n):
        m, offset = DaleMatrix.from_buffer(buf, offset)
        out.append(m)
    return out, offset


def loads(buf: bytes) -> dict:
    """Decode a checkpoint into ``{"meta", "params", "optimizer"}``."""
    if buf[:8] != MAGIC:
        raise ParseError("not a checkpoint (bad magic)", offset=0)
    if len(buf) < 20:
        raise ParseError("truncated checkpoint header", offset=len(buf))
    version, n_meta = struct.unpack_from("<IQ", buf, 8)
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", offset=8)
    end = 20 + n_meta
    if len(buf) < end:
        raise ParseError(f"truncated metadata: need {n_meta} bytes at 20, have {len(buf) - 20}", offset=len(buf))
    try:
        meta = json.loads(buf[20:end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"corrupt metadata: {exc}", offset=20) from None
    params, offset = _read_records(buf, end)
    moments, offset = _read_records(buf, offset)
    if offset != len(buf):
        raise ParseError(f"{len(buf) - offset} trailing bytes", offset=offset)
    opt = OptimizerState(step=meta["optimizer_step"])
    for m in moments:
        kind, name = m.name.split(":", 1)
        getattr(opt, kind)[name] = m.values
    return {"meta": meta, "params": {m.name: m for m in params}, "optimizer": opt}


def save(path, network, epoch: int, opt: OptimizerState | None = None, extra: dict | None = None, config=None):
    """Write atomically (temp file + rename) so a crash never leaves a half checkpoint."""
    path = Path(path)
    blob = dumps(network.parameters(), config or {}, epoch, opt, extra)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    return path


def load(path) -> dict:
    return loads(Path(path).read_bytes())


def restore(network, ckpt: dict):
    """Copy checkpointed weights into a network built with the same config."""
    params = network.parameters()
    missing = set(params) ^ set(ckpt["params"])
    if missing:
        raise ParseError(f"checkpoint/network parameter mismatch: {sorted(missing)}", offset=None)
    for name, m in params.items():
        src = ckpt["params"][name]
        if src.shape != m.shape or src.pre_sign != m.pre_sign:
            raise ParseError(f"{name}: shape or sign differs from network", offset=None)
        m.values[...] = src.values
    return network
