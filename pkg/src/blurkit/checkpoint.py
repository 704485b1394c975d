"""Binary checkpoint format (little-endian throughout).

Layout:

    magic   8 bytes  b"BLURKITC"
    version u32      (currently 1)
    config  u32 length + UTF-8 JSON (training config snapshot)
    step    u64
    nparams u32
    per parameter, sorted by name:
        name    u16 length + UTF-8
        rank    u8
        extents u32 * rank
        data    float32 LE, C order
    opt     u8 flag; if 1: u64 step, then per parameter (same order) the
            Adam first and second moments as float32 LE

Parameters are stored as float32 regardless of compute precision, so a
save/load round trip of a float32 model reproduces forward outputs
bit-exactly, and save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .autodiff import Tensor
from .optim import AdamState

MAGIC = b"BLURKITC"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


class Checkpoint:
    def __init__(self, params: dict[str, Tensor], opt: AdamState | None, step: int, config: dict):
        self.params = params
        self.opt = opt
        self.step = step
        self.config = config


def save_checkpoint(
    path: str | os.PathLike,
    params: dict[str, Tensor],
    opt: AdamState | None,
    step: int,
    config: dict,
) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(cfg)))
    chunks.append(cfg)
    chunks.append(struct.pack("<Q", step))
    names = sorted(params)
    chunks.append(struct.pack("<I", len(names)))
    for name in names:
        data = params[name].data
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(np.ascontiguousarray(data, dtype="<f4").tobytes())
    if opt is None:
        chunks.append(struct.pack("<B", 0))
    else:
        chunks.append(struct.pack("<B", 1))
        chunks.append(struct.pack("<Q", opt.step))
        for name in names:
            chunks.append(np.ascontiguousarray(opt.m[name], dtype="<f4").tobytes())
            chunks.append(np.ascontiguousarray(opt.v[name], dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals[0] if len(vals) == 1 else vals


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(8) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    version = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    cfg_len = r.unpack("<I")
    config = json.loads(r.take(cfg_len).decode("utf-8"))
    step = r.unpack("<Q")
    nparams = r.unpack("<I")
    params: dict[str, Tensor] = {}
    for _ in range(nparams):
        name_len = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        rank = r.unpack("<B")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank)) if rank else ()
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
        params[name] = Tensor._wrap(arr.astype(np.float32).copy())
    opt: AdamState | None = None
    if r.unpack("<B"):
        opt_step = r.unpack("<Q")
        m: dict[str, np.ndarray] = {}
        v: dict[str, np.ndarray] = {}
        for name in sorted(params):
            size = params[name].size
            shape = params[name].shape
            m[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32).copy()
            v[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32).copy()
        opt = AdamState(m=m, v=v, step=opt_step)
    return Checkpoint(params=params, opt=opt, step=step, config=config)


def check_same_names(loaded: dict[str, Tensor], expected: dict[str, Tensor]) -> None:
    """Reject checkpoints whose tensor names do not match the model being restored."""
    unknown = sorted(set(loaded) - set(expected))
    missing = sorted(set(expected) - set(loaded))
    if unknown:
        raise CheckpointError(f"unknown tensor name(s) in checkpoint: {unknown[:3]}")
    if missing:
        raise CheckpointError(f"checkpoint is missing tensor(s): {missing[:3]}")
    for name, p in loaded.items():
        if p.shape != expected[name].shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {p.shape}, expected {expected[name].shape}"
            )
