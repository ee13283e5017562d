"""The "DGEN1" checkpoint layout.

Little-endian binary: magic, canonical config JSON, step counter, then
parameters in lexicographic name order (u32 name length, name bytes, u32
rank, u32 extents, float32 values), then an optional optimizer block
(step counter plus first/second moments in the same order).  Canonical
ordering makes save -> load -> save byte-identical.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError
from .nn import OptimizerState, ParameterStore

MAGIC = b"DGEN1"


def _write_array(out: bytearray, arr: np.ndarray) -> None:
    out += struct.pack("<I", arr.ndim)
    out += struct.pack(f"<{arr.ndim}I", *arr.shape)
    out += np.ascontiguousarray(arr, dtype="<f4").tobytes()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def array(self) -> np.ndarray:
        rank = self.u32()
        shape = struct.unpack(f"<{rank}I", self.take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(self.take(4 * count), dtype="<f4")
        return data.reshape(shape).copy()


def save_checkpoint(path, store: ParameterStore, config_json: str, step: int,
                    opt: OptimizerState = None) -> None:
    out = bytearray()
    out += MAGIC
    cfg = config_json.encode()
    out += struct.pack("<I", len(cfg))
    out += cfg
    out += struct.pack("<Q", step)
    names = store.sorted_names()
    out += struct.pack("<I", len(names))
    for name in names:
        nb = name.encode()
        out += struct.pack("<I", len(nb))
        out += nb
        _write_array(out, store[name].data)
    out += struct.pack("<B", 1 if opt is not None else 0)
    if opt is not None:
        out += struct.pack("<Q", opt.step)
        for name in names:
            _write_array(out, opt.m[name])
            _write_array(out, opt.v[name])
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(bytes(out))


def load_checkpoint(path):
    """Returns (config dict, step, {name: array}, optimizer dict or None)."""
    buf = Path(path).read_bytes()
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path} is not a DGEN1 checkpoint")
    try:
        config = json.loads(r.take(r.u32()).decode())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"corrupt config block in {path}: {e}")
    step = r.u64()
    params = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        params[name] = r.array()
    opt = None
    if struct.unpack("<B", r.take(1))[0]:
        opt = {"step": r.u64(), "m": {}, "v": {}}
        for name in sorted(params):
            opt["m"][name] = r.array()
            opt["v"][name] = r.array()
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes in {path}")
    return config, step, params, opt


def restore_into(store: ParameterStore, params: dict, opt_state: OptimizerState = None,
                 opt_blob: dict = None) -> None:
    """Load arrays into a live store (validating shapes) and optimizer state."""
    store.load_arrays(params)
    if opt_state is not None and opt_blob is not None:
        opt_state.step = opt_blob["step"]
        for name in store.sorted_names():
            m = opt_blob["m"][name]
            v = opt_blob["v"][name]
            if m.shape != store[name].data.shape or v.shape != store[name].data.shape:
                raise ShapeError(f"optimizer moment shape mismatch for {name!r}")
            opt_state.m[name] = m.astype(store[name].data.dtype)
            opt_state.v[name] = v.astype(store[name].data.dtype)
