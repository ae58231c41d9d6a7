"""Binary checkpoint format.

Layout (all integers little-endian u32, reals little-endian float32)::

    "AFMCKPT1" | version | len, descriptor (UTF-8 key=value lines)
    | count | count x tensor | count | count x tensor (momentum buffers)

    tensor := len, name (UTF-8) | rank | rank x dim | data (row-major)

Optimizer scalars (learning rate, momentum, step) travel in the descriptor
under ``optimizer.*`` keys so they keep full precision.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .autodiff import OptimizerState, Tensor
from .errors import FormatError
from .networks import NetworkParams, parse_descriptor, topology_descriptor

MAGIC = b"AFMCKPT1"
VERSION = 1
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    params: NetworkParams
    optimizer: Optional[OptimizerState] = None

    @property
    def topology(self):
        return self.params.topology


def _descriptor(ckpt: Checkpoint) -> str:
    text = topology_descriptor(ckpt.topology)
    if ckpt.optimizer is not None:
        opt = ckpt.optimizer
        extra = {"optimizer.lr": repr(float(opt.lr)),
                 "optimizer.momentum": repr(float(opt.momentum)),
                 "optimizer.step": str(int(opt.step))}
        lines = text.splitlines() + [f"{k}={v}" for k, v in extra.items()]
        text = "".join(line + "\n" for line in sorted(lines))
    return text


def _write_str(fh, s: str):
    b = s.encode("utf-8")
    fh.write(_U32.pack(len(b)))
    fh.write(b)


def _write_tensors(fh, tensors: List[Tuple[str, np.ndarray]]):
    fh.write(_U32.pack(len(tensors)))
    for name, arr in tensors:
        _write_str(fh, name)
        fh.write(_U32.pack(arr.ndim))
        for d in arr.shape:
            fh.write(_U32.pack(d))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def to_bytes(ckpt: Checkpoint) -> bytes:
    fh = io.BytesIO()
    fh.write(MAGIC)
    fh.write(_U32.pack(VERSION))
    _write_str(fh, _descriptor(ckpt))
    _write_tensors(fh, [(k, t.data) for k, t in ckpt.params.items()])
    opt = ckpt.optimizer
    buffers = [] if opt is None else [(k, opt.buffers[k]) for k in ckpt.params if k in opt.buffers]
    _write_tensors(fh, buffers)
    return fh.getvalue()


def save(path, ckpt: Checkpoint) -> None:
    try:
        Path(path).write_bytes(to_bytes(ckpt))
    except OSError as exc:
        raise FormatError(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, raw: bytes, source):
        self.raw, self.pos, self.source = raw, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.source}: truncated checkpoint")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def tensors(self) -> Dict[str, np.ndarray]:
        out = {}
        for _ in range(self.u32()):
            name = self.string()
            shape = tuple(self.u32() for _ in range(self.u32()))
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(self.take(4 * n), dtype="<f4").reshape(shape)
            out[name] = arr.astype(np.float32)
        return out


def from_bytes(raw: bytes, source="<bytes>") -> Checkpoint:
    r = _Reader(raw, source)
    if r.take(8) != MAGIC:
        raise FormatError(f"{source}: not a checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    text = r.string()
    topo_lines, opt_kv = [], {}
    for line in text.splitlines():
        if line.startswith("optimizer."):
            key, _, value = line.partition("=")
            opt_kv[key[len("optimizer."):]] = value
        else:
            topo_lines.append(line)
    topology = parse_descriptor("\n".join(topo_lines))
    tensors = r.tensors()
    buffers = r.tensors()
    if r.pos != len(raw):
        raise FormatError(f"{source}: {len(raw) - r.pos} trailing bytes")
    params = NetworkParams(topology, {k: Tensor(v, requires_grad=True) for k, v in tensors.items()})
    opt = None
    if opt_kv:
        opt = OptimizerState(lr=float(opt_kv["lr"]), momentum=float(opt_kv["momentum"]),
                             buffers=buffers, step=int(opt_kv["step"]))
    return Checkpoint(params, opt)


def load(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(raw, source=path)
