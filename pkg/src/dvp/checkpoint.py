"""Binary checkpoint format (all integers and floats little-endian).

::

    magic      8 bytes   b"DVPCKPT\\0"
    version    u32       FORMAT_VERSION
    arch       4 x u32   depth, channels, kernel, padding (0 reflect, 1 zeros)
    step       u64       completed optimisation steps
    nparams    u32
    params     nparams x array
    adam       f64 lr, beta1, beta2, eps; u64 step; then nparams x array (m), nparams x array (v)
    beta       array     variance coefficients
    eps_var    f64
    text       3 x blob  config text, RNG state JSON, update-buffer JSON
    crc32      u32       of every preceding byte

``array`` is ``u32 ndim, ndim x u32 dims, u64 count, count x f64``;
``blob`` is ``u64 length`` followed by UTF-8 bytes.
"""
from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import Architecture

MAGIC = b"DVPCKPT\0"
FORMAT_VERSION = 1
_PADDING = {"reflect": 0, "zeros": 1}


class CheckpointError(ValueError):
    pass


@dataclass
class CheckpointData:
    arch: Architecture
    step: int
    params: list[np.ndarray]
    adam_hyper: tuple[float, float, float, float]
    adam_step: int
    adam_m: list[np.ndarray]
    adam_v: list[np.ndarray]
    beta: np.ndarray
    eps_var: float
    config_text: str = ""
    rng_state: dict | None = None
    buffer: list[dict] | None = None


def _write_array(out: io.BytesIO, a: np.ndarray) -> None:
    a = np.asarray(a, dtype="<f8")
    out.write(struct.pack("<I", a.ndim))
    out.write(struct.pack(f"<{a.ndim}I", *a.shape))
    out.write(struct.pack("<Q", a.size))
    out.write(a.tobytes())


def _write_blob(out: io.BytesIO, text: str) -> None:
    raw = text.encode("utf-8")
    out.write(struct.pack("<Q", len(raw)))
    out.write(raw)


def encode(ck: CheckpointData) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", FORMAT_VERSION))
    a = ck.arch
    out.write(struct.pack("<4I", a.depth, a.channels, a.kernel, _PADDING[a.padding]))
    out.write(struct.pack("<Q", ck.step))
    out.write(struct.pack("<I", len(ck.params)))
    for p in ck.params:
        _write_array(out, p)
    out.write(struct.pack("<4d", *ck.adam_hyper))
    out.write(struct.pack("<Q", ck.adam_step))
    for arr in list(ck.adam_m) + list(ck.adam_v):
        _write_array(out, arr)
    _write_array(out, ck.beta)
    out.write(struct.pack("<d", ck.eps_var))
    _write_blob(out, ck.config_text)
    _write_blob(out, json.dumps(ck.rng_state, sort_keys=True))
    _write_blob(out, json.dumps(_buffer_to_json(ck.buffer), sort_keys=True))
    body = out.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: needed {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self) -> np.ndarray:
        (ndim,) = self.unpack("<I")
        if ndim > 8:
            raise CheckpointError(f"implausible array rank {ndim} at offset {self.pos}")
        shape = self.unpack(f"<{ndim}I")
        (count,) = self.unpack("<Q")
        if count != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"array count {count} does not match shape {shape}")
        return np.frombuffer(self.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)

    def blob(self) -> str:
        (n,) = self.unpack("<Q")
        return self.take(n).decode("utf-8")


def decode(data: bytes) -> CheckpointData:
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    if len(data) < len(MAGIC) + 8:
        raise CheckpointError("truncated checkpoint")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    r = _Reader(body)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    if zlib.crc32(body) != crc:
        raise CheckpointError("checksum mismatch: checkpoint is truncated or corrupted")
    depth, channels, kernel, pad = r.unpack("<4I")
    padding = {v: k for k, v in _PADDING.items()}.get(pad)
    if padding is None:
        raise CheckpointError(f"unknown padding code {pad}")
    arch = Architecture(depth, channels, kernel, padding)
    (step,) = r.unpack("<Q")
    (n,) = r.unpack("<I")
    params = [r.array() for _ in range(n)]
    hyper = r.unpack("<4d")
    (adam_step,) = r.unpack("<Q")
    m = [r.array() for _ in range(n)]
    v = [r.array() for _ in range(n)]
    beta = r.array()
    (eps_var,) = r.unpack("<d")
    config_text = r.blob()
    rng_state = json.loads(r.blob())
    buffer = _buffer_from_json(json.loads(r.blob()))
    if r.pos != len(body):
        raise CheckpointError(f"{len(body) - r.pos} trailing bytes after checkpoint payload")
    return CheckpointData(arch, step, params, hyper, adam_step, m, v, beta, eps_var,
                          config_text, rng_state, buffer)


def save(path, ck: CheckpointData) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(ck))
    tmp.replace(path)


def load(path) -> CheckpointData:
    return decode(Path(path).read_bytes())


def _buffer_to_json(buffer):
    if buffer is None:
        return None
    out = []
    for entry in buffer:
        item = {}
        for k, v in entry.items():
            if isinstance(v, np.ndarray):
                item[k] = {"f64le": np.asarray(v, "<f8").tobytes().hex()}
            else:
                item[k] = float(v)
        out.append(item)
    return out


def _buffer_from_json(obj):
    if obj is None:
        return None
    out = []
    for item in obj:
        entry = {}
        for k, v in item.items():
            if isinstance(v, dict):
                entry[k] = np.frombuffer(bytes.fromhex(v["f64le"]), dtype="<f8").astype(np.float64)
            else:
                entry[k] = v
        out.append(entry)
    return out
