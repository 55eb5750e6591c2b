"""Binary checkpoint format.

Layout (little-endian)::

    b"CBRB" | u32 version | u32 tensor count
    per tensor: u16 name length | name (utf-8) | u8 dtype | u8 rank | u32 dims[rank] | data
    u32 config length | config echo (utf-8)

dtype code 0 is float32 and 1 is float64. Files are parsed completely
before any parameter is touched, so a failed load never leaves a model
half-updated.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .data import atomic_write_bytes

MAGIC = b"CBRB"
VERSION = 1
DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


class CheckpointError(ValueError):
    """Unreadable, corrupt or incompatible checkpoint."""


@dataclass
class Checkpoint:
    tensors: dict          # name -> ndarray, in file order
    config_text: str = ""


def encode(tensors: dict, config_text: str = "") -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in DTYPE_CODES:
            raise CheckpointError(f"tensor {name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<BB", DTYPE_CODES[dt], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    text = config_text.encode("utf-8")
    out.append(struct.pack("<I", len(text)) + text)
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf, self.pos, self.source = buf, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.source}: truncated file (wanted {n} bytes at offset {self.pos})")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes, source: str = "<bytes>") -> Checkpoint:
    r = _Reader(buf, source)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise CheckpointError(f"{source}: bad magic {buf[:4]!r}, not a checkpoint")
    r.take(4)
    version, count = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"{source}: version mismatch (file {version}, supported {VERSION})")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        code, rank = r.unpack("<BB")
        if code not in CODE_DTYPES:
            raise CheckpointError(f"{source}: tensor {name} has unknown dtype code {code}")
        dims = r.unpack(f"<{rank}I") if rank else ()
        dt = CODE_DTYPES[code]
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        tensors[name] = np.frombuffer(r.take(n * dt.itemsize), dtype=dt).reshape(dims).copy()
    (clen,) = r.unpack("<I")
    config_text = r.take(clen).decode("utf-8")
    if r.pos != len(buf):
        raise CheckpointError(f"{source}: {len(buf) - r.pos} trailing bytes after config echo")
    return Checkpoint(tensors, config_text)


def save_checkpoint(model, path, config_text: str = "") -> None:
    tensors = {name: p.data for name, p in model.named_parameters()}
    atomic_write_bytes(Path(path), encode(tensors, config_text))


def save_state(state: dict, path, config_text: str = "") -> None:
    atomic_write_bytes(Path(path), encode(state, config_text))


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(buf, str(path))


def load_checkpoint(model, path, strict: bool = True, prefix: Optional[str] = None) -> Checkpoint:
    """Copy checkpoint tensors into ``model``.

    With ``prefix`` only tensors whose names start with it are loaded (e.g.
    ``"res."`` to seed the residual branch); other model parameters are left
    alone. ``strict`` requires the selected names to match the model's
    parameters one-to-one. Every check runs before the first write.
    """
    ckpt = read_checkpoint(path)
    params = dict(model.named_parameters())
    selected = {k: v for k, v in ckpt.tensors.items() if prefix is None or k.startswith(prefix)}
    wanted = {k for k in params if prefix is None or k.startswith(prefix)}
    if prefix is not None and not selected:
        raise CheckpointError(f"{path}: no tensors match prefix {prefix!r}")
    unknown = sorted(set(selected) - set(params))
    if unknown and strict:
        raise CheckpointError(f"{path}: unknown tensor name(s) {', '.join(unknown[:5])}")
    missing = sorted(wanted - set(selected))
    if missing and strict:
        raise CheckpointError(f"{path}: missing tensor(s) {', '.join(missing[:5])}")
    for name, arr in selected.items():
        if name in params and params[name].shape != arr.shape:
            raise CheckpointError(f"{path}: tensor {name} has shape {arr.shape}, "
                                  f"model expects {params[name].shape}")
    for name, arr in selected.items():
        if name in params:
            params[name].data[...] = arr
    return ckpt
