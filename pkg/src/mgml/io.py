"""Binary file formats.

``MGT1`` tensor files::

    b"MGT1" | u32 n | u32 c | u32 h | u32 w | n*c*h*w little-endian f64

``MGC1`` checkpoints::

    b"MGC1" | u32 config_len | config text (utf-8) | u32 count
    count x ( u16 name_len | name (utf-8) | 4 x u32 shape | u64 offset )
    raw little-endian f64 blocks; ``offset`` counts values from the start of this region
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError
from .tensor import Tensor

TENSOR_MAGIC = b"MGT1"
CHECKPOINT_MAGIC = b"MGC1"


def tensor_to_bytes(t: Tensor | np.ndarray) -> bytes:
    data = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
    if data.ndim != 4:
        raise ParseError(f"MGT1 holds rank-4 tensors, got shape {data.shape}")
    return TENSOR_MAGIC + struct.pack("<4I", *data.shape) + data.astype("<f8").tobytes()


def tensor_from_bytes(buf: bytes, source="<bytes>") -> Tensor:
    if buf[:4] != TENSOR_MAGIC:
        raise ParseError(f"{source}: not an MGT1 tensor file")
    if len(buf) < 20:
        raise ParseError(f"{source}: truncated MGT1 header")
    shape = struct.unpack("<4I", buf[4:20])
    count = int(np.prod(shape))
    if len(buf) != 20 + 8 * count:
        raise ParseError(f"{source}: expected {count} values for shape {shape}, file has {(len(buf) - 20) / 8}")
    return Tensor(np.frombuffer(buf, dtype="<f8", offset=20).reshape(shape).astype(np.float64))


def save_tensor(path, t) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def load_tensor(path) -> Tensor:
    return tensor_from_bytes(Path(path).read_bytes(), path)


def checkpoint_to_bytes(params: list[tuple[str, np.ndarray]], config_text: str = "") -> bytes:
    cfg = config_text.encode()
    header = [CHECKPOINT_MAGIC, struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(params))]
    blocks = []
    offset = 0
    for name, arr in params:
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 4:
            raise ParseError(f"parameter {name} must be rank 4, got {arr.shape}")
        raw = name.encode()
        header.append(struct.pack("<H", len(raw)) + raw + struct.pack("<4IQ", *arr.shape, offset))
        blocks.append(arr.astype("<f8").tobytes())
        offset += arr.size
    return b"".join(header + blocks)


def checkpoint_from_bytes(buf: bytes, source="<bytes>") -> tuple[str, list[tuple[str, np.ndarray]]]:
    try:
        if buf[:4] != CHECKPOINT_MAGIC:
            raise ParseError(f"{source}: not an MGC1 checkpoint")
        pos = 4
        (cfg_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        config_text = buf[pos : pos + cfg_len].decode()
        pos += cfg_len
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        manifest = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + nlen].decode()
            pos += nlen
            *shape, offset = struct.unpack_from("<4IQ", buf, pos)
            pos += 24
            manifest.append((name, tuple(shape), offset))
    except struct.error as exc:
        raise ParseError(f"{source}: truncated checkpoint header ({exc})") from None
    values = np.frombuffer(buf, dtype="<f8", offset=pos) if (len(buf) - pos) % 8 == 0 else None
    if values is None:
        raise ParseError(f"{source}: data region is not a whole number of f64 values")
    params = []
    for name, shape, offset in manifest:
        size = int(np.prod(shape))
        if offset + size > values.size:
            raise ParseError(f"{source}: parameter {name} runs past the end of the file")
        params.append((name, values[offset : offset + size].reshape(shape).astype(np.float64)))
    return config_text, params


def save_checkpoint(path, model, config_text: str = "") -> None:
    params = [(name, p.data) for name, p in model.named_parameters()]
    Path(path).write_bytes(checkpoint_to_bytes(params, config_text))


def load_checkpoint(path) -> tuple[str, list[tuple[str, np.ndarray]]]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"checkpoint {p} not found")
    return checkpoint_from_bytes(p.read_bytes(), p)


def load_into(model, params: list[tuple[str, np.ndarray]]) -> None:
    """Copy checkpoint values into ``model``; names and shapes must match exactly."""
    own = dict(model.named_parameters())
    names = [n for n, _ in params]
    if sorted(names) != sorted(own):
        missing = sorted(set(own) - set(names))
        extra = sorted(set(names) - set(own))
        raise ParseError(f"checkpoint does not match model: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, arr in params:
        if own[name].data.shape != arr.shape:
            raise ParseError(f"parameter {name}: checkpoint shape {arr.shape} != model {own[name].data.shape}")
        own[name].data = arr.copy()
