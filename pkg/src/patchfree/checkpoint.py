"""Flat binary parameter checkpoints.

Layout (all integers u32 little-endian)::

    b"FPGA" | version
    repeated until EOF:
        name_len | name (UTF-8) | rank | extent * rank | float32 LE * prod(extents)
"""
import struct

import numpy as np

from .errors import FormatError, ShapeError

MAGIC = b"FPGA"
VERSION = 1


def save_checkpoint(params, path):
    """Write ``params`` (a Module or an iterable of ``(name, array)``) to ``path``."""
    items = params.named_parameters() if hasattr(params, "named_parameters") else params
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, value in items:
            arr = np.asarray(getattr(value, "data", value), dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path):
    """Read a checkpoint into an insertion-ordered ``{name: float32 array}``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < 8:
        raise FormatError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    out = {}
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"{path}: truncated record at byte {pos} (need {n} bytes, "
                              f"{len(buf) - pos} left)")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape)
        out[name] = arr.astype(np.float32)
    return out


def load_into(model, path):
    """Copy checkpoint values into ``model``; names and shapes must match exactly."""
    state = load_checkpoint(path)
    params = dict(model.named_parameters())
    missing = [n for n in params if n not in state]
    extra = [n for n in state if n not in params]
    if missing or extra:
        raise ShapeError(f"{path}: checkpoint does not match model "
                         f"(missing {missing[:3]}, unexpected {extra[:3]})")
    for name, p in params.items():
        if state[name].shape != p.shape:
            raise ShapeError(f"{path}: {name} has shape {state[name].shape}, model expects {p.shape}")
        p.data = state[name].astype(p.dtype)
        p.grad = None
    return model
