"""Single-file binary model format (``EMSQ``).

Layout, all integers little-endian::

    magic      4 bytes  b"EMSQ"
    version    u16
    kind       u8       0 = dan, 1 = lstm
    count      u32      number of tensors
    per tensor:
        name_len u16, name (UTF-8)
        dtype    u8     0 = f64, 1 = q8, 2 = q16
        rows     u32, cols u32
        scale    f64    (quantized dtypes only)
        payload  rows*cols values (<f8, <i1 or <i2)

Bias vectors are stored as 1 x n and restored to 1-D on load.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .models import MODEL_KINDS
from .quantize import QuantizedMatrix, QuantizedModel

MAGIC = b"EMSQ"
VERSION = 1
KIND_CODES = {"dan": 0, "lstm": 1}
DTYPES = {0: ("<f8", None), 1: ("<i1", 8), 2: ("<i2", 16)}
BITS_TO_DTYPE = {8: 1, 16: 2}
EMBEDDING_TENSORS = ("embedding", "w_b")


class ModelFileError(ValueError):
    pass


def _is_vector(name: str) -> bool:
    return name.endswith(".b")


def serialize(model) -> bytes:
    """Encode a :class:`Model` or :class:`QuantizedModel`."""
    quantized = isinstance(model, QuantizedModel)
    names = list(model.tensors if quantized else model.params)
    out = [MAGIC, struct.pack("<HBI", VERSION, KIND_CODES[model.kind], len(names))]
    for name in names:
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        if quantized:
            q = model.tensors[name]
            out.append(struct.pack("<BIId", BITS_TO_DTYPE[q.bits], q.rows, q.cols, q.scale))
            out.append(q.codes.astype(DTYPES[BITS_TO_DTYPE[q.bits]][0]).tobytes())
        else:
            w = model.params[name]
            w2 = w.reshape(1, -1) if w.ndim == 1 else w
            out.append(struct.pack("<BII", 0, *w2.shape))
            out.append(np.ascontiguousarray(w2, dtype="<f8").tobytes())
    return b"".join(out)


def deserialize(blob: bytes):
    view = memoryview(blob)
    pos = 0

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise ModelFileError("truncated model file")
        vals = struct.unpack_from(fmt, view, pos)
        pos += size
        return vals

    if bytes(view[:4]) != MAGIC:
        raise ModelFileError("not an EMSQ model file (bad magic)")
    pos = 4
    version, kind_code, count = take("<HBI")
    if version != VERSION:
        raise ModelFileError(f"unsupported format version {version}")
    kinds = {v: k for k, v in KIND_CODES.items()}
    if kind_code not in kinds:
        raise ModelFileError(f"unknown model kind code {kind_code}")
    kind = kinds[kind_code]
    params, qtensors, bits_seen = {}, {}, set()
    for _ in range(count):
        (name_len,) = take("<H")
        name = bytes(view[pos:pos + name_len]).decode("utf-8")
        pos += name_len
        dtype, rows, cols = take("<BII")
        if dtype not in DTYPES:
            raise ModelFileError(f"{name}: unknown dtype code {dtype}")
        np_dtype, bits = DTYPES[dtype]
        scale = take("<d")[0] if bits else None
        nbytes = rows * cols * np.dtype(np_dtype).itemsize
        if pos + nbytes > len(view):
            raise ModelFileError(f"{name}: truncated payload")
        arr = np.frombuffer(view[pos:pos + nbytes], dtype=np_dtype).reshape(rows, cols)
        pos += nbytes
        if bits:
            bits_seen.add(bits)
            qtensors[name] = QuantizedMatrix(rows, cols, bits, scale,
                                             arr.astype(np.int8 if bits == 8 else np.int16))
        else:
            w = arr.astype(np.float64)
            params[name] = w.reshape(-1) if _is_vector(name) else w
    if pos != len(view):
        raise ModelFileError("trailing bytes after last tensor")
    if qtensors and params:
        raise ModelFileError("mixed full-precision and quantized tensors")
    if qtensors:
        if len(bits_seen) != 1:
            raise ModelFileError("tensors quantized at different bit widths")
        shapes = {n: (q.cols,) if _is_vector(n) else (q.rows, q.cols) for n, q in qtensors.items()}
        return QuantizedModel(kind, bits_seen.pop(), qtensors, shapes)
    return MODEL_KINDS[kind](params)


def save_model(path, model) -> int:
    """Write ``model`` to ``path``; returns the file size in bytes."""
    blob = serialize(model)
    Path(path).write_bytes(blob)
    return len(blob)


def load_model(path):
    return deserialize(Path(path).read_bytes())


def payload_bytes(model, names=None) -> int:
    """Bytes of tensor payload (no headers), optionally restricted to ``names``."""
    if isinstance(model, QuantizedModel):
        items = model.tensors.items()
        return sum(q.payload_bytes for n, q in items if names is None or n in names)
    return sum(w.size * 8 for n, w in model.params.items() if names is None or n in names)


def embedding_payload_bytes(model) -> int:
    return payload_bytes(model, EMBEDDING_TENSORS)


def reference_payload_bytes(model, bits: int = 32) -> int:
    """Payload the same tensors would occupy at ``bits`` per weight."""
    if isinstance(model, QuantizedModel):
        count = sum(q.rows * q.cols for q in model.tensors.values())
    else:
        count = sum(w.size for w in model.params.values())
    return count * bits // 8

