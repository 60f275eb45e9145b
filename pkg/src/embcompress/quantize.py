"""Post-training symmetric fixed-point quantization (8 or 16 bit, per tensor)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import MODEL_KINDS, Model

CODE_DTYPES = {8: np.int8, 16: np.int16}


class QuantizeError(ValueError):
    pass


@dataclass
class QuantizedMatrix:
    rows: int
    cols: int
    bits: int
    scale: float
    codes: np.ndarray   # signed ints, shape (rows, cols)

    @property
    def qmax(self) -> int:
        return 2 ** (self.bits - 1) - 1

    @property
    def payload_bytes(self) -> int:
        return self.rows * self.cols * self.bits // 8

    def dequantize(self) -> np.ndarray:
        return self.codes.astype(np.float64) * self.scale


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(m: np.ndarray, bits: int) -> QuantizedMatrix:
    """``scale = max|m| / (2**(bits-1) - 1)``; codes round half away from zero.

    An all-zero matrix gets ``scale = 1``.
    """
    if bits not in CODE_DTYPES:
        raise QuantizeError(f"unsupported bit width {bits}; expected 8 or 16")
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2 or not np.all(np.isfinite(m)):
        raise QuantizeError("quantize needs a finite 2-D matrix")
    qmax = 2 ** (bits - 1) - 1
    peak = float(np.max(np.abs(m))) if m.size else 0.0
    scale = peak / qmax if peak > 0 else 1.0
    codes = np.clip(_round_half_away(m / scale), -qmax, qmax).astype(CODE_DTYPES[bits])
    return QuantizedMatrix(m.shape[0], m.shape[1], bits, scale, codes)


@dataclass
class QuantizedModel:
    """Quantized tensors of a trained model; inference dequantizes to float64.

    No retraining happens after quantization.
    """

    kind: str
    bits: int
    tensors: dict          # name -> QuantizedMatrix
    shapes: dict           # name -> original parameter shape
    dropout: float = 0.0

    def dequantized(self) -> Model:
        params = {name: q.dequantize().reshape(self.shapes[name])
                  for name, q in self.tensors.items()}
        return MODEL_KINDS[self.kind](params, dropout=self.dropout)

    @property
    def payload_bytes(self) -> int:
        return sum(q.payload_bytes for q in self.tensors.values())

    def predict(self, batch) -> np.ndarray:
        return self.dequantized().predict(batch)


def quantize_model(model: Model, bits: int) -> QuantizedModel:
    """Quantize every weight matrix and bias vector independently."""
    tensors = {name: quantize(w, bits) for name, w in model.params.items()}
    shapes = {name: w.shape for name, w in model.params.items()}
    return QuantizedModel(model.kind, bits, tensors, shapes, dropout=model.dropout)
