"""Per-tensor fake quantization: min/max observer, quantizer, dequantizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .multlib import operand_range

ASYMMETRIC = "asymmetric"
SYMMETRIC = "symmetric"
MODES = (ASYMMETRIC, SYMMETRIC)


class RangeOverflowError(ValueError):
    """Observed range is too wide for a finite scale."""


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int
    bits: int
    signed: bool = False

    def __post_init__(self):
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale!r}")
        if self.signed and self.zero_point != 0:
            raise ValueError("symmetric (signed) quantization requires zero point 0")
        lo, hi = self.range
        if not lo <= self.zero_point <= hi:
            raise ValueError(f"zero point {self.zero_point} outside [{lo}, {hi}]")

    @property
    def range(self) -> tuple[int, int]:
        return operand_range(self.bits, self.signed)

    def as_dict(self) -> dict:
        return {"scale": self.scale, "zero_point": self.zero_point, "bits": self.bits, "signed": self.signed}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantParams":
        return cls(float(d["scale"]), int(d["zero_point"]), int(d["bits"]), bool(d["signed"]))


def round_half_away(a):
    """Round to nearest integer, ties away from zero."""
    a = np.asarray(a, dtype=np.float64)
    return np.sign(a) * np.floor(np.abs(a) + 0.5)


def observe(values, bits: int, mode: str = ASYMMETRIC) -> QuantParams:
    """Quantization parameters from the tensor's min and max.

    Asymmetric mode widens the observed range to include 0 so the zero point
    stays representable; this is a no-op whenever ``min <= 0 <= max``.
    An all-equal range falls back to ``scale=1, zero_point=0``.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot observe an empty tensor")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    vmin, vmax = float(v.min()), float(v.max())
    if not (np.isfinite(vmin) and np.isfinite(vmax)):
        raise ValueError("cannot observe a tensor containing non-finite values")
    if mode == SYMMETRIC:
        amax = max(abs(vmin), abs(vmax))
        if amax == 0.0:
            return QuantParams(1.0, 0, bits, True)
        return QuantParams(amax / ((1 << (bits - 1)) - 1), 0, bits, True)
    vmin, vmax = min(vmin, 0.0), max(vmax, 0.0)
    if vmax == vmin:
        return QuantParams(1.0, 0, bits, False)
    scale = _finite_scale((vmax - vmin) / ((1 << bits) - 1))
    zp = int(-round_half_away(vmin / scale))
    return QuantParams(scale, min(max(zp, 0), (1 << bits) - 1), bits, False)


def _finite_scale(scale: float) -> float:
    if not np.isfinite(scale):
        raise RangeOverflowError("observed range overflows the quantization scale")
    return scale


def _unclamped(values, p: QuantParams) -> np.ndarray:
    return round_half_away(np.asarray(values, dtype=np.float64) / p.scale) + p.zero_point


def quantize(values, p: QuantParams) -> np.ndarray:
    lo, hi = p.range
    return np.clip(_unclamped(values, p), lo, hi).astype(np.int64)


def dequantize(q, p: QuantParams) -> np.ndarray:
    return p.scale * (np.asarray(q, dtype=np.float64) - p.zero_point)


def dequantize_output(Y, W, X, pw: QuantParams, px: QuantParams):
    """Real value of an integer product ``Y`` of quantized operands ``W`` and ``X``."""
    Y, W, X = (np.asarray(a, dtype=np.int64) for a in (Y, W, X))
    acc = Y - px.zero_point * W - pw.zero_point * X + pw.zero_point * px.zero_point
    out = pw.scale * px.scale * acc.astype(np.float64)
    return float(out) if out.ndim == 0 else out


def quant_grad_mask(values, p: QuantParams) -> np.ndarray:
    """Straight-through derivative of :func:`quantize`.

    ``1/scale`` where the unclamped code lies strictly between the range
    ends, else 0. Codes landing exactly on an end count as saturated.
    """
    lo, hi = p.range
    q = _unclamped(values, p)
    return np.where((q > lo) & (q < hi), 1.0 / p.scale, 0.0)
