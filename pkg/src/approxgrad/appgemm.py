"""Approximate GEMM through multiplier tables, and its LUT-driven backward pass.

Shapes follow the GEMM convention ``Y (M x N) = W (M x K) @ X (K x N)``.
Integer operands are operand *values*; the kernels work on table indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .fakequant import MODES, QuantParams, observe, quant_grad_mask, quantize
from .gradest import EstimatorPair, GradEstimator, WRT_W, WRT_X
from .multlib import Multiplier


def _as_int_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2D matrix, got shape {a.shape}")
    if a.dtype.kind not in "iu":
        if not np.all(np.equal(np.mod(a, 1), 0)):
            raise ValueError(f"{name} must hold integers")
    return a.astype(np.int64)


def _check_gemm_shapes(Wm: np.ndarray, Xm: np.ndarray) -> None:
    if Wm.shape[1] != Xm.shape[0]:
        raise ValueError(f"inner dimensions disagree: {Wm.shape} @ {Xm.shape}")


def app_gemm(Wm, Xm, m: Multiplier, backend: str | None = None) -> np.ndarray:
    """``Y[i, j] = sum_k AM(W[i, k], X[k, j])`` with int64 accumulation."""
    Wm = _as_int_matrix(Wm, "W")
    Xm = _as_int_matrix(Xm, "X")
    _check_gemm_shapes(Wm, Xm)
    return _kernels.lut_gemm(m.index(Wm), m.index(Xm), m.table, m.size, backend=backend)


def _check_estimator(g: GradEstimator, m: Multiplier, direction: str) -> None:
    if g.direction != direction:
        raise ValueError(f"estimator differentiates w.r.t. {g.direction!r}, expected {direction!r}")
    if g.bits != m.bits or g.signed != m.signed:
        raise ValueError("estimator operand format does not match the multiplier")


def _backward_indices(dLdY, widx, xidx, gx, gw, backend, need_x=True, need_w=True):
    dLdY = np.ascontiguousarray(dLdY, dtype=np.float64)
    if dLdY.shape != (widx.shape[0], xidx.shape[1]):
        raise ValueError(f"upstream gradient shape {dLdY.shape} does not match ({widx.shape[0]}, {xidx.shape[1]})")
    dW = dX = None
    if need_w:
        dW = _kernels.lut_backward_w(dLdY, widx, xidx, *gw.kernel_view(), backend=backend)
    if need_x:
        dX = _kernels.lut_backward_x(dLdY, widx, xidx, *gx.kernel_view(), backend=backend)
    return dW, dX


def app_gemm_backward(dLdY, Wm, Xm, gx: GradEstimator, gw: GradEstimator,
                      m: Multiplier | None = None, backend: str | None = None):
    """Gradients of the loss w.r.t. the integer GEMM operands.

    ``dLdX[k, j] = sum_i dLdY[i, j] * gx(W[i, k], X[k, j])`` and
    ``dLdW[i, k] = sum_j dLdY[i, j] * gw(W[i, k], X[k, j])``, summed in
    ascending ``i`` / ``j`` order. Returns ``(dLdW, dLdX)``.
    """
    Wm = _as_int_matrix(Wm, "W")
    Xm = _as_int_matrix(Xm, "X")
    _check_gemm_shapes(Wm, Xm)
    if gx.bits != gw.bits or gx.signed != gw.signed:
        raise ValueError("gx and gw disagree on operand format")
    if m is not None:
        _check_estimator(gx, m, WRT_X)
        _check_estimator(gw, m, WRT_W)
    lo = -(1 << (gx.bits - 1)) if gx.signed else 0
    hi = lo + (1 << gx.bits) - 1
    for a, name in ((Wm, "W"), (Xm, "X")):
        if a.size and (a.min() < lo or a.max() > hi):
            raise ValueError(f"{name} operand out of range [{lo}, {hi}]")
    return _backward_indices(dLdY, Wm - lo, Xm - lo, gx, gw, backend)


@dataclass(frozen=True, eq=False)
class ForwardContext:
    """Everything the backward pass needs from one fake-quantized GEMM."""

    multiplier: Multiplier
    Wq: np.ndarray
    Xq: np.ndarray
    pw: QuantParams
    px: QuantParams
    mask_w: np.ndarray
    mask_x: np.ndarray

    @property
    def out_shape(self) -> tuple[int, int]:
        return self.Wq.shape[0], self.Xq.shape[1]


def fq_linear_forward(w, x, m: Multiplier, bits: int | None = None, mode: str = "asymmetric",
                      pw: QuantParams | None = None, px: QuantParams | None = None,
                      backend: str | None = None):
    """Fake-quantized approximate GEMM ``y ~ w @ x``.

    Observers run on ``w`` and ``x`` unless fixed parameters ``pw`` / ``px`` are
    given. Returns ``(y, ctx)``.
    """
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.ndim != 2 or x.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ValueError(f"invalid GEMM shapes {w.shape} @ {x.shape}")
    bits = m.bits if bits is None else bits
    if bits != m.bits:
        raise ValueError(f"quantization bits {bits} do not match the {m.bits}-bit multiplier")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    pw = observe(w, bits, mode) if pw is None else pw
    px = observe(x, bits, mode) if px is None else px
    for p in (pw, px):
        if p.bits != m.bits or p.signed != m.signed:
            raise ValueError("quantization range does not match the multiplier operand format "
                             f"({'signed' if m.signed else 'unsigned'} {m.bits}-bit)")
    Wq = quantize(w, pw)
    Xq = quantize(x, px)
    off = m.offset
    Y = _kernels.lut_gemm(Wq + off, Xq + off, m.table, m.size, backend=backend)
    K = w.shape[1]
    zw, zx = pw.zero_point, px.zero_point
    acc = (Y - zx * Wq.sum(axis=1)[:, None] - zw * Xq.sum(axis=0)[None, :] + K * zw * zx)
    y = (pw.scale * px.scale) * acc.astype(np.float64)
    ctx = ForwardContext(m, Wq, Xq, pw, px, quant_grad_mask(w, pw), quant_grad_mask(x, px))
    return y, ctx


def fq_linear_backward(ctx: ForwardContext, dLdy, est: EstimatorPair, product_path_only: bool = False,
                       need_x: bool = True, backend: str | None = None):
    """Gradients ``(dLdw, dLdx)`` of a fake-quantized approximate GEMM.

    By default the zero-point cross terms of the dequantizer are
    differentiated too: ``dy/dW = s_w s_x (gw - Z_x)`` and
    ``dy/dX = s_w s_x (gx - Z_w)``. ``product_path_only=True`` keeps only the path
    through the integer product.
    """
    dLdy = np.asarray(dLdy, dtype=np.float64)
    if dLdy.shape != ctx.out_shape:
        raise ValueError(f"upstream gradient shape {dLdy.shape} does not match forward output {ctx.out_shape}")
    m = ctx.multiplier
    _check_estimator(est.gx, m, WRT_X)
    _check_estimator(est.gw, m, WRT_W)
    off = m.offset
    gW, gX = _backward_indices(dLdy, ctx.Wq + off, ctx.Xq + off, est.gx, est.gw, backend, need_x=need_x)
    s = ctx.pw.scale * ctx.px.scale
    if not product_path_only:
        gW = gW - ctx.px.zero_point * dLdy.sum(axis=1)[:, None]
        if need_x:
            gX = gX - ctx.pw.zero_point * dLdy.sum(axis=0)[None, :]
    dLdw = ctx.mask_w * (s * gW)
    dLdx = ctx.mask_x * (s * gX) if need_x else None
    return dLdw, dLdx
