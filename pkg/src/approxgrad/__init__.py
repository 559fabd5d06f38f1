"""Approximate-multiplier modeling, gradient estimation and retraining."""

from ._kernels import BACKEND
from .appgemm import app_gemm, app_gemm_backward, fq_linear_backward, fq_linear_forward
from .fakequant import QuantParams, dequantize_output, observe, quant_grad_mask, quantize
from .gradest import (
    STE,
    GradLUT1D,
    GradLUT2D,
    build_grad1d,
    build_grad2d,
    default_hws,
    load_grad,
    lookup,
    make_estimator,
    save_grad,
    smooth_row,
    ste_grad,
)
from .multlib import (
    ErrorReport,
    Multiplier,
    build_exact,
    build_truncated,
    error_metrics,
    load_table,
    save_table,
)

__version__ = "0.1.0"
