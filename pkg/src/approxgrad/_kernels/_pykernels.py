"""Pure numpy kernels. Accumulation order matches the compiled kernels exactly."""

import numpy as np

# cap on elements of the (rows, K, N) gather buffer built per chunk
_CHUNK_ELEMS = 1 << 22


def lut_gemm(widx, xidx, table, n):
    """``Y[i, j] = sum_k table[widx[i, k] * n + xidx[k, j]]`` in int64."""
    M, K = widx.shape
    N = xidx.shape[1]
    out = np.empty((M, N), dtype=np.int64)
    rows = max(1, _CHUNK_ELEMS // max(1, K * N))
    for r0 in range(0, M, rows):
        flat = widx[r0:r0 + rows, :, None] * n + xidx[None, :, :]
        out[r0:r0 + rows] = table[flat].sum(axis=1)
    return out


def lut_backward_x(dy, widx, xidx, grad, a, b):
    """``dX[k, j] = sum_i dy[i, j] * grad[widx[i, k]*a + xidx[k, j]*b]``, i ascending."""
    M, K = widx.shape
    N = xidx.shape[1]
    acc = np.zeros((K, N), dtype=np.float64)
    xoff = xidx * b
    for i in range(M):
        acc += dy[i][None, :] * grad[(widx[i] * a)[:, None] + xoff]
    return acc


def lut_backward_w(dy, widx, xidx, grad, a, b):
    """``dW[i, k] = sum_j dy[i, j] * grad[widx[i, k]*a + xidx[k, j]*b]``, j ascending."""
    M, K = widx.shape
    N = xidx.shape[1]
    acc = np.zeros((M, K), dtype=np.float64)
    woff = widx * a
    for j in range(N):
        acc += dy[:, j][:, None] * grad[woff + (xidx[:, j] * b)[None, :]]
    return acc
