"""Convolution and transposed convolution with analytic gradients.

Both ops accept ``(C, H, W)`` or batched ``(N, C, H, W)`` inputs and use the
cross-correlation convention (no kernel flip).  The implementation lowers to
matrix multiplication through an im2col/col2im pair; backward recomputes the
column matrix from the saved input instead of retaining it, trading a little
compute for a k*k-fold smaller tape.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


def conv_output_extent(extent: int, k: int, stride: int, padding: int) -> int:
    return (extent + 2 * padding - k) // stride + 1


def conv_transpose_output_extent(extent: int, k: int, stride: int, padding: int) -> int:
    return (extent - 1) * stride - 2 * padding + k


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C*k*k, Ho*Wo) patch matrix."""
    n, c, h, w = x.shape
    ho = conv_output_extent(h, k, stride, pad)
    wo = conv_output_extent(w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
    for u in range(k):
        for v in range(k):
            cols[:, :, u, v] = xp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride]
    return cols.reshape(n, c * k * k, ho * wo)


def _col2im(cols: np.ndarray, h: int, w: int, k: int, stride: int, pad: int) -> np.ndarray:
    """Scatter-add adjoint of :func:`_im2col`; returns (N, C, H, W)."""
    n = cols.shape[0]
    c = cols.shape[1] // (k * k)
    ho = conv_output_extent(h, k, stride, pad)
    wo = conv_output_extent(w, k, stride, pad)
    cols6 = cols.reshape(n, c, k, k, ho, wo)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for u in range(k):
        for v in range(k):
            out[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += cols6[
                :, :, u, v
            ]
    return out[:, :, pad : pad + h, pad : pad + w] if pad else out


def _check_geometry(k: int, stride: int, padding: int, op: str) -> None:
    if k < 1 or stride < 1 or padding < 0:
        raise ContractError(f"{op}: invalid geometry k={k} stride={stride} padding={padding}")


def _as_batched(x: Tensor, op: str) -> tuple[np.ndarray, bool]:
    if x.data.ndim == 3:
        return x.data[None], True
    if x.data.ndim == 4:
        return x.data, False
    raise ContractError(f"{op}: input must be (C, H, W) or (N, C, H, W), got {x.data.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int, padding: int) -> Tensor:
    """Strided cross-correlation with zero padding.

    ``weight`` is ``(C_out, C_in, k, k)`` and ``bias`` is ``(C_out,)``.
    Output spatial extents follow ``floor((H + 2p - k) / stride) + 1``; the
    input must satisfy ``H + 2p >= k``.
    """
    if weight.data.ndim != 4 or weight.data.shape[2] != weight.data.shape[3]:
        raise ContractError(f"conv2d: weight must be (C_out, C_in, k, k), got {weight.data.shape}")
    c_out, c_in, k, _ = weight.data.shape
    _check_geometry(k, stride, padding, "conv2d")
    x4, squeeze = _as_batched(x, "conv2d")
    if x4.shape[1] != c_in:
        raise ContractError(
            f"conv2d: input has {x4.shape[1]} channels but kernel expects {c_in}"
        )
    if bias.data.shape != (c_out,):
        raise ContractError(f"conv2d: bias must be ({c_out},), got {bias.data.shape}")
    if not (x.data.dtype == weight.data.dtype == bias.data.dtype):
        raise ContractError("conv2d: input/weight/bias dtypes must match")
    n, _, h, w = x4.shape
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ContractError(
            f"conv2d: spatial extent {h}x{w} too small for k={k} with padding={padding}"
        )
    ho = conv_output_extent(h, k, stride, padding)
    wo = conv_output_extent(w, k, stride, padding)

    w_mat = weight.data.reshape(c_out, c_in * k * k)
    cols = _im2col(x4, k, stride, padding)
    out = np.matmul(w_mat, cols)  # (N, C_out, Ho*Wo)
    out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(n, c_out, ho, wo))
    if squeeze:
        out = out[0]

    def bwd(g, cols=cols):
        g4 = g[None] if squeeze else g
        g_flat = g4.reshape(n, c_out, ho * wo)
        dw = np.matmul(g_flat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.data.shape)
        db = g_flat.sum(axis=(0, 2))
        dcols = np.matmul(w_mat.T, g_flat)
        dx = _col2im(dcols, h, w, k, stride, padding)
        if squeeze:
            dx = dx[0]
        return dx, dw, db

    # the tape (when recording) keeps `cols` alive through the closure; in
    # inference mode the closure is dropped and the patch matrix is freed
    return Tensor._from_op(out, (x, weight, bias), bwd, "conv2d")


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int, padding: int) -> Tensor:
    """Fractionally strided convolution (the adjoint of :func:`conv2d`).

    ``weight`` is ``(C_in, C_out, k, k)``.  Output extents follow
    ``(H - 1) * stride - 2p + k``; the decoder parameterization (k=4,
    stride=2, pad=1) doubles the spatial size exactly.
    """
    if weight.data.ndim != 4 or weight.data.shape[2] != weight.data.shape[3]:
        raise ContractError(
            f"conv_transpose2d: weight must be (C_in, C_out, k, k), got {weight.data.shape}"
        )
    c_in, c_out, k, _ = weight.data.shape
    _check_geometry(k, stride, padding, "conv_transpose2d")
    x4, squeeze = _as_batched(x, "conv_transpose2d")
    if x4.shape[1] != c_in:
        raise ContractError(
            f"conv_transpose2d: input has {x4.shape[1]} channels but kernel expects {c_in}"
        )
    if bias.data.shape != (c_out,):
        raise ContractError(f"conv_transpose2d: bias must be ({c_out},), got {bias.data.shape}")
    if not (x.data.dtype == weight.data.dtype == bias.data.dtype):
        raise ContractError("conv_transpose2d: input/weight/bias dtypes must match")
    n, _, h, w = x4.shape
    ho = conv_transpose_output_extent(h, k, stride, padding)
    wo = conv_transpose_output_extent(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ContractError(
            f"conv_transpose2d: unsupported parameter combination k={k} stride={stride} "
            f"padding={padding} for input {h}x{w}"
        )

    w_mat = weight.data.reshape(c_in, c_out * k * k)
    x_flat = x4.reshape(n, c_in, h * w)
    cols = np.matmul(w_mat.T, x_flat)  # (N, C_out*k*k, H*W)
    out = _col2im(cols, ho, wo, k, stride, padding)
    out += bias.data[None, :, None, None]
    if squeeze:
        out = out[0]

    def bwd(g):
        g4 = g[None] if squeeze else g
        dcols = _im2col(g4, k, stride, padding)  # (N, C_out*k*k, H*W)
        dx = np.matmul(w_mat, dcols).reshape(x4.shape)
        dw = np.matmul(x_flat, dcols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.data.shape)
        db = g4.sum(axis=(0, 2, 3))
        if squeeze:
            dx = dx[0]
        return dx, dw, db

    return Tensor._from_op(out, (x, weight, bias), bwd, "conv_transpose2d")
