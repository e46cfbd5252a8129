"""Dense numerical kernels used by every layer.

Tensors are plain numpy arrays in row-major NCHW layout (dense weights are
``[out, in]``). Every kernel is dtype-generic: float64 is used for gradient
checks, float32 for training, and both go through the same code.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

MAX_RANK = 4


def check_tensor(x: np.ndarray, rank: int | None = None, name: str = "tensor") -> np.ndarray:
    """Validate the container invariants: rank 1..4, positive extents, finite values."""
    x = np.asarray(x)
    if not 1 <= x.ndim <= MAX_RANK:
        raise ShapeError(f"{name}: rank {x.ndim} outside 1..{MAX_RANK}")
    if rank is not None and x.ndim != rank:
        raise ShapeError(f"{name}: expected rank {rank}, got shape {x.shape}")
    if any(d < 1 for d in x.shape):
        raise ShapeError(f"{name}: all extents must be >= 1, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ShapeError(f"{name}: contains non-finite values")
    return x


@dataclass(frozen=True)
class ConvGeometry:
    """3x3 kernel, stride 1, one pixel of zero padding: spatial size is preserved."""

    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError("channel counts must be positive")
        if (self.kernel, self.stride, self.padding) != (3, 1, 1):
            raise ShapeError("only 3x3 / stride 1 / same padding is supported")

    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, 3, 3)

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, int, int, int]:
        n, c, h, w = input_shape
        if c != self.in_channels:
            raise ShapeError(f"input channels C={c} != geometry in_channels={self.in_channels}")
        return (n, self.out_channels, h, w)


def _check_conv_shapes(x: np.ndarray, weights: np.ndarray, bias: np.ndarray | None) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv input must be NCHW, got shape {x.shape}")
    if weights.ndim != 4 or weights.shape[2:] != (3, 3):
        raise ShapeError(f"conv weights must be [F,C,3,3], got shape {weights.shape}")
    if x.shape[1] != weights.shape[1]:
        raise ShapeError(
            f"channel dimension C mismatch: input has {x.shape[1]}, weights expect {weights.shape[1]}"
        )
    if bias is not None and bias.shape != (weights.shape[0],):
        raise ShapeError(
            f"filter dimension F mismatch: bias shape {bias.shape}, weights have F={weights.shape[0]}"
        )


def im2col(x: np.ndarray) -> np.ndarray:
    """Unfold zero-padded 3x3 neighbourhoods: [N,C,H,W] -> [N*H*W, C*9], columns
    ordered (c, dy, dx) to match a reshaped [F,C,3,3] weight."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # n, c, h, w, 3, 3
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


# Channels-last engine. The zero-padded batch is stored as one flat sequence of
# [(H+2)*(W+2)] positions per sample, so every kernel tap (dy, dx) is a plain
# contiguous offset view of that buffer and the convolution becomes nine GEMMs
# with no unfold copy. Outputs are computed on the padded grid and cropped.
# Narrow inputs (C*9 small) are cheaper as one GEMM on an explicit unfold.
_SHIFT_GEMM_MIN_CHANNELS = 2


def _padded_flat(x: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    length = n * (h + 2) * (w + 2)
    buf = np.zeros((length + 2 * (w + 2) + 2, c), dtype=x.dtype)
    buf[:length].reshape(n, h + 2, w + 2, c)[:, 1:-1, 1:-1, :] = x
    return buf


def _taps(h: int, w: int):
    return [(dy, dx, dy * (w + 2) + dx) for dy in range(3) for dx in range(3)]


def conv2d_forward_nhwc(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded 3x3 correlation on [N,H,W,C] input; weights stay [F,C,3,3]."""
    n, h, w, c = x.shape
    f = weights.shape[0]
    length = n * (h + 2) * (w + 2)
    xp = _padded_flat(x)
    wk = np.ascontiguousarray(weights.transpose(2, 3, 1, 0))  # 3, 3, C, F
    if c < _SHIFT_GEMM_MIN_CHANNELS:
        cols = np.empty((length, 9, c), dtype=x.dtype)
        for k, (_, _, off) in enumerate(_taps(h, w)):
            cols[:, k, :] = xp[off:off + length]
        out = cols.reshape(length, 9 * c) @ wk.reshape(9 * c, f)
    else:
        out = np.empty((length, f), dtype=x.dtype)
        tmp = np.empty_like(out)
        for k, (dy, dx, off) in enumerate(_taps(h, w)):
            np.matmul(xp[off:off + length], wk[dy, dx], out=out if k == 0 else tmp)
            if k:
                out += tmp
    out = out.reshape(n, h + 2, w + 2, f)[:, :h, :w, :] + bias
    return out


def conv2d_backward_nhwc(x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray,
                         need_input_grad: bool = True):
    n, h, w, c = x.shape
    f = weights.shape[0]
    length = n * (h + 2) * (w + 2)
    xp = _padded_flat(x)
    g = np.zeros((n, h + 2, w + 2, f), dtype=grad_out.dtype)
    g[:, :h, :w, :] = grad_out
    g = g.reshape(length, f)
    grad_b = grad_out.sum(axis=(0, 1, 2))
    grad_wk = np.empty((3, 3, c, f), dtype=x.dtype)
    for dy, dx, off in _taps(h, w):
        grad_wk[dy, dx] = xp[off:off + length].T @ g
    grad_w = np.ascontiguousarray(grad_wk.transpose(3, 2, 0, 1))
    grad_x = None
    if need_input_grad:
        wkt = np.ascontiguousarray(weights.transpose(2, 3, 0, 1))  # 3, 3, F, C
        dxp = np.zeros_like(xp)
        for dy, dx, off in _taps(h, w):
            dxp[off:off + length] += g @ wkt[dy, dx]
        grad_x = dxp[:length].reshape(n, h + 2, w + 2, c)[:, 1:-1, 1:-1, :]
    return grad_x, grad_w, grad_b


def to_nhwc(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def to_nchw(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
                   geom: ConvGeometry | None = None) -> np.ndarray:
    """Same-padded 3x3 cross-correlation on NCHW input.

    ``out[n,f,y,x] = bias[f] + sum_{c,dy,dx} x[n,c,y+dy-1,x+dx-1] * w[f,c,dy,dx]``
    """
    _check_conv_shapes(x, weights, bias)
    if geom is not None:
        geom.output_shape(x.shape)
        if weights.shape != geom.weight_shape():
            raise ShapeError(f"weights {weights.shape} do not match geometry {geom.weight_shape()}")
    return to_nchw(conv2d_forward_nhwc(to_nhwc(x), weights, bias))


def conv2d_backward(x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray,
                    need_input_grad: bool = True):
    """Gradients of ``conv2d_forward`` w.r.t. input, weights and bias (NCHW).

    The input gradient is a transposed convolution (taps scattered back), the
    weight gradient correlates the input with ``grad_out``, the bias gradient
    sums ``grad_out`` over batch and space.
    """
    _check_conv_shapes(x, weights, None)
    n, _, h, w = x.shape
    f = weights.shape[0]
    if grad_out.shape != (n, f, h, w):
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {(n, f, h, w)}")
    gx, gw, gb = conv2d_backward_nhwc(to_nhwc(x), weights, to_nhwc(grad_out), need_input_grad)
    return (None if gx is None else to_nchw(gx)), gw, gb


def maxpool2x2_forward(x: np.ndarray):
    """Disjoint 2x2 max pooling. Returns the pooled tensor and, per window, the
    row-major index (0..3) of the first maximum."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool input must be NCHW, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool needs even H and W, got H={h}, W={w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx.astype(np.int8)


def maxpool2x2_backward(grad_out: np.ndarray, argmax_mask: np.ndarray) -> np.ndarray:
    if grad_out.shape != argmax_mask.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != mask shape {argmax_mask.shape}")
    n, c, hh, ww = grad_out.shape
    win = np.zeros((n, c, hh, ww, 4), dtype=grad_out.dtype)
    np.put_along_axis(win, argmax_mask[..., None].astype(np.intp), grad_out[..., None], axis=-1)
    return win.reshape(n, c, hh, ww, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * hh, 2 * ww)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimension K mismatch: {a.shape[1]} vs {b.shape[0]}")
    return a @ b


def elu(x: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    """x for x > 0, alpha * (exp(x) - 1) otherwise."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    neg = np.minimum(x, 0)
    np.expm1(neg, out=neg)
    if alpha != 1.0:
        neg *= alpha
    neg += np.maximum(x, 0)
    return neg


def elu_grad(x: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    """1 for x > 0, alpha * exp(x) otherwise."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    g = np.exp(np.minimum(x, 0))
    g *= alpha
    if alpha != 1.0:
        g += (x > 0) * (1.0 - alpha)
    return g


def elu_grad_from_output(y: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    """ELU derivative written through the activation value: f(x) + alpha where x <= 0."""
    g = np.minimum(y, 0)
    g += alpha
    if alpha != 1.0:
        g += (y > 0) * (1.0 - alpha)
    return g


def softmax(logits: np.ndarray) -> np.ndarray:
    if logits.ndim != 2:
        raise ShapeError(f"softmax expects [N,K], got shape {logits.shape}")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
