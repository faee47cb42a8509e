"""Dense numeric kernels shared by every other module.

Tensors are plain ``numpy.ndarray`` values, row-major, images laid out as
``[height, width, channel]`` (or ``[batch, height, width, channel]``).

Convolution is *cross-correlation*: the kernel is not flipped. This is the
convention of every mainstream CNN framework, and learned kernels do not care.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError

__all__ = [
    "as_tensor",
    "matmul",
    "conv2d",
    "conv2d_backward",
    "conv_output_size",
    "same_padding",
    "maxpool2d",
    "maxpool2d_backward",
    "elementwise",
]


def as_tensor(x, dtype=np.float64) -> np.ndarray:
    a = np.asarray(x, dtype=dtype)
    if a.ndim < 1:
        raise DimensionError(f"tensor rank must be >= 1, got scalar {x!r}")
    if any(e < 1 for e in a.shape):
        raise DimensionError(f"all extents must be >= 1, got shape {a.shape}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def same_padding(size: int, k: int, stride: int) -> tuple[int, int]:
    """(before, after) zero padding so the output has ceil(size/stride) cells.

    Odd remainders go to the bottom/right side.
    """
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def conv_output_size(size: int, k: int, stride: int, padding: str) -> int:
    if padding == "same":
        return math.ceil(size / stride)
    if padding == "valid":
        return (size - k) // stride + 1
    raise ConfigError(f"unknown padding {padding!r}; expected 'same' or 'valid'")


def _check_conv_args(x, kernels, stride, padding):
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be [h,w,c] or [n,h,w,c], got {x.shape}")
    if kernels.ndim != 4:
        raise DimensionError(f"conv2d kernels must be [kh,kw,cin,cout], got {kernels.shape}")
    if kernels.shape[2] != x.shape[3]:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.shape} vs kernels {kernels.shape}"
        )
    if int(stride) != stride or stride < 1:
        raise ConfigError(f"stride must be a positive int, got {stride!r}")
    kh, kw = kernels.shape[:2]
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"'same' padding needs odd kernel extents, got {kh}x{kw}")
    elif padding == "valid":
        if kh > x.shape[1] or kw > x.shape[2]:
            raise DimensionError(
                f"kernel {kh}x{kw} larger than unpadded input {x.shape[1]}x{x.shape[2]}"
            )
    else:
        raise ConfigError(f"unknown padding {padding!r}; expected 'same' or 'valid'")


def _pad_hw(x, kh, kw, stride, padding):
    if padding == "valid":
        return x, (0, 0, 0, 0)
    top, bottom = same_padding(x.shape[1], kh, stride)
    left, right = same_padding(x.shape[2], kw, stride)
    if top or bottom or left or right:
        x = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
    return x, (top, bottom, left, right)


def _im2col(xp, kh, kw, stride, oh, ow):
    # windows: [n, H-kh+1, W-kw+1, c, kh, kw] -> [n, oh, ow, kh, kw, c]
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    n, c = xp.shape[0], xp.shape[3]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, kh * kw * c)


def conv2d(x, kernels, stride: int = 1, padding: str = "same", *, return_cols=False):
    """Cross-correlate ``x`` with ``kernels``.

    ``x`` is ``[h, w, cin]`` or a batch ``[n, h, w, cin]``; ``kernels`` is
    ``[kh, kw, cin, cout]``. Bias is the caller's business. With
    ``return_cols=True`` the im2col matrix is returned as well, so the layer can
    reuse it in the backward pass.
    """
    x = np.asarray(x)
    kernels = np.asarray(kernels)
    single = x.ndim == 3
    if single:
        x = x[None]
    _check_conv_args(x, kernels, stride, padding)
    n, h, w, _ = x.shape
    kh, kw, cin, cout = kernels.shape
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    xp, _ = _pad_hw(x, kh, kw, stride, padding)
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    out = (cols @ kernels.reshape(kh * kw * cin, cout)).reshape(n, oh, ow, cout)
    if single:
        out = out[0]
    if return_cols:
        return out, cols
    return out


def conv2d_backward(dout, x_shape, kernels, stride, padding, cols=None, x=None,
                    need_input_grad=True):
    """Gradients of ``conv2d`` w.r.t. its input and kernels.

    ``dout`` is ``[n, oh, ow, cout]``. Pass either the cached im2col matrix
    ``cols`` or the original input ``x``. Returns ``(dx, dkernels)``; ``dx`` is
    ``None`` when ``need_input_grad`` is false (first layer of a network).
    """
    kernels = np.asarray(kernels)
    kh, kw, cin, cout = kernels.shape
    n, oh, ow, _ = dout.shape
    if cols is None:
        xp, _ = _pad_hw(np.asarray(x), kh, kw, stride, padding)
        cols = _im2col(xp, kh, kw, stride, oh, ow)
    dflat = dout.reshape(n * oh * ow, cout)
    dk = (cols.T @ dflat).reshape(kh, kw, cin, cout)
    if not need_input_grad:
        return None, dk
    dcols = (dflat @ kernels.reshape(kh * kw * cin, cout).T).reshape(n, oh, ow, kh, kw, cin)
    _, h, w, _ = x_shape
    if padding == "same":
        top, bottom = same_padding(h, kh, stride)
        left, right = same_padding(w, kw, stride)
    else:
        top = bottom = left = right = 0
    dxp = np.zeros((n, h + top + bottom, w + left + right, cin), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + stride * (oh - 1) + 1 : stride,
                j : j + stride * (ow - 1) + 1 : stride, :] += dcols[:, :, :, i, j, :]
    return dxp[:, top : top + h, left : left + w, :], dk


def _pool_windows(x, window, stride):
    n, h, w, c = x.shape
    if int(window) != window or window < 1 or int(stride) != stride or stride < 1:
        raise ConfigError(f"window and stride must be positive ints, got {window}, {stride}")
    if window > h or window > w:
        raise DimensionError(f"pool window {window} exceeds input extent {h}x{w}")
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    win = sliding_window_view(x, (window, window), axis=(1, 2))
    win = win[:, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    return win.reshape(n, oh, ow, c, window * window)


def maxpool2d(x, window: int = 2, stride: int = 2, *, local_argmax=False):
    """Max pooling without padding.

    Returns ``(out, argmax)``. By default ``argmax`` holds absolute
    ``(row, col)`` input coordinates of every winner, shape ``[..., oh, ow, c, 2]``.
    With ``local_argmax=True`` it is the flat index inside the window, which is
    what ``maxpool2d_backward`` consumes. Ties go to the first element in
    row-major window order.
    """
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d input must be [h,w,c] or [n,h,w,c], got {x.shape}")
    win = _pool_windows(x, window, stride)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    if not local_argmax:
        oh, ow = out.shape[1:3]
        rows = (np.arange(oh) * stride)[None, :, None, None] + arg // window
        cols = (np.arange(ow) * stride)[None, None, :, None] + arg % window
        arg = np.stack([rows, cols], axis=-1)
    if single:
        return out[0], arg[0]
    return out, arg


def maxpool2d_backward(dout, local_argmax, x_shape, window, stride):
    """Route each output gradient back to its window's winning input cell."""
    n, oh, ow, c = dout.shape
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for di in range(window):
        for dj in range(window):
            hit = local_argmax == di * window + dj
            dx[:, di : di + stride * (oh - 1) + 1 : stride,
               dj : dj + stride * (ow - 1) + 1 : stride, :] += np.where(hit, dout, 0)
    return dx


_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "max": np.maximum,
    "min": np.minimum,
}


def elementwise(op: str, a, b=None):
    """Pointwise ``op`` over equal shapes or tensor-scalar.

    Besides the binary ops, ``scale`` multiplies by scalar ``b``, ``relu`` takes
    no second operand and ``relu-mask`` multiplies ``b`` by ``a > 0``.
    """
    a = np.asarray(a)
    if op == "relu":
        return np.maximum(a, 0)
    if b is None:
        raise ConfigError(f"op {op!r} needs a second operand")
    b = np.asarray(b)
    if b.ndim != 0 and b.shape != a.shape:
        raise DimensionError(f"elementwise {op}: shape mismatch {a.shape} vs {b.shape}")
    if op == "scale":
        if b.ndim != 0:
            raise DimensionError("scale expects a scalar factor")
        return a * b
    if op == "relu-mask":
        return np.where(a > 0, b, 0).astype(np.result_type(a, b))
    try:
        return _OPS[op](a, b)
    except KeyError:
        raise ConfigError(f"unknown elementwise op {op!r}") from None
