"""2-D convolution primitives on NCHW tensors.

Three ops close under differentiation:

* ``conv2d(x, K)``                  cross-correlation, K is [F, C, kh, kw]
* ``conv_transpose2d(y, K)``        the adjoint of conv2d in x
* ``conv2d_weight(x, y)``           the adjoint of conv2d in K

Each one's vector-Jacobian product is written with the other two, which is
what lets a gradient penalty differentiate through a critic's input gradient.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _make

__all__ = [
    "conv2d",
    "conv_transpose2d",
    "conv2d_weight",
    "transposed_conv2d",
    "conv_output_size",
]

Pair = tuple[int, int]


def _pair(v) -> Pair:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int):
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]


def _conv_fwd(x: np.ndarray, k: np.ndarray, stride: Pair, padding: Pair) -> np.ndarray:
    (sh, sw), (ph, pw) = stride, padding
    _, _, h, w = x.shape
    _, _, kh, kw = k.shape
    ho = conv_output_size(h, kh, sh, ph)
    wo = conv_output_size(w, kw, sw, pw)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    win = _windows(xp, kh, kw, sh, sw, ho, wo)  # N C Ho Wo kh kw
    out = np.tensordot(win, k, axes=([1, 4, 5], [1, 2, 3]))  # N Ho Wo F
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv_T(
    y: np.ndarray, k: np.ndarray, stride: Pair, padding: Pair, out_hw: Pair
) -> np.ndarray:
    (sh, sw), (ph, pw) = stride, padding
    n, _, ho, wo = y.shape
    _, c, kh, kw = k.shape
    h, w = out_hw
    hp, wp = h + 2 * ph, w + 2 * pw
    # rows/cols of the padded input never touched by a window stay zero
    need_h = (ho - 1) * sh + kh
    need_w = (wo - 1) * sw + kw
    buf = np.zeros((n, c, max(hp, need_h), max(wp, need_w)))
    cols = np.tensordot(y, k, axes=([1], [0]))  # N Ho Wo C kh kw
    cols = cols.transpose(0, 3, 4, 5, 1, 2)  # N C kh kw Ho Wo
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] += cols[
                :, :, i, j
            ]
    return np.ascontiguousarray(buf[:, :, ph : ph + h, pw : pw + w])


def _conv_W(
    x: np.ndarray, y: np.ndarray, stride: Pair, padding: Pair, k_hw: Pair
) -> np.ndarray:
    (sh, sw), (ph, pw) = stride, padding
    kh, kw = k_hw
    ho, wo = y.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    win = _windows(xp, kh, kw, sh, sw, ho, wo)  # N C Ho Wo kh kw
    return np.tensordot(y, win, axes=([0, 2, 3], [0, 2, 3]))  # F C kh kw


def conv2d(x: Tensor, kernel: Tensor, stride=1, padding=0) -> Tensor:
    """Cross-correlate ``x`` [N,C,H,W] with ``kernel`` [F,C,kh,kw]."""
    stride, padding = _pair(stride), _pair(padding)
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise ShapeError("conv2d", x.shape, kernel.shape)
    _, _, h, w = x.shape
    _, _, kh, kw = kernel.shape
    if kh > h + 2 * padding[0] or kw > w + 2 * padding[1]:
        raise ShapeError("conv2d (kernel larger than padded input)", x.shape, kernel.shape)
    if min(stride) < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")

    def vjp(g):
        gx = conv_transpose2d(g, kernel, stride, padding, (h, w)) if x.requires_grad else None
        gk = conv2d_weight(x, g, stride, padding, (kh, kw)) if kernel.requires_grad else None
        return gx, gk

    return _make(_conv_fwd(x.data, kernel.data, stride, padding), (x, kernel), vjp, "conv2d")


def conv_transpose2d(
    y: Tensor, kernel: Tensor, stride, padding, out_hw: Sequence[int]
) -> Tensor:
    """Adjoint of :func:`conv2d` in its input, producing spatial size ``out_hw``.

    ``kernel`` keeps the conv2d layout [F, C, kh, kw]; ``y`` has F channels and
    the result has C.
    """
    stride, padding, out_hw = _pair(stride), _pair(padding), _pair(out_hw)
    if y.ndim != 4 or kernel.ndim != 4 or y.shape[1] != kernel.shape[0]:
        raise ShapeError("conv_transpose2d", y.shape, kernel.shape)
    kh, kw = kernel.shape[2:]
    ho = conv_output_size(out_hw[0], kh, stride[0], padding[0])
    wo = conv_output_size(out_hw[1], kw, stride[1], padding[1])
    if (ho, wo) != y.shape[2:]:
        raise ShapeError("conv_transpose2d (output size)", y.shape, out_hw)

    def vjp(g):
        gy = conv2d(g, kernel, stride, padding) if y.requires_grad else None
        gk = conv2d_weight(g, y, stride, padding, (kh, kw)) if kernel.requires_grad else None
        return gy, gk

    data = _conv_T(y.data, kernel.data, stride, padding, out_hw)
    return _make(data, (y, kernel), vjp, "conv_transpose2d")


def conv2d_weight(x: Tensor, y: Tensor, stride, padding, k_hw: Sequence[int]) -> Tensor:
    """Adjoint of :func:`conv2d` in its kernel: sum over positions of y * x-patch."""
    stride, padding, k_hw = _pair(stride), _pair(padding), _pair(k_hw)
    if x.ndim != 4 or y.ndim != 4 or x.shape[0] != y.shape[0]:
        raise ShapeError("conv2d_weight", x.shape, y.shape)
    out_hw = x.shape[2:]

    def vjp(g):
        gx = conv_transpose2d(y, g, stride, padding, out_hw) if x.requires_grad else None
        gy = conv2d(x, g, stride, padding) if y.requires_grad else None
        return gx, gy

    data = _conv_W(x.data, y.data, stride, padding, k_hw)
    return _make(data, (x, y), vjp, "conv2d_weight")


def transposed_conv2d(
    x: Tensor, kernel: Tensor, stride=1, padding=0, output_padding=0
) -> Tensor:
    """Fractionally strided convolution, ``kernel`` is [C_in, C_out, kh, kw].

    Equivalent to inserting ``stride - 1`` zeros between neighbouring inputs
    and correlating with the flipped kernel.  The full output of length
    ``(n - 1) * stride + k`` loses ``padding`` at both ends and gains
    ``output_padding`` at the trailing end.
    """
    stride, padding, output_padding = _pair(stride), _pair(padding), _pair(output_padding)
    if min(stride) < 1:
        raise ValueError(f"transposed_conv2d: stride must be >= 1, got {stride}")
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[0]:
        raise ShapeError("transposed_conv2d", x.shape, kernel.shape)
    h, w = x.shape[2:]
    kh, kw = kernel.shape[2:]
    out_h = (h - 1) * stride[0] - 2 * padding[0] + kh + output_padding[0]
    out_w = (w - 1) * stride[1] - 2 * padding[1] + kw + output_padding[1]
    if output_padding[0] >= stride[0] or output_padding[1] >= stride[1] or out_h < 1 or out_w < 1:
        raise ValueError(
            f"transposed_conv2d: output_padding {output_padding} invalid for stride {stride}"
        )
    return conv_transpose2d(x, kernel, stride, padding, (out_h, out_w))
