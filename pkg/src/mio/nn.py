"""Minimal float64 tensors and layer primitives with hand-written backward passes.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)``. Parameter gradients are accumulated into the
``grad`` buffer of the :class:`Tensor` objects passed in.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    """n-d float64 array with an attached gradient buffer."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def copy(self) -> Tensor:
        return Tensor(self.data.copy(), self.name)

    def __repr__(self) -> str:
        return f"Tensor({self.name!r}, shape={self.shape})"


# --- conv -----------------------------------------------------------------

def conv_out_size(n: int, k: int = 3, stride: int = 2, pad: int = 1) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d_forward(x: np.ndarray, W: Tensor, b: Tensor, stride: int = 2, pad: int = 1):
    """x: (N, C, H, W); W: (O, C, k, k). im2col + one matmul."""
    N, C, H, Wd = x.shape
    O, _, k, _ = W.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = conv_out_size(H, k, stride, pad), conv_out_size(Wd, k, stride, pad)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * oh * ow, C * k * k)
    out = cols @ W.data.reshape(O, -1).T + b.data
    out = out.reshape(N, oh, ow, O).transpose(0, 3, 1, 2)
    return out, (x.shape, cols, W, b, stride, pad, oh, ow)


def conv2d_backward(dout: np.ndarray, cache):
    xshape, cols, W, b, stride, pad, oh, ow = cache
    N, C, H, Wd = xshape
    O, _, k, _ = W.shape
    d = dout.transpose(0, 2, 3, 1).reshape(-1, O)
    W.grad += (d.T @ cols).reshape(W.shape)
    b.grad += d.sum(axis=0)
    dcols = (d @ W.data.reshape(O, -1)).reshape(N, oh, ow, C, k, k)
    dxp = np.zeros((N, C, H + 2 * pad, Wd + 2 * pad))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[..., i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, pad:pad + H, pad:pad + Wd]


# --- dense ----------------------------------------------------------------

def linear_forward(x: np.ndarray, W: Tensor, b: Tensor):
    return x @ W.data.T + b.data, (x, W, b)


def linear_backward(dout: np.ndarray, cache):
    x, W, b = cache
    W.grad += dout.T @ x
    b.grad += dout.sum(axis=0)
    return dout @ W.data


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout: np.ndarray, mask: np.ndarray):
    return dout * mask


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# --- recurrent ------------------------------------------------------------

def rnn_forward(xs: np.ndarray, h0: np.ndarray, Wx: Tensor, Wh: Tensor, b: Tensor, mask=None):
    """Elman cell ``h' = tanh(x Wx^T + h Wh^T + b)`` unrolled over axis 1.

    xs: (N, T, D). ``mask`` (N, T) freezes the state where 0, which lets
    windows of different length share one batch.
    """
    N, T, _ = xs.shape
    hs = [h0]
    for t in range(T):
        hn = np.tanh(xs[:, t] @ Wx.data.T + hs[-1] @ Wh.data.T + b.data)
        if mask is not None:
            m = mask[:, t:t + 1]
            hn = m * hn + (1.0 - m) * hs[-1]
        hs.append(hn)
    return hs[-1], (xs, hs, Wx, Wh, b, mask)


def rnn_backward(dh_last: np.ndarray, cache, dhs_extra=None):
    """BPTT. ``dhs_extra`` optionally adds dL/dh_t for every step t (N, T, H)."""
    xs, hs, Wx, Wh, b, mask = cache
    N, T, _ = xs.shape
    dxs = np.zeros_like(xs)
    dh = dh_last.copy()
    for t in reversed(range(T)):
        if dhs_extra is not None:
            dh = dh + dhs_extra[:, t]
        h_new, h_prev = hs[t + 1], hs[t]
        if mask is not None:
            m = mask[:, t:t + 1]
            dh_cell = dh * m
            dh_pass = dh * (1.0 - m)
            # frozen rows carry h_prev through unchanged, so their h_new == h_prev
            dz = dh_cell * (1.0 - np.where(m > 0, h_new, 0.0) ** 2)
        else:
            dh_pass = 0.0
            dz = dh * (1.0 - h_new ** 2)
        Wx.grad += dz.T @ xs[:, t]
        Wh.grad += dz.T @ h_prev
        b.grad += dz.sum(axis=0)
        dxs[:, t] = dz @ Wx.data
        dh = dz @ Wh.data + dh_pass
    return dxs, dh
