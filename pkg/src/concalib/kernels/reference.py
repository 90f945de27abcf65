"""Pure-numpy convolution kernels (im2col + BLAS matmul).

Fallback backend when the compiled extension is unavailable; also the
cross-check implementation the kernel tests compare against.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_size(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def _im2col(x, kh, kw, stride, padding):
    # Returns (B, Ho, Wo, Cin*kh*kw) patches of the padded input.
    if padding > 0:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # B,Cin,Ho*,Wo*,kh,kw
    win = win[:, :, ::stride, ::stride]
    b, cin, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho, wo, cin * kh * kw)


def conv2d_forward(x, w, stride, padding):
    cout, cin, kh, kw = w.shape
    cols = _im2col(x, kh, kw, stride, padding)
    y = cols @ w.reshape(cout, cin * kh * kw).T  # B,Ho,Wo,Cout
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def conv2d_grad_input(grad, w, h, wid, stride, padding):
    b, cout, ho, wo = grad.shape
    _, cin, kh, kw = w.shape
    # Scatter each output gradient back through its receptive field on the
    # padded canvas, then crop the padding off.
    cols = grad.transpose(0, 2, 3, 1) @ w.reshape(cout, cin * kh * kw)
    cols = cols.reshape(b, ho, wo, cin, kh, kw)
    dxp = np.zeros((b, cin, h + 2 * padding, wid + 2 * padding), dtype=grad.dtype)
    for ky in range(kh):
        for kx in range(kw):
            dxp[:, :, ky:ky + ho * stride:stride, kx:kx + wo * stride:stride] += \
                cols[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
    if padding > 0:
        dxp = dxp[:, :, padding:padding + h, padding:padding + wid]
    return np.ascontiguousarray(dxp)


def conv2d_grad_weight(grad, x, kh, kw, stride, padding):
    b, cout, ho, wo = grad.shape
    cin = x.shape[1]
    cols = _im2col(x, kh, kw, stride, padding).reshape(b * ho * wo, cin * kh * kw)
    g = grad.transpose(0, 2, 3, 1).reshape(b * ho * wo, cout)
    return np.ascontiguousarray((g.T @ cols).reshape(cout, cin, kh, kw))
