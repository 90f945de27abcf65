# cython: boundscheck=False, wraparound=False, cdivision=True
"""Direct-loop 2D convolution kernels (float32/float64).

Same contract as kernels.reference; selected at import by kernels/__init__.
Single-threaded on purpose: accumulation order is fixed, so results are
deterministic run to run.
"""
import numpy as np

cimport cython


ctypedef fused floating:
    float
    double


def conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                   int stride, int padding):
    cdef Py_ssize_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * padding - kw) // stride + 1
    if floating is float:
        out_arr = np.zeros((B, Cout, Ho, Wo), dtype=np.float32)
    else:
        out_arr = np.zeros((B, Cout, Ho, Wo), dtype=np.float64)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, co, ci, oy, ox, ky, kx, iy, ix
    cdef floating acc
    for b in range(B):
        for co in range(Cout):
            for oy in range(Ho):
                for ox in range(Wo):
                    acc = 0
                    for ci in range(Cin):
                        for ky in range(kh):
                            iy = oy * stride - padding + ky
                            if iy < 0 or iy >= H:
                                continue
                            for kx in range(kw):
                                ix = ox * stride - padding + kx
                                if ix < 0 or ix >= W:
                                    continue
                                acc = acc + x[b, ci, iy, ix] * w[co, ci, ky, kx]
                    out[b, co, oy, ox] = acc
    return out_arr


def conv2d_grad_input(floating[:, :, :, ::1] grad, floating[:, :, :, ::1] w,
                      Py_ssize_t H, Py_ssize_t W, int stride, int padding):
    cdef Py_ssize_t B = grad.shape[0], Cout = grad.shape[1]
    cdef Py_ssize_t Ho = grad.shape[2], Wo = grad.shape[3]
    cdef Py_ssize_t Cin = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    if floating is float:
        dx_arr = np.zeros((B, Cin, H, W), dtype=np.float32)
    else:
        dx_arr = np.zeros((B, Cin, H, W), dtype=np.float64)
    cdef floating[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, co, ci, oy, ox, ky, kx, iy, ix
    cdef floating g
    for b in range(B):
        for co in range(Cout):
            for oy in range(Ho):
                for ox in range(Wo):
                    g = grad[b, co, oy, ox]
                    for ci in range(Cin):
                        for ky in range(kh):
                            iy = oy * stride - padding + ky
                            if iy < 0 or iy >= H:
                                continue
                            for kx in range(kw):
                                ix = ox * stride - padding + kx
                                if ix < 0 or ix >= W:
                                    continue
                                dx[b, ci, iy, ix] = dx[b, ci, iy, ix] + g * w[co, ci, ky, kx]
    return dx_arr


def conv2d_grad_weight(floating[:, :, :, ::1] grad, floating[:, :, :, ::1] x,
                       Py_ssize_t kh, Py_ssize_t kw, int stride, int padding):
    cdef Py_ssize_t B = grad.shape[0], Cout = grad.shape[1]
    cdef Py_ssize_t Ho = grad.shape[2], Wo = grad.shape[3]
    cdef Py_ssize_t Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    if floating is float:
        dw_arr = np.zeros((Cout, Cin, kh, kw), dtype=np.float32)
    else:
        dw_arr = np.zeros((Cout, Cin, kh, kw), dtype=np.float64)
    cdef floating[:, :, :, ::1] dw = dw_arr
    cdef Py_ssize_t b, co, ci, oy, ox, ky, kx, iy, ix
    cdef floating g
    for b in range(B):
        for co in range(Cout):
            for oy in range(Ho):
                for ox in range(Wo):
                    g = grad[b, co, oy, ox]
                    for ci in range(Cin):
                        for ky in range(kh):
                            iy = oy * stride - padding + ky
                            if iy < 0 or iy >= H:
                                continue
                            for kx in range(kw):
                                ix = ox * stride - padding + kx
                                if ix < 0 or ix >= W:
                                    continue
                                dw[co, ci, ky, kx] = dw[co, ci, ky, kx] + g * x[b, ci, iy, ix]
    return dw_arr
