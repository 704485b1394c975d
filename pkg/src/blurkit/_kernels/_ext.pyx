# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of blurkit._kernels._numpy, same signatures and summation order."""

import numpy as np

cimport cython


ctypedef fused real:
    float
    double


def eac_forward(real[:, :, ::1] z, real[:, :, ::1] f, int k):
    cdef Py_ssize_t c = z.shape[0], h = z.shape[1], w = z.shape[2]
    cdef int r = (k - 1) // 2
    cdef Py_ssize_t ci, y, x, base
    cdef int n, m
    cdef Py_ssize_t yy, xx
    cdef real acc
    out_np = np.zeros((c, h, w), dtype=np.asarray(z).dtype)
    cdef real[:, :, ::1] out = out_np
    for ci in range(c):
        base = ci * k * k
        for y in range(h):
            for x in range(w):
                acc = 0
                for n in range(-r, r + 1):
                    yy = y - n
                    if yy < 0 or yy >= h:
                        continue
                    for m in range(-r, r + 1):
                        xx = x - m
                        if xx < 0 or xx >= w:
                            continue
                        acc = acc + f[base + (n + r) * k + (m + r), y, x] * z[ci, yy, xx]
                out[ci, y, x] = acc
    return out_np


def eac_grad_field(real[:, :, ::1] z, real[:, :, ::1] grad_out, int k):
    cdef Py_ssize_t c = z.shape[0], h = z.shape[1], w = z.shape[2]
    cdef int r = (k - 1) // 2
    cdef Py_ssize_t ci, y, x, base
    cdef int n, m
    cdef Py_ssize_t yy, xx
    gf_np = np.zeros((c * k * k, h, w), dtype=np.asarray(z).dtype)
    cdef real[:, :, ::1] gf = gf_np
    for ci in range(c):
        base = ci * k * k
        for n in range(-r, r + 1):
            for m in range(-r, r + 1):
                for y in range(h):
                    yy = y - n
                    if yy < 0 or yy >= h:
                        continue
                    for x in range(w):
                        xx = x - m
                        if xx < 0 or xx >= w:
                            continue
                        gf[base + (n + r) * k + (m + r), y, x] = grad_out[ci, y, x] * z[ci, yy, xx]
    return gf_np


def eac_grad_input(real[:, :, ::1] f, real[:, :, ::1] grad_out, int k):
    cdef Py_ssize_t c = grad_out.shape[0], h = grad_out.shape[1], w = grad_out.shape[2]
    cdef int r = (k - 1) // 2
    cdef Py_ssize_t ci, y, x, base
    cdef int n, m
    cdef Py_ssize_t yy, xx
    cdef real acc
    gz_np = np.zeros((c, h, w), dtype=np.asarray(grad_out).dtype)
    cdef real[:, :, ::1] gz = gz_np
    for ci in range(c):
        base = ci * k * k
        for y in range(h):
            for x in range(w):
                acc = 0
                for n in range(-r, r + 1):
                    yy = y + n
                    if yy < 0 or yy >= h:
                        continue
                    for m in range(-r, r + 1):
                        xx = x + m
                        if xx < 0 or xx >= w:
                            continue
                        acc = acc + grad_out[ci, yy, xx] * f[base + (n + r) * k + (m + r), yy, xx]
                gz[ci, y, x] = acc
    return gz_np


def im2col_t(real[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    # (c*kh*kw, n*oh*ow) layout: every row is a contiguous-stride gather, most
    # of them straight memcpy spans when stride == 1.
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t b, oy, ox, ci, dst
    cdef Py_ssize_t yy, x0, lo, hi, span
    cdef int i, j
    cols_np = np.zeros((c * kh * kw, n * oh * ow), dtype=np.asarray(x).dtype)
    cdef real[:, ::1] cols = cols_np
    cdef real[::1] row
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                row = cols[(ci * kh + i) * kw + j]
                for b in range(n):
                    for oy in range(oh):
                        yy = oy * stride - pad + i
                        if yy < 0 or yy >= h:
                            continue
                        dst = (b * oh + oy) * ow
                        x0 = j - pad
                        if stride == 1:
                            lo = max(0, -x0)
                            hi = min(ow, w - x0)
                            for ox in range(lo, hi):
                                row[dst + ox] = x[b, ci, yy, x0 + ox]
                        else:
                            for ox in range(ow):
                                xx = ox * stride + x0
                                if 0 <= xx < w:
                                    row[dst + ox] = x[b, ci, yy, xx]
    return cols_np


def col2im_t(real[:, ::1] cols, int n, int c, int h, int w, int kh, int kw, int stride, int pad):
    # Tap-major accumulation keeps per-element addition order identical to the
    # numpy lane, so both lanes return bit-identical arrays.
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t b, oy, ox, ci, src
    cdef Py_ssize_t yy, x0, lo, hi
    cdef int i, j
    gx_np = np.zeros((n, c, h, w), dtype=np.asarray(cols).dtype)
    cdef real[:, :, :, ::1] gx = gx_np
    cdef real[::1] row
    for i in range(kh):
        for j in range(kw):
            for ci in range(c):
                row = cols[(ci * kh + i) * kw + j]
                for b in range(n):
                    for oy in range(oh):
                        yy = oy * stride - pad + i
                        if yy < 0 or yy >= h:
                            continue
                        src = (b * oh + oy) * ow
                        x0 = j - pad
                        if stride == 1:
                            lo = max(0, -x0)
                            hi = min(ow, w - x0)
                            for ox in range(lo, hi):
                                gx[b, ci, yy, x0 + ox] += row[src + ox]
                        else:
                            for ox in range(ow):
                                if 0 <= ox * stride + x0 < w:
                                    gx[b, ci, yy, ox * stride + x0] += row[src + ox]
    return gx_np
