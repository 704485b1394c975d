"""Pure-numpy implementations of the hot inner kernels.

Drop-in twin of the compiled extension ``blurkit._kernels._ext``. Both lanes
share exact summation order (row-major over kernel taps), so their outputs are
bit-identical; the selector in ``blurkit._kernels`` picks one at import time.
"""

from __future__ import annotations

import numpy as np


def eac_forward(z: np.ndarray, f: np.ndarray, k: int) -> np.ndarray:
    """Apply a per-position, per-channel k x k kernel field to a latent grid.

    out(c,y,x) = sum_{n,m in [-r,r]} f(c*k*k + (n+r)*k + (m+r), y, x) * z(c, y-n, x-m)

    with z read as zero outside its bounds. Tap accumulation is row-major
    over (n, m).
    """
    c, h, w = z.shape
    r = (k - 1) // 2
    zp = np.zeros((c, h + 2 * r, w + 2 * r), dtype=z.dtype)
    zp[:, r : r + h, r : r + w] = z
    out = np.zeros_like(z)
    kk = k * k
    for n in range(-r, r + 1):
        for m in range(-r, r + 1):
            tap = (n + r) * k + (m + r)
            # z(c, y-n, x-m) over all (y, x) is the padded slice below
            out += f[tap::kk] * zp[:, r - n : r - n + h, r - m : r - m + w]
    return out


def eac_grad_field(z: np.ndarray, grad_out: np.ndarray, k: int) -> np.ndarray:
    """Gradient of eac_forward with respect to the kernel field."""
    c, h, w = z.shape
    r = (k - 1) // 2
    zp = np.zeros((c, h + 2 * r, w + 2 * r), dtype=z.dtype)
    zp[:, r : r + h, r : r + w] = z
    gf = np.empty((c * k * k, h, w), dtype=z.dtype)
    kk = k * k
    for n in range(-r, r + 1):
        for m in range(-r, r + 1):
            tap = (n + r) * k + (m + r)
            gf[tap::kk] = grad_out * zp[:, r - n : r - n + h, r - m : r - m + w]
    return gf


def eac_grad_input(f: np.ndarray, grad_out: np.ndarray, k: int) -> np.ndarray:
    """Gradient of eac_forward with respect to the latent grid."""
    c, h, w = grad_out.shape
    r = (k - 1) // 2
    gz = np.zeros_like(grad_out)
    gp = np.zeros((c, h + 2 * r, w + 2 * r), dtype=grad_out.dtype)
    kk = k * k
    for n in range(-r, r + 1):
        for m in range(-r, r + 1):
            tap = (n + r) * k + (m + r)
            gp[:, r : r + h, r : r + w] = grad_out * f[tap::kk]
            # out-of-bounds terms fall in the zero margin and are dropped
            gz += gp[:, r + n : r + n + h, r + m : r + m + w]
    return gz


def im2col_t(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Conv patches of a (n,c,h,w) array as a (c*kh*kw, n*oh*ow) matrix.

    Row (ci*kh + i)*kw + j holds tap (i, j) of channel ci for every output
    position, so each row is a contiguous gather and the conv reduces to one
    weight-matrix gemm.
    """
    n, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if pad > 0:
        xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad : pad + h, pad : pad + w] = x
    else:
        xp = x
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, oh, ow, kh, kw),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3),
        writeable=False,
    )
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * oh * ow)


def col2im_t(
    cols: np.ndarray,
    n: int,
    c: int,
    h: int,
    w: int,
    kh: int,
    kw: int,
    stride: int,
    pad: int,
) -> np.ndarray:
    """Scatter-add a (c*kh*kw, n*oh*ow) patch matrix back onto (n,c,h,w)."""
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cr = cols.reshape(c, kh, kw, n, oh, ow)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += (
                cr[:, i, j].transpose(1, 0, 2, 3)
            )
    if pad > 0:
        return np.ascontiguousarray(gxp[:, :, pad : pad + h, pad : pad + w])
    return gxp
