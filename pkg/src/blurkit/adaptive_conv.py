"""Element-wise adaptive convolution: a distinct k x k filter per position.

A kernel field stores, for every latent position (y, x) and channel c, one
k x k filter in the channel block [c*k*k, (c+1)*k*k). Applying the field to a
latent grid computes

    out(c,y,x) = sum_{n,m = -r..r} field(c*k*k + (n+r)*k + (m+r), y, x) * z(c, y-n, x-m)

with r = (k-1)/2 and z read as zero outside its bounds. The channel-block
layout is the bijective 0-based indexing of the per-position filters; taps
are accumulated row-major over (n, m).
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from .autodiff import Tape, Tensor


def _field_checks(z: Tensor, field: Tensor, k: int) -> None:
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel extent k must be odd and positive, got {k}")
    if z.ndim != field.ndim or z.ndim not in (3, 4):
        raise ValueError(f"rank mismatch: z{z.shape} field{field.shape}")
    c = z.shape[-3]
    if field.shape[-3] != c * k * k:
        raise ValueError(
            f"field needs {c * k * k} channels for {c} latent channels at k={k}, "
            f"got {field.shape[-3]}"
        )
    if z.shape[-2:] != field.shape[-2:] or z.shape[:-3] != field.shape[:-3]:
        raise ValueError(f"extent mismatch: z{z.shape} field{field.shape}")


def _fold(arr: np.ndarray) -> np.ndarray:
    # (n, c, h, w) -> (n*c, h, w); channels are independent under the op.
    return np.ascontiguousarray(arr).reshape(-1, *arr.shape[-2:])


def adaptive_conv(z: Tensor, field: Tensor, k: int, tape: Tape | None = None) -> Tensor:
    """Apply a per-position kernel field to a latent grid (zero padding)."""
    _field_checks(z, field, k)

    def fwd(zd, fd):
        out = K.eac_forward(_fold(zd), _fold(fd), k)
        return out.reshape(zd.shape)

    out = Tensor._wrap(fwd(z.data, field.data))
    if tape is not None:
        zd, fd = z.data, field.data

        def bwd(g):
            gz, gf = adaptive_conv_grads(zd, fd, g, k)
            return (gz, gf)

        tape.record(out, (z, field), fwd, bwd)
    return out


def adaptive_conv_grads(
    z: np.ndarray | Tensor,
    field: np.ndarray | Tensor,
    grad_out: np.ndarray | Tensor,
    k: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of ``adaptive_conv`` w.r.t. the grid and the field."""
    zd = z.data if isinstance(z, Tensor) else np.asarray(z)
    fd = field.data if isinstance(field, Tensor) else np.asarray(field)
    gd = grad_out.data if isinstance(grad_out, Tensor) else np.asarray(grad_out)
    if gd.shape != zd.shape:
        raise ValueError(f"grad_out shape {gd.shape} must match grid shape {zd.shape}")
    _field_checks(Tensor._wrap(zd), Tensor._wrap(fd), k)
    g2 = _fold(gd)
    gz = K.eac_grad_input(_fold(fd), g2, k).reshape(zd.shape)
    gf = K.eac_grad_field(_fold(zd), g2, k).reshape(fd.shape)
    return gz, gf


def delta_field(c: int, h: int, w: int, k: int, dtype=np.float32) -> Tensor:
    """Kernel field whose adaptive convolution is the identity map."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel extent k must be odd and positive, got {k}")
    r = (k - 1) // 2
    f = np.zeros((c * k * k, h, w), dtype=dtype)
    f[r * k + r :: k * k] = 1.0
    return Tensor._wrap(f)
