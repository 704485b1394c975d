"""Differentiable op set: convolution, normalization, attention, elementwise.

Every op is a pure function ``op(*tensors, ..., tape=None)``. With a tape it
records a (forward, backward) closure pair; without one it is plain numpy.
Inputs of rank 3 are treated as a single (c,h,w) sample, rank 4 as a
(n,c,h,w) batch. Binary elementwise ops require equal shapes; the only
broadcasting anywhere is multiplication by a python scalar.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from .autodiff import Tape, Tensor


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ValueError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    s = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + s), s / (1.0 + s))


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    _check_same_shape(a, b, "add")
    out = Tensor._wrap(a.data + b.data)
    if tape is not None:
        tape.record(out, (a, b), lambda x, y: x + y, lambda g: (g, g.copy()))
    return out


def sub(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    _check_same_shape(a, b, "sub")
    out = Tensor._wrap(a.data - b.data)
    if tape is not None:
        tape.record(out, (a, b), lambda x, y: x - y, lambda g: (g, -g))
    return out


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    _check_same_shape(a, b, "mul")
    out = Tensor._wrap(a.data * b.data)
    if tape is not None:
        ad, bd = a.data, b.data
        tape.record(out, (a, b), lambda x, y: x * y, lambda g: (g * bd, g * ad))
    return out


def scale(a: Tensor, s: float, tape: Tape | None = None) -> Tensor:
    s = float(s)
    sd = a.data.dtype.type(s)
    out = Tensor._wrap(a.data * sd)
    if tape is not None:
        tape.record(out, (a,), lambda x: x * sd, lambda g: (g * sd,))
    return out


def silu(a: Tensor, tape: Tape | None = None) -> Tensor:
    sig = _sigmoid(a.data)
    out = Tensor._wrap(a.data * sig)
    if tape is not None:
        ad = a.data
        tape.record(
            out,
            (a,),
            lambda x: x * _sigmoid(x),
            lambda g: (g * (sig * (1.0 + ad * (1.0 - sig))),),
        )
    return out


def square(a: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor._wrap(a.data * a.data)
    if tape is not None:
        ad = a.data
        tape.record(out, (a,), lambda x: x * x, lambda g: (2.0 * ad * g,))
    return out


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "scale": scale, "silu": silu, "square": square}


def elementwise(op_kind: str, a: Tensor, b=None, tape: Tape | None = None) -> Tensor:
    """Dispatch by kind; ``b`` is a tensor for add/sub/mul, a scalar for scale."""
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {op_kind!r}") from None
    if op_kind in ("add", "sub", "mul", "scale"):
        return fn(a, b, tape=tape)
    return fn(a, tape=tape)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _conv_1x1(x4: np.ndarray, wd: np.ndarray, bd: np.ndarray | None) -> np.ndarray:
    n, ci, h, w = x4.shape
    co = wd.shape[0]
    out = wd.reshape(co, ci) @ x4.reshape(n, ci, h * w)
    if bd is not None:
        out += bd[:, None]
    return np.ascontiguousarray(out.reshape(n, co, h, w))


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    pad: int = 0,
    tape: Tape | None = None,
) -> Tensor:
    """Cross-correlation with zero padding; x is (c,h,w) or (n,c,h,w)."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if pad < 0:
        raise ValueError("pad must be >= 0")
    if w.ndim != 4:
        raise ValueError(f"weight must be (c_out,c_in,kh,kw), got {w.shape}")
    squeeze = x.ndim == 3
    if x.ndim not in (3, 4):
        raise ValueError(f"input must be rank 3 or 4, got {x.shape}")
    co, ci, kh, kw = w.shape
    n, cx, h, ww_ = (1, *x.shape) if squeeze else x.shape
    if cx != ci:
        raise ValueError(f"input channels {cx} do not match weight c_in {ci}")
    if b is not None and b.shape != (co,):
        raise ValueError(f"bias must be ({co},), got {b.shape}")
    if (h + 2 * pad - kh) % stride or (ww_ + 2 * pad - kw) % stride:
        raise ValueError("non-integer output extent; adjust pad/stride")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (ww_ + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError("kernel larger than padded input")
    pointwise = kh == kw == 1 and stride == 1 and pad == 0

    def fwd(xd, wd, bd=None):
        x4 = xd[None] if squeeze else xd
        if pointwise:
            out = _conv_1x1(x4, wd, bd)
        else:
            cols = K.im2col_t(np.ascontiguousarray(x4), kh, kw, stride, pad)
            out = wd.reshape(co, -1) @ cols
            if bd is not None:
                out += bd[:, None]
            out = np.ascontiguousarray(
                out.reshape(co, n, oh, ow).transpose(1, 0, 2, 3)
            )
        return out[0] if squeeze else out

    inputs = (x, w) if b is None else (x, w, b)
    out = Tensor._wrap(fwd(*(t.data for t in inputs)))
    if tape is not None:
        xd, wd = x.data, w.data

        def bwd(g):
            g4 = np.ascontiguousarray(g[None] if squeeze else g)
            x4 = xd[None] if squeeze else xd
            if pointwise:
                gx = np.ascontiguousarray(
                    (wd.reshape(co, ci).T @ g4.reshape(n, co, oh * ow)).reshape(n, ci, h, ww_)
                )
                gw = (
                    (g4.reshape(n, co, -1) @ x4.reshape(n, ci, -1).transpose(0, 2, 1))
                    .sum(axis=0)
                    .reshape(w.shape)
                )
            else:
                gmat = np.ascontiguousarray(g4.transpose(1, 0, 2, 3)).reshape(co, -1)
                cols = K.im2col_t(np.ascontiguousarray(x4), kh, kw, stride, pad)
                gw = (gmat @ cols.T).reshape(w.shape)
                gcols = wd.reshape(co, -1).T @ gmat
                gx = K.col2im_t(
                    np.ascontiguousarray(gcols), n, ci, h, ww_, kh, kw, stride, pad
                )
            gx = gx[0] if squeeze else gx
            if b is None:
                return (gx, gw)
            return (gx, gw, g4.sum(axis=(0, 2, 3)))

        tape.record(out, inputs, fwd, bwd)
    return out


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def group_norm(
    x: Tensor,
    groups: int,
    gamma: Tensor,
    beta: Tensor,
    eps: float = 1e-5,
    tape: Tape | None = None,
) -> Tensor:
    """Per-group zero-mean/unit-variance over (channels/groups, h, w), then affine."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    squeeze = x.ndim == 3
    if x.ndim not in (3, 4):
        raise ValueError(f"input must be rank 3 or 4, got {x.shape}")
    n, c, h, w = (1, *x.shape) if squeeze else x.shape
    if c % groups:
        raise ValueError(f"channels {c} not divisible by groups {groups}")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError("gamma/beta must have one value per channel")
    eps = x.data.dtype.type(eps)

    def stats(xd):
        xg = xd.reshape(n, groups, -1)
        mu = xg.mean(axis=2, keepdims=True)
        var = xg.var(axis=2, keepdims=True)
        rstd = 1.0 / np.sqrt(var + eps)
        xhat = ((xg - mu) * rstd).reshape(n, c, h, w)
        return xhat, rstd

    def fwd(xd, gd, bd):
        x4 = xd[None] if squeeze else xd
        xhat, _ = stats(x4)
        out = xhat * gd[:, None, None] + bd[:, None, None]
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("group_norm produced non-finite values")
        return out[0] if squeeze else out

    out = Tensor._wrap(fwd(x.data, gamma.data, beta.data))
    if tape is not None:
        x4 = x.data[None] if squeeze else x.data
        xhat, rstd = stats(x4)
        gd = gamma.data

        def bwd(g):
            g4 = g[None] if squeeze else g
            dxhat = (g4 * gd[:, None, None]).reshape(n, groups, -1)
            xh = xhat.reshape(n, groups, -1)
            m1 = dxhat.mean(axis=2, keepdims=True)
            m2 = (dxhat * xh).mean(axis=2, keepdims=True)
            gx = (rstd * (dxhat - m1 - xh * m2)).reshape(n, c, h, w)
            ggamma = (g4 * xhat).sum(axis=(0, 2, 3))
            gbeta = g4.sum(axis=(0, 2, 3))
            return ((gx[0] if squeeze else gx), ggamma, gbeta)

        tape.record(out, (x, gamma, beta), fwd, bwd)
    return out


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis=-1, keepdims=True)


def attention2d(
    x: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    tape: Tape | None = None,
) -> Tensor:
    """Self-attention over the h*w token sequence with a residual connection.

    Tokens are rows: q = token @ wq, scores scaled by 1/sqrt(c),
    out = x + softmax(q k^T / sqrt(c)) v @ wo.
    """
    squeeze = x.ndim == 3
    if x.ndim not in (3, 4):
        raise ValueError(f"input must be rank 3 or 4, got {x.shape}")
    n, c, h, w = (1, *x.shape) if squeeze else x.shape
    for name, m in (("wq", wq), ("wk", wk), ("wv", wv), ("wo", wo)):
        if m.shape != (c, c):
            raise ValueError(f"{name} must be ({c},{c}), got {m.shape}")
    sc = 1.0 / float(np.sqrt(c))  # python float: does not promote float32 inputs

    def pieces(xd, wqd, wkd, wvd):
        x4 = xd[None] if squeeze else xd
        xt = np.ascontiguousarray(x4.reshape(n, c, h * w).transpose(0, 2, 1))
        q = xt @ wqd
        kk = xt @ wkd
        v = xt @ wvd
        a = _softmax_rows((q @ kk.transpose(0, 2, 1)) * sc)
        return xt, q, kk, v, a

    def fwd(xd, wqd, wkd, wvd, wod):
        xt, _, _, _, a = pieces(xd, wqd, wkd, wvd)
        z = (a @ (xt @ wvd)) @ wod
        out = (xt + z).transpose(0, 2, 1).reshape(n, c, h, w)
        out = np.ascontiguousarray(out)
        return out[0] if squeeze else out

    out = Tensor._wrap(fwd(x.data, wq.data, wk.data, wv.data, wo.data))
    if tape is not None:
        xt, q, kk, v, a = pieces(x.data, wq.data, wk.data, wv.data)
        wqd, wkd, wvd, wod = wq.data, wk.data, wv.data, wo.data

        def bwd(g):
            g4 = g[None] if squeeze else g
            gt = np.ascontiguousarray(g4.reshape(n, c, h * w).transpose(0, 2, 1))
            y = a @ v
            gwo = np.einsum("nti,ntj->ij", y, gt)
            gy = gt @ wod.T
            ga = gy @ v.transpose(0, 2, 1)
            gv = a.transpose(0, 2, 1) @ gy
            gs = a * (ga - (ga * a).sum(axis=-1, keepdims=True)) * sc
            gq = gs @ kk
            gk = gs.transpose(0, 2, 1) @ q
            gwq = np.einsum("nti,ntj->ij", xt, gq)
            gwk = np.einsum("nti,ntj->ij", xt, gk)
            gwv = np.einsum("nti,ntj->ij", xt, gv)
            gxt = gt + gq @ wqd.T + gk @ wkd.T + gv @ wvd.T
            gx = np.ascontiguousarray(gxt.transpose(0, 2, 1).reshape(n, c, h, w))
            return ((gx[0] if squeeze else gx), gwq, gwk, gwv, gwo)

        tape.record(out, (x, wq, wk, wv, wo), fwd, bwd)
    return out


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Row-wise affine map: (n, d_in) @ (d_in, d_out) + (d_out,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ValueError(f"linear: bad shapes x{x.shape} w{w.shape} b{b.shape}")
    out = Tensor._wrap(x.data @ w.data + b.data)
    if tape is not None:
        xd, wd = x.data, w.data
        tape.record(
            out,
            (x, w, b),
            lambda xv, wv, bv: xv @ wv + bv,
            lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)),
        )
    return out


def add_channel_bias(x: Tensor, bias: Tensor, tape: Tape | None = None) -> Tensor:
    """Add a per-sample, per-channel bias (n,c) to a (n,c,h,w) map."""
    if x.ndim != 4 or bias.ndim != 2 or x.shape[:2] != bias.shape:
        raise ValueError(f"add_channel_bias: bad shapes x{x.shape} bias{bias.shape}")
    out = Tensor._wrap(x.data + bias.data[:, :, None, None])
    if tape is not None:
        tape.record(
            out,
            (x, bias),
            lambda xd, bd: xd + bd[:, :, None, None],
            lambda g: (g, g.sum(axis=(2, 3))),
        )
    return out


def concat_channels(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.ndim != b.ndim or a.shape[-2:] != b.shape[-2:] or a.shape[:-3] != b.shape[:-3]:
        raise ValueError(f"concat_channels: incompatible shapes {a.shape} vs {b.shape}")
    ca = a.shape[-3]
    out = Tensor._wrap(np.concatenate((a.data, b.data), axis=-3))
    if tape is not None:
        tape.record(
            out,
            (a, b),
            lambda x, y: np.concatenate((x, y), axis=-3),
            lambda g: (g[..., :ca, :, :].copy(), g[..., ca:, :, :].copy()),
        )
    return out


def expand_batch(x: Tensor, tape: Tape | None = None) -> Tensor:
    """View a (c,h,w) sample as a (1,c,h,w) batch, keeping the tape connected."""
    out = Tensor._wrap(x.data[None])
    if tape is not None:
        tape.record(out, (x,), lambda v: v[None], lambda g: (g[0].copy(),))
    return out


def take_sample0(x: Tensor, tape: Tape | None = None) -> Tensor:
    """View a single-element batch as a (c,h,w) sample, keeping the tape connected."""
    if x.shape[0] != 1:
        raise ValueError(f"take_sample0 needs a batch of 1, got {x.shape}")
    out = Tensor._wrap(x.data[0])
    if tape is not None:
        tape.record(out, (x,), lambda v: v[0], lambda g: (g[None].copy(),))
    return out


def upsample_nearest2x(x: Tensor, tape: Tape | None = None) -> Tensor:
    if x.ndim not in (3, 4):
        raise ValueError(f"input must be rank 3 or 4, got {x.shape}")
    out = Tensor._wrap(np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1))

    def bwd(g):
        s = g.shape
        gr = g.reshape(*s[:-2], s[-2] // 2, 2, s[-1] // 2, 2)
        return (gr.sum(axis=(-3, -1)),)

    if tape is not None:
        tape.record(out, (x,), lambda v: np.repeat(np.repeat(v, 2, axis=-2), 2, axis=-1), bwd)
    return out


def avgpool2x(x: Tensor, tape: Tape | None = None) -> Tensor:
    if x.ndim not in (3, 4) or x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ValueError(f"avgpool2x needs even spatial extents, got {x.shape}")

    def fwd(v):
        s = v.shape
        return v.reshape(*s[:-2], s[-2] // 2, 2, s[-1] // 2, 2).mean(axis=(-3, -1))

    out = Tensor._wrap(fwd(x.data))
    if tape is not None:
        qd = x.data.dtype.type(0.25)
        tape.record(
            out,
            (x,),
            fwd,
            lambda g: (np.repeat(np.repeat(g * qd, 2, axis=-2), 2, axis=-1),),
        )
    return out


# ---------------------------------------------------------------------------
# reductions and losses
# ---------------------------------------------------------------------------


def sum_all(x: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor._wrap(np.asarray(x.data.sum(), dtype=x.dtype))
    if tape is not None:
        shape, dt = x.shape, x.dtype
        tape.record(
            out,
            (x,),
            lambda v: np.asarray(v.sum(), dtype=dt),
            lambda g: (np.full(shape, g, dtype=dt),),
        )
    return out


def mean_all(x: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor._wrap(np.asarray(x.data.mean(), dtype=x.dtype))
    if tape is not None:
        shape, dt, inv = x.shape, x.dtype, 1.0 / x.size
        tape.record(
            out,
            (x,),
            lambda v: np.asarray(v.mean(), dtype=dt),
            lambda g: (np.full(shape, g * dt.type(inv), dtype=dt),),
        )
    return out


def mse(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Mean squared error over all elements."""
    _check_same_shape(a, b, "mse")

    def fwd(x, y):
        d = x - y
        out = np.asarray((d * d).mean(), dtype=x.dtype)
        if not np.isfinite(out):
            raise FloatingPointError("mse produced a non-finite value")
        return out

    out = Tensor._wrap(fwd(a.data, b.data))
    if tape is not None:
        ad, bd = a.data, b.data
        inv = 2.0 / a.size

        def bwd(g):
            ga = (ad - bd) * (g * ad.dtype.type(inv))
            return (ga, -ga)

        tape.record(out, (a, b), fwd, bwd)
    return out
