"""Time-conditioned U-Net blocks shared by the kernel predictor and denoiser.

Parameters live in a flat ``{name: Tensor}`` dict under a caller-chosen dotted
prefix, so the whole model serializes as named tensors. ``init_*`` functions
populate the dict (deterministically, given an rng); ``*_forward`` functions
consume it. All forward paths accept a (n,c,h,w) batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .autodiff import Tape, Tensor


def gn_groups(c: int) -> int:
    """Largest group count <= min(8, c) that divides c."""
    g = min(8, c)
    while c % g:
        g -= 1
    return g


def sinusoid(t, dim: int) -> np.ndarray:
    """Sinusoidal position features: half sin, half cos, frequencies 1..1/10000.

    ``t`` is a non-negative int or an int array (n,); returns (n, dim) float64.
    """
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if np.any(t_arr < 0):
        raise ValueError("t must be non-negative")
    half = dim // 2
    if half > 1:
        freqs = 10000.0 ** (-np.arange(half, dtype=np.float64) / (half - 1))
    else:
        freqs = np.ones(1)
    ang = t_arr[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def time_embed(t, w: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Sinusoidal features followed by the learned linear map: (n, temb_dim)."""
    feats = Tensor._wrap(sinusoid(t, w.shape[0]).astype(w.dtype))
    return ops.linear(feats, w, b, tape=tape)


# ---------------------------------------------------------------------------
# initializers
# ---------------------------------------------------------------------------


def _conv_init(params, name, c_out, c_in, kh, kw, rng, dtype, zero=False):
    fan_in = c_in * kh * kw
    if zero:
        w = np.zeros((c_out, c_in, kh, kw), dtype=dtype)
    else:
        w = (rng.standard_normal((c_out, c_in, kh, kw)) * np.sqrt(2.0 / fan_in)).astype(dtype)
    params[name + ".w"] = Tensor._wrap(w)
    params[name + ".b"] = Tensor._wrap(np.zeros(c_out, dtype=dtype))


def _linear_init(params, name, d_in, d_out, rng, dtype):
    w = (rng.standard_normal((d_in, d_out)) * np.sqrt(1.0 / d_in)).astype(dtype)
    params[name + ".w"] = Tensor._wrap(w)
    params[name + ".b"] = Tensor._wrap(np.zeros(d_out, dtype=dtype))


def _gn_init(params, name, c, dtype):
    params[name + ".g"] = Tensor._wrap(np.ones(c, dtype=dtype))
    params[name + ".b"] = Tensor._wrap(np.zeros(c, dtype=dtype))


def _attn_init(params, name, c, rng, dtype):
    s = np.sqrt(1.0 / c)
    for wn in ("wq", "wk", "wv"):
        params[f"{name}.{wn}"] = Tensor._wrap((rng.standard_normal((c, c)) * s).astype(dtype))
    # zero output projection: the attention branch starts as the identity
    params[name + ".wo"] = Tensor._wrap(np.zeros((c, c), dtype=dtype))


def init_resblock(params, prefix, c_in, c_out, temb_dim, rng, dtype):
    _gn_init(params, prefix + ".gn1", c_in, dtype)
    _conv_init(params, prefix + ".conv1", c_out, c_in, 3, 3, rng, dtype)
    _linear_init(params, prefix + ".temb", temb_dim, c_out, rng, dtype)
    _gn_init(params, prefix + ".gn2", c_out, dtype)
    _conv_init(params, prefix + ".conv2", c_out, c_out, 3, 3, rng, dtype)
    if c_in != c_out:
        _conv_init(params, prefix + ".skip", c_out, c_in, 1, 1, rng, dtype)


def resblock(params, prefix, x: Tensor, temb: Tensor, tape: Tape | None = None) -> Tensor:
    """group_norm -> silu -> conv3x3 -> +time bias -> group_norm -> silu -> conv3x3, residual."""
    p = lambda s: params[f"{prefix}.{s}"]
    c_in = x.shape[-3]
    h = ops.group_norm(x, gn_groups(c_in), p("gn1.g"), p("gn1.b"), tape=tape)
    h = ops.silu(h, tape=tape)
    h = ops.conv2d(h, p("conv1.w"), p("conv1.b"), pad=1, tape=tape)
    bias = ops.linear(temb, p("temb.w"), p("temb.b"), tape=tape)
    h = ops.add_channel_bias(h, bias, tape=tape)
    c_out = h.shape[-3]
    h = ops.group_norm(h, gn_groups(c_out), p("gn2.g"), p("gn2.b"), tape=tape)
    h = ops.silu(h, tape=tape)
    h = ops.conv2d(h, p("conv2.w"), p("conv2.b"), pad=1, tape=tape)
    if f"{prefix}.skip.w" in params:
        x = ops.conv2d(x, p("skip.w"), p("skip.b"), tape=tape)
    return ops.add(h, x, tape=tape)


# ---------------------------------------------------------------------------
# U-Net
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UNetSpec:
    """Wiring of one U-Net: extents only, no learned state."""

    in_channels: int
    out_channels: int
    base_channels: int = 32
    levels: int = 3
    blocks_per_level: int = 1
    attention_levels: tuple[int, ...] = ()
    temb_dim: int = 128
    head_kernel: int = 1
    head_zero_init: bool = True

    def __post_init__(self):
        if self.levels < 1 or self.blocks_per_level < 1:
            raise ValueError("levels and blocks_per_level must be >= 1")
        if self.base_channels % 2:
            raise ValueError("base_channels must be even (sinusoid dim)")
        for l in self.attention_levels:
            if not 0 <= l < self.levels:
                raise ValueError(f"attention level {l} outside [0, {self.levels})")

    def channels(self, level: int) -> int:
        return self.base_channels * 2**level


def init_unet_encoder(params, prefix, spec: UNetSpec, rng, dtype):
    _linear_init(params, prefix + ".time", spec.base_channels, spec.temb_dim, rng, dtype)
    _conv_init(params, prefix + ".stem", spec.base_channels, spec.in_channels, 3, 3, rng, dtype)
    for l in range(spec.levels):
        ch = spec.channels(l)
        for b in range(spec.blocks_per_level):
            init_resblock(params, f"{prefix}.enc{l}.rb{b}", ch, ch, spec.temb_dim, rng, dtype)
            if l in spec.attention_levels:
                _attn_init(params, f"{prefix}.enc{l}.rb{b}.attn", ch, rng, dtype)
        if l < spec.levels - 1:
            # 2x2 stride-2 conv halves even extents with an exact integer output size
            _conv_init(params, f"{prefix}.down{l}", spec.channels(l + 1), ch, 2, 2, rng, dtype)


def init_unet(params, prefix, spec: UNetSpec, rng, dtype):
    init_unet_encoder(params, prefix, spec, rng, dtype)
    for l in reversed(range(spec.levels)):
        ch = spec.channels(l)
        for b in range(spec.blocks_per_level):
            c_in = 2 * ch if b == 0 else ch
            init_resblock(params, f"{prefix}.dec{l}.rb{b}", c_in, ch, spec.temb_dim, rng, dtype)
            if l in spec.attention_levels:
                _attn_init(params, f"{prefix}.dec{l}.rb{b}.attn", ch, rng, dtype)
        if l > 0:
            _conv_init(params, f"{prefix}.up{l}", spec.channels(l - 1), ch, 3, 3, rng, dtype)
    _gn_init(params, prefix + ".head.gn", spec.base_channels, dtype)
    _conv_init(
        params,
        prefix + ".head",
        spec.out_channels,
        spec.base_channels,
        spec.head_kernel,
        spec.head_kernel,
        rng,
        dtype,
        zero=spec.head_zero_init,
    )


def _check_spatial(x: Tensor, spec: UNetSpec) -> None:
    div = 2 ** (spec.levels - 1)
    h, w = x.shape[-2:]
    if h % div or w % div:
        raise ValueError(f"spatial extents {h}x{w} must be divisible by {div}")


def unet_time_embedding(params, prefix, t, n: int, tape: Tape | None = None) -> Tensor:
    """Per-sample embedding; a scalar t is shared by all n samples."""
    t_arr = np.asarray(t)
    if t_arr.ndim == 0:
        t_arr = np.full(n, int(t_arr))
    elif t_arr.shape != (n,):
        raise ValueError(f"t must be a scalar or shape ({n},), got {t_arr.shape}")
    return time_embed(t_arr, params[prefix + ".time.w"], params[prefix + ".time.b"], tape=tape)


def unet_encode(params, prefix, x: Tensor, temb: Tensor, spec: UNetSpec, tape=None) -> list[Tensor]:
    """Run stem + encoder; returns the per-level features (last one is the bottom)."""
    _check_spatial(x, spec)
    h = ops.conv2d(x, params[prefix + ".stem.w"], params[prefix + ".stem.b"], pad=1, tape=tape)
    skips = []
    for l in range(spec.levels):
        for b in range(spec.blocks_per_level):
            rb = f"{prefix}.enc{l}.rb{b}"
            h = resblock(params, rb, h, temb, tape=tape)
            if l in spec.attention_levels:
                h = ops.attention2d(
                    h,
                    params[rb + ".attn.wq"],
                    params[rb + ".attn.wk"],
                    params[rb + ".attn.wv"],
                    params[rb + ".attn.wo"],
                    tape=tape,
                )
        skips.append(h)
        if l < spec.levels - 1:
            h = ops.conv2d(
                h, params[f"{prefix}.down{l}.w"], params[f"{prefix}.down{l}.b"],
                stride=2, tape=tape,
            )
    return skips


def unet_forward(
    params,
    prefix,
    x: Tensor,
    t,
    spec: UNetSpec,
    tape: Tape | None = None,
    skip_injections: list[Tensor] | None = None,
) -> Tensor:
    """Full encoder/decoder pass.

    ``skip_injections`` (one tensor per level, shapes matching the encoder
    features) are added to the skip path before the decoder consumes it; this
    is how the conditioning branch feeds the denoiser.
    """
    if x.ndim != 4:
        raise ValueError(f"unet_forward expects a (n,c,h,w) batch, got {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"expected {spec.in_channels} input channels, got {x.shape[1]}")
    temb = unet_time_embedding(params, prefix, t, x.shape[0], tape=tape)
    skips = unet_encode(params, prefix, x, temb, spec, tape=tape)
    if skip_injections is not None:
        if len(skip_injections) != len(skips):
            raise ValueError(f"need {len(skips)} injections, got {len(skip_injections)}")
        skips = [ops.add(s, inj, tape=tape) for s, inj in zip(skips, skip_injections)]
    h = skips[-1]
    for l in reversed(range(spec.levels)):
        h = ops.concat_channels(h, skips[l], tape=tape)
        for b in range(spec.blocks_per_level):
            rb = f"{prefix}.dec{l}.rb{b}"
            h = resblock(params, rb, h, temb, tape=tape)
            if l in spec.attention_levels:
                h = ops.attention2d(
                    h,
                    params[rb + ".attn.wq"],
                    params[rb + ".attn.wk"],
                    params[rb + ".attn.wv"],
                    params[rb + ".attn.wo"],
                    tape=tape,
                )
        if l > 0:
            h = ops.upsample_nearest2x(h, tape=tape)
            h = ops.conv2d(
                h, params[f"{prefix}.up{l}.w"], params[f"{prefix}.up{l}.b"], pad=1, tape=tape
            )
    h = ops.group_norm(
        h, gn_groups(spec.base_channels),
        params[prefix + ".head.gn.g"], params[prefix + ".head.gn.b"], tape=tape,
    )
    h = ops.silu(h, tape=tape)
    return ops.conv2d(
        h, params[prefix + ".head.w"], params[prefix + ".head.b"],
        pad=spec.head_kernel // 2, tape=tape,
    )


def randomized(params: dict[str, Tensor], rng, scale: float = 0.05) -> dict[str, Tensor]:
    """Fresh normal values for every tensor; used by gradient and sanity tests."""
    return {
        k: Tensor._wrap((rng.standard_normal(p.shape) * scale).astype(p.dtype))
        for k, p in params.items()
    }
