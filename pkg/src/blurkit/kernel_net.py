"""Kernel predictor: U-Net mapping (noisy latent, blurry latent, t) to a kernel field.

The head is a 1x1 convolution emitting c*k*k channels, one k x k filter per
latent channel and position (see :mod:`blurkit.adaptive_conv` for the layout).
Zero head init emits the zero field; delta init emits the identity field, a
useful warm start since the adaptive convolution then starts as a pass-through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .autodiff import Tape, Tensor
from .unet import UNetSpec, init_unet, unet_forward


@dataclass
class KernelPredictorConfig:
    latent_channels: int = 1
    base_channels: int = 32
    levels: int = 3
    blocks_per_level: int = 1
    k: int = 5
    attention_levels: tuple[int, ...] | None = None  # default: lowest resolution only
    temb_dim: int | None = None  # default: 4 * base_channels
    head_init: str = "zeros"  # zeros | delta
    predict_latent: bool = False  # ablation: head emits the latent itself, no kernels

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"k must be odd and positive, got {self.k}")
        if self.attention_levels is None:
            self.attention_levels = (self.levels - 1,)
        else:
            self.attention_levels = tuple(self.attention_levels)
        if self.temb_dim is None:
            self.temb_dim = 4 * self.base_channels
        if self.head_init not in ("zeros", "delta"):
            raise ValueError(f"head_init must be 'zeros' or 'delta', got {self.head_init!r}")

    @property
    def field_channels(self) -> int:
        c = self.latent_channels
        return c if self.predict_latent else c * self.k * self.k

    def unet_spec(self) -> UNetSpec:
        return UNetSpec(
            in_channels=2 * self.latent_channels,
            out_channels=self.field_channels,
            base_channels=self.base_channels,
            levels=self.levels,
            blocks_per_level=self.blocks_per_level,
            attention_levels=self.attention_levels,
            temb_dim=self.temb_dim,
            head_kernel=1,
            head_zero_init=True,
        )


def init_kernel_predictor(
    cfg: KernelPredictorConfig, rng, prefix: str = "kpn", dtype=np.float32
) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    init_unet(params, prefix, cfg.unet_spec(), rng, dtype)
    if cfg.head_init == "delta" and not cfg.predict_latent:
        r = (cfg.k - 1) // 2
        bias = params[prefix + ".head.b"].data
        bias[r * cfg.k + r :: cfg.k * cfg.k] = 1.0
    return params


def predict_kernel_field(
    params: dict[str, Tensor],
    z_t: Tensor,
    z_lq: Tensor,
    t,
    cfg: KernelPredictorConfig,
    tape: Tape | None = None,
    prefix: str = "kpn",
) -> Tensor:
    """Kernel field (c*k*k, h, w) for each sample; inputs are (c,h,w) or (n,c,h,w)."""
    if z_t.shape != z_lq.shape:
        raise ValueError(f"z_t {z_t.shape} and z_lq {z_lq.shape} must match")
    if z_t.shape[-3] != cfg.latent_channels:
        raise ValueError(f"expected {cfg.latent_channels} latent channels, got {z_t.shape[-3]}")
    squeeze = z_t.ndim == 3
    if squeeze:
        z_t = ops.expand_batch(z_t, tape=tape)
        z_lq = ops.expand_batch(z_lq, tape=tape)
    x = ops.concat_channels(z_t, z_lq, tape=tape)
    field = unet_forward(params, prefix, x, t, cfg.unet_spec(), tape=tape)
    return ops.take_sample0(field, tape=tape) if squeeze else field
