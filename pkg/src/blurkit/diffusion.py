"""DDPM noise schedule, controlled denoiser, and the guided sampling loop.

The denoiser is a U-Net predicting the added noise, plus a conditioning
branch: a copy of the encoder (separate parameters) that consumes the
channel-concatenated guidance (deblurred latent, blurry latent) and feeds the
base decoder's skip connections through 1x1 convolutions initialized to zero.
Until those zero convolutions move away from zero, the output is bit-exactly
independent of the conditioning input.

Sampling re-estimates the kernel field from the current diffusion state at
every step, applies it to the blurry latent to refresh the guidance, and takes
one ancestral update:

    z_{t-1} = (z_t - (1-a_t)/sqrt(1-abar_t) * eps_pred) / sqrt(a_t) + sigma_t * noise
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .adaptive_conv import adaptive_conv
from .autodiff import Tape, Tensor
from .kernel_net import KernelPredictorConfig, init_kernel_predictor, predict_kernel_field
from .unet import UNetSpec, init_unet, init_unet_encoder, unet_encode, unet_forward, unet_time_embedding

ABLATIONS = ("full", "no_eac", "no_sd")


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noising tables; arrays are float64, index 0 holds t=1."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative signal fraction, with the t=0 convention of exactly 1."""
        if not 0 <= t <= self.T:
            raise ValueError(f"t={t} outside [0, {self.T}]")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


def linear_schedule(
    T: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    sigma_kind: str = "sqrt_beta",
) -> NoiseSchedule:
    """Betas linearly interpolated inclusive of both endpoints.

    sigma_kind 'sqrt_beta' is the upper-variance choice sqrt(beta_t);
    'posterior' uses sqrt((1-abar_{t-1})/(1-abar_t) * beta_t).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if sigma_kind == "sqrt_beta":
        sigma = np.sqrt(beta)
    elif sigma_kind == "posterior":
        prev = np.concatenate([[1.0], alpha_bar[:-1]])
        sigma = np.sqrt((1.0 - prev) / (1.0 - alpha_bar) * beta)
    else:
        raise ValueError(f"unknown sigma_kind {sigma_kind!r}")
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma=sigma)


def add_noise(z0: Tensor, eps: Tensor, t, sched: NoiseSchedule) -> Tensor:
    """Forward noising: sqrt(abar_t) z0 + sqrt(1-abar_t) eps; t=0 returns z0.

    ``t`` is an int, or an int array (n,) applying a distinct step per batch
    element of a (n,c,h,w) input.
    """
    if z0.shape != eps.shape:
        raise ValueError(f"z0 {z0.shape} and eps {eps.shape} must match")
    t_arr = np.asarray(t)
    if t_arr.ndim == 0:
        abar = sched.alpha_bar_at(int(t_arr))
    else:
        if z0.ndim != 4 or t_arr.shape != (z0.shape[0],):
            raise ValueError(f"per-sample t needs a batch input, got t{t_arr.shape} z{z0.shape}")
        abar = np.array([sched.alpha_bar_at(int(ti)) for ti in t_arr])[:, None, None, None]
    dt = z0.dtype
    s_sig = np.sqrt(abar).astype(dt)
    s_noise = np.sqrt(1.0 - abar).astype(dt)
    return Tensor._wrap(s_sig * z0.data + s_noise * eps.data)


# ---------------------------------------------------------------------------
# controlled denoiser
# ---------------------------------------------------------------------------


@dataclass
class DenoiserConfig:
    latent_channels: int = 1
    base_channels: int = 32
    levels: int = 3
    blocks_per_level: int = 1
    attention_levels: tuple[int, ...] | None = None
    temb_dim: int | None = None

    def __post_init__(self):
        if self.attention_levels is None:
            self.attention_levels = (self.levels - 1,)
        else:
            self.attention_levels = tuple(self.attention_levels)
        if self.temb_dim is None:
            self.temb_dim = 4 * self.base_channels

    def base_spec(self) -> UNetSpec:
        return UNetSpec(
            in_channels=self.latent_channels,
            out_channels=self.latent_channels,
            base_channels=self.base_channels,
            levels=self.levels,
            blocks_per_level=self.blocks_per_level,
            attention_levels=self.attention_levels,
            temb_dim=self.temb_dim,
            head_kernel=3,
            head_zero_init=True,
        )

    def control_spec(self) -> UNetSpec:
        # first layer is freshly initialized: its input channels differ from the base
        return UNetSpec(
            in_channels=2 * self.latent_channels,
            out_channels=self.latent_channels,
            base_channels=self.base_channels,
            levels=self.levels,
            blocks_per_level=self.blocks_per_level,
            attention_levels=self.attention_levels,
            temb_dim=self.temb_dim,
        )


def init_denoiser(cfg: DenoiserConfig, rng, prefix: str = "den", dtype=np.float32) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    init_unet(params, prefix + ".base", cfg.base_spec(), rng, dtype)
    init_unet_encoder(params, prefix + ".control", cfg.control_spec(), rng, dtype)
    for l in range(cfg.levels):
        ch = cfg.base_spec().channels(l)
        # exact zeros: the conditioning path starts inert
        params[f"{prefix}.zc{l}.w"] = Tensor._wrap(np.zeros((ch, ch, 1, 1), dtype=dtype))
        params[f"{prefix}.zc{l}.b"] = Tensor._wrap(np.zeros(ch, dtype=dtype))
    return params


def denoise(
    params: dict[str, Tensor],
    z_t: Tensor,
    cond: Tensor,
    t,
    cfg: DenoiserConfig,
    tape: Tape | None = None,
    prefix: str = "den",
) -> Tensor:
    """Noise prediction given the conditioning map (2c channels)."""
    c = cfg.latent_channels
    if z_t.shape[-3] != c:
        raise ValueError(f"expected {c} latent channels, got {z_t.shape[-3]}")
    if cond.shape[-3] != 2 * c or cond.shape[-2:] != z_t.shape[-2:] or cond.ndim != z_t.ndim:
        raise ValueError(f"cond {cond.shape} incompatible with z_t {z_t.shape}")
    squeeze = z_t.ndim == 3
    if squeeze:
        z_t = ops.expand_batch(z_t, tape=tape)
        cond = ops.expand_batch(cond, tape=tape)
    n = z_t.shape[0]
    temb_c = unet_time_embedding(params, prefix + ".control", t, n, tape=tape)
    ctrl_skips = unet_encode(params, prefix + ".control", cond, temb_c, cfg.control_spec(), tape=tape)
    injections = [
        ops.conv2d(s, params[f"{prefix}.zc{l}.w"], params[f"{prefix}.zc{l}.b"], tape=tape)
        for l, s in enumerate(ctrl_skips)
    ]
    out = unet_forward(
        params, prefix + ".base", z_t, t, cfg.base_spec(), tape=tape, skip_injections=injections
    )
    return ops.take_sample0(out, tape=tape) if squeeze else out


def denoise_loss(eps: Tensor, eps_pred: Tensor, tape: Tape | None = None) -> Tensor:
    """Mean squared error between true and predicted noise."""
    return ops.mse(eps, eps_pred, tape=tape)


# ---------------------------------------------------------------------------
# model bundle and sampling
# ---------------------------------------------------------------------------


@dataclass
class DeblurModel:
    """Kernel predictor + controlled denoiser parameters plus their wiring."""

    params: dict[str, Tensor]
    kpn: KernelPredictorConfig
    den: DenoiserConfig
    ablation: str = "full"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")


def init_model(
    kpn_cfg: KernelPredictorConfig,
    den_cfg: DenoiserConfig,
    rng,
    ablation: str = "full",
    dtype=np.float32,
) -> DeblurModel:
    params = init_kernel_predictor(kpn_cfg, rng, prefix="kpn", dtype=dtype)
    params.update(init_denoiser(den_cfg, rng, prefix="den", dtype=dtype))
    return DeblurModel(params=params, kpn=kpn_cfg, den=den_cfg, ablation=ablation)


def guidance(
    model: DeblurModel, z_t: Tensor, z_lq: Tensor, t, tape: Tape | None = None
) -> tuple[Tensor, Tensor | None]:
    """Deblurred-latent guidance for one step: (z_s, kernel field or None).

    * full:    field from (z_t, z_lq, t), applied to z_lq.
    * no_sd:   field from (z_lq, z_lq, t) - the predictor never sees diffusion state.
    * no_eac:  the predictor head emits z_s directly; no field, no adaptive conv.
    """
    z_in = z_lq if model.ablation == "no_sd" else z_t
    head_out = predict_kernel_field(model.params, z_in, z_lq, t, model.kpn, tape=tape, prefix="kpn")
    if model.ablation == "no_eac":
        return head_out, None
    z_s = adaptive_conv(z_lq, head_out, model.kpn.k, tape=tape)
    return z_s, head_out


def sample_step(
    z_t: Tensor,
    z_lq: Tensor,
    t: int,
    sched: NoiseSchedule,
    model: DeblurModel,
    noise: Tensor,
) -> tuple[Tensor, Tensor, Tensor | None]:
    """One ancestral update; returns (z_{t-1}, guidance z_s, kernel field)."""
    if not 1 <= t <= sched.T:
        raise ValueError(f"t={t} outside [1, {sched.T}]")
    if noise.shape != z_t.shape:
        raise ValueError(f"noise {noise.shape} must match z_t {z_t.shape}")
    z_s, field = guidance(model, z_t, z_lq, t)
    cond = ops.concat_channels(z_s, z_lq)
    eps_pred = denoise(model.params, z_t, cond, t, model.den, prefix="den")
    dt = z_t.dtype
    a = sched.alpha[t - 1]
    abar = sched.alpha_bar[t - 1]
    c1 = dt.type(1.0 / np.sqrt(a))
    c2 = dt.type((1.0 - a) / np.sqrt(1.0 - abar))
    sig = dt.type(sched.sigma[t - 1])
    z_prev = Tensor._wrap(c1 * (z_t.data - c2 * eps_pred.data) + sig * noise.data)
    return z_prev, z_s, field


def sample(
    z_lq: Tensor,
    sched: NoiseSchedule,
    model: DeblurModel,
    rng_seed: int,
    keep_trace: bool = True,
) -> tuple[Tensor, list[tuple[int, Tensor]]]:
    """Ancestral loop from pure noise, guided by the blurry latent.

    Accepts one (c,h,w) latent or a (n,c,h,w) batch; batch element i draws
    from an independent stream seeded by (rng_seed, i), so batched and
    one-at-a-time sampling produce identical results. Returns the final
    latent and the per-step guidance trace [(t, z_s)] with t = T..1.
    """
    squeeze = z_lq.ndim == 3
    z4 = z_lq.data[None] if squeeze else z_lq.data
    n = z4.shape[0]
    shape = z4.shape[1:]
    dt = z_lq.dtype
    rngs = [np.random.default_rng((rng_seed, i)) for i in range(n)]
    z = np.stack([r.standard_normal(shape, dtype=dt) for r in rngs])
    z_lq4 = Tensor._wrap(z4)
    trace: list[tuple[int, Tensor]] = []
    for t in range(sched.T, 0, -1):
        if t > 1:
            noise = np.stack([r.standard_normal(shape, dtype=dt) for r in rngs])
        else:
            noise = np.zeros_like(z)
        z_next, z_s, _ = sample_step(
            Tensor._wrap(z), z_lq4, t, sched, model, Tensor._wrap(noise)
        )
        z = z_next.data
        if keep_trace:
            trace.append((t, Tensor._wrap(z_s.data[0] if squeeze else z_s.data)))
    out = Tensor._wrap(z[0] if squeeze else z)
    return out, trace
