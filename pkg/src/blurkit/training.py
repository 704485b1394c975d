"""Joint training of the kernel predictor and the controlled denoiser.

Per step, for each sample: encode both images, draw a step t uniform in
[1, T] and Gaussian noise, noise the clean latent, predict the kernel field,
apply it to the blurry latent, and minimize

    total = denoise_mse + latent_mse + pixel_mse

(weights configurable, defaults 1). Everything is derived from
(seed, config, dataset): step i draws from the stream (seed, 1, i) and epoch
shuffles from (seed, 2, epoch), so interrupted runs resume bit-exactly from a
checkpoint's step counter alone.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ops
from .adaptive_conv import adaptive_conv
from .autodiff import Tape, Tensor, backward
from .checkpoint import Checkpoint, check_same_names, load_checkpoint, save_checkpoint
from .codec import Codec, decode, encode
from .diffusion import (
    ABLATIONS,
    DeblurModel,
    DenoiserConfig,
    NoiseSchedule,
    add_noise,
    denoise,
    denoise_loss,
    guidance,
    init_model,
    linear_schedule,
)
from .kernel_net import KernelPredictorConfig
from .optim import AdamState, adam_step

LOSS_CSV_HEADER = "step,denoise,latent,pixel,total"


@dataclass
class TrainConfig:
    lr: float = 5e-5
    batch: int = 8
    steps: int = 2000
    T: int = 50
    k: int = 5
    codec_kind: str = "identity"
    ablation: str = "full"
    seed: int = 0
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sigma_kind: str = "sqrt_beta"
    latent_channels: int = 1
    base_channels: int = 32
    levels: int = 3
    blocks_per_level: int = 1
    attention_levels: tuple[int, ...] | None = None
    temb_dim: int | None = None
    head_init: str = "zeros"
    denoise_weight: float = 1.0
    latent_weight: float = 1.0
    pixel_weight: float = 1.0
    checkpoint_every: int = 1000
    dtype: str = "float32"

    def __post_init__(self):
        if self.ablation == "no_sd_for_lkpn":
            self.ablation = "no_sd"
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.batch < 1 or self.T < 1 or self.steps < 0:
            raise ValueError("batch and T must be >= 1, steps >= 0")
        if self.attention_levels is not None:
            self.attention_levels = tuple(self.attention_levels)
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def codec(self) -> Codec:
        return Codec(kind=self.codec_kind)

    def schedule(self) -> NoiseSchedule:
        return linear_schedule(self.T, self.beta_start, self.beta_end, self.sigma_kind)

    def kpn_config(self) -> KernelPredictorConfig:
        return KernelPredictorConfig(
            latent_channels=self.latent_channels,
            base_channels=self.base_channels,
            levels=self.levels,
            blocks_per_level=self.blocks_per_level,
            k=self.k,
            attention_levels=self.attention_levels,
            temb_dim=self.temb_dim,
            head_init=self.head_init,
            predict_latent=self.ablation == "no_eac",
        )

    def den_config(self) -> DenoiserConfig:
        return DenoiserConfig(
            latent_channels=self.latent_channels,
            base_channels=self.base_channels,
            levels=self.levels,
            blocks_per_level=self.blocks_per_level,
            attention_levels=self.attention_levels,
            temb_dim=self.temb_dim,
        )

    def build_model(self) -> DeblurModel:
        rng = np.random.default_rng((self.seed, 0))
        return init_model(
            self.kpn_config(), self.den_config(), rng, ablation=self.ablation, dtype=self.np_dtype
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["attention_levels"] is not None:
            d["attention_levels"] = list(d["attention_levels"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config field(s): {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class LossReport:
    step: int
    denoise: float
    latent: float
    pixel: float
    total: float

    def csv_row(self) -> str:
        return f"{self.step},{self.denoise!r},{self.latent!r},{self.pixel!r},{self.total!r}"


def kernel_losses(
    z0: Tensor, z_lq: Tensor, field: Tensor, codec: Codec, k: int, tape: Tape | None = None
) -> tuple[Tensor, Tensor]:
    """(latent, pixel) reconstruction losses of the field applied to the blurry latent."""
    z_s = adaptive_conv(z_lq, field, k, tape=tape)
    return guidance_losses(z0, z_s, codec, tape=tape)


def guidance_losses(
    z0: Tensor, z_s: Tensor, codec: Codec, tape: Tape | None = None
) -> tuple[Tensor, Tensor]:
    l_latent = ops.mse(z0, z_s, tape=tape)
    l_pixel = ops.mse(decode(z0, codec), decode(z_s, codec, tape=tape), tape=tape)
    return l_latent, l_pixel


def compute_objective(
    model: DeblurModel,
    z0: Tensor,
    z_lq: Tensor,
    eps: Tensor,
    t: np.ndarray,
    codec: Codec,
    sched: NoiseSchedule,
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
    tape: Tape | None = None,
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Joint objective for fixed draws (eps, t); returns (total, denoise, latent, pixel)."""
    z_t = add_noise(z0, eps, t, sched)
    z_s, _field = guidance(model, z_t, z_lq, t, tape=tape)
    l_latent, l_pixel = guidance_losses(z0, z_s, codec, tape=tape)
    cond = ops.concat_channels(z_s, z_lq, tape=tape)
    eps_pred = denoise(model.params, z_t, cond, t, model.den, tape=tape, prefix="den")
    l_denoise = denoise_loss(eps, eps_pred, tape=tape)
    wd, wl, wp = weights
    total = ops.scale(l_denoise, wd, tape=tape)
    total = ops.add(total, ops.scale(l_latent, wl, tape=tape), tape=tape)
    total = ops.add(total, ops.scale(l_pixel, wp, tape=tape), tape=tape)
    return total, l_denoise, l_latent, l_pixel


def train_step(
    sharp: Tensor,
    blurry: Tensor,
    model: DeblurModel,
    opt_state: AdamState,
    cfg: TrainConfig,
    sched: NoiseSchedule,
    step_index: int,
) -> LossReport:
    """One joint optimization step on a (n,c,H,W) batch; mutates model and state."""
    if sharp.ndim != 4 or sharp.shape != blurry.shape:
        raise ValueError(f"need matching (n,c,H,W) batches, got {sharp.shape} vs {blurry.shape}")
    n = sharp.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    rng = np.random.default_rng((cfg.seed, 1, step_index))
    codec = cfg.codec()
    tape = Tape()
    tape.register_all(model.params)

    z0 = encode(sharp, codec)
    z_lq = encode(blurry, codec)
    t = rng.integers(1, cfg.T + 1, size=n)
    eps = Tensor._wrap(rng.standard_normal(z0.shape, dtype=cfg.np_dtype))
    weights = (cfg.denoise_weight, cfg.latent_weight, cfg.pixel_weight)
    total, l_denoise, l_latent, l_pixel = compute_objective(
        model, z0, z_lq, eps, t, codec, sched, weights, tape=tape
    )

    grads = backward(tape, total)
    adam_step(model.params, grads, opt_state, cfg.lr)

    ld, ll, lp = l_denoise.item(), l_latent.item(), l_pixel.item()
    return LossReport(
        step=step_index,
        denoise=ld,
        latent=ll,
        pixel=lp,
        total=cfg.denoise_weight * ld + cfg.latent_weight * ll + cfg.pixel_weight * lp,
    )


class PairDataset:
    """In-memory (sharp, blurry) pairs as float arrays in [0, 1]."""

    def __init__(self, pairs: list[tuple[np.ndarray, np.ndarray]], dtype=np.float32):
        if not pairs:
            raise ValueError("dataset is empty")
        self.sharp = np.ascontiguousarray(np.stack([p[0] for p in pairs]), dtype=dtype)
        self.blurry = np.ascontiguousarray(np.stack([p[1] for p in pairs]), dtype=dtype)

    def __len__(self) -> int:
        return len(self.sharp)

    def batch(self, idx: np.ndarray) -> tuple[Tensor, Tensor]:
        return Tensor._wrap(self.sharp[idx]), Tensor._wrap(self.blurry[idx])


def _batch_indices(cfg: TrainConfig, n_pairs: int, step: int) -> np.ndarray:
    batches_per_epoch = n_pairs // cfg.batch
    if batches_per_epoch < 1:
        raise ValueError(f"dataset of {n_pairs} pairs is smaller than batch {cfg.batch}")
    epoch, pos = divmod(step, batches_per_epoch)
    perm = np.random.default_rng((cfg.seed, 2, epoch)).permutation(n_pairs)
    return perm[pos * cfg.batch : (pos + 1) * cfg.batch]


def train_loop(
    dataset: PairDataset,
    cfg: TrainConfig,
    out_dir: str | None = None,
    resume_from: str | None = None,
    log_every: int = 0,
) -> tuple[DeblurModel, AdamState, list[LossReport]]:
    """Run cfg.steps optimization steps; optionally checkpoint and emit a loss CSV."""
    model = cfg.build_model()
    opt_state = AdamState.init(model.params)
    start_step = 0
    if resume_from is not None:
        ck = load_checkpoint(resume_from)
        check_same_names(ck.params, model.params)
        model.params.update(ck.params)
        if ck.opt is not None:
            opt_state = ck.opt
        start_step = ck.step
    sched = cfg.schedule()
    reports: list[LossReport] = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for step in range(start_step, cfg.steps):
        idx = _batch_indices(cfg, len(dataset), step)
        sharp, blurry = dataset.batch(idx)
        report = train_step(sharp, blurry, model, opt_state, cfg, sched, step)
        reports.append(report)
        if log_every and (step % log_every == 0 or step == cfg.steps - 1):
            print(f"step {report.step}: total={report.total:.5f} denoise={report.denoise:.5f}")
        if out is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(
                out / f"ckpt_{step + 1:06d}.bin", model.params, opt_state, step + 1, cfg.to_dict()
            )
    if out is not None:
        save_checkpoint(out / "ckpt_final.bin", model.params, opt_state, cfg.steps, cfg.to_dict())
        with open(out / "loss.csv", "a" if resume_from else "w") as fh:
            if not resume_from:
                fh.write(LOSS_CSV_HEADER + "\n")
            for r in reports:
                fh.write(r.csv_row() + "\n")
    return model, opt_state, reports


def model_from_checkpoint(ck: Checkpoint) -> tuple[DeblurModel, TrainConfig]:
    """Rebuild a model (architecture from the config snapshot, weights from the file)."""
    cfg = TrainConfig.from_dict(ck.config)
    model = cfg.build_model()
    check_same_names(ck.params, model.params)
    model.params.update(ck.params)
    return model, cfg
