"""blurkit: motion-blur synthesis and kernel-prediction guided diffusion deblurring.

A latent kernel predictor estimates one k x k filter per latent position and
channel; applying that field to the blurry latent yields the clean-structure
guidance that conditions a DDPM denoiser at every sampling step. The package
also ships the blur-synthesis data pipeline, PSNR/SSIM evaluation, a gradient
verification harness, and a CLI binding the full workflow.
"""

from ._kernels import BACKEND as kernel_backend
from .adaptive_conv import adaptive_conv, adaptive_conv_grads, delta_field
from .autodiff import Tape, Tensor, backward, fd_gradient, max_relative_error, tensor, zeros
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .codec import Codec, decode, encode
from .diffusion import (
    DeblurModel,
    DenoiserConfig,
    NoiseSchedule,
    add_noise,
    denoise,
    denoise_loss,
    init_model,
    linear_schedule,
    sample,
    sample_step,
)
from .kernel_net import KernelPredictorConfig, init_kernel_predictor, predict_kernel_field
from .metrics import psnr, ssim
from .optim import AdamState, adam_step
from .training import (
    LossReport,
    PairDataset,
    TrainConfig,
    compute_objective,
    kernel_losses,
    train_loop,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "CheckpointError",
    "Codec",
    "DeblurModel",
    "DenoiserConfig",
    "KernelPredictorConfig",
    "LossReport",
    "NoiseSchedule",
    "PairDataset",
    "Tape",
    "Tensor",
    "TrainConfig",
    "adam_step",
    "adaptive_conv",
    "adaptive_conv_grads",
    "add_noise",
    "backward",
    "compute_objective",
    "decode",
    "delta_field",
    "denoise",
    "denoise_loss",
    "encode",
    "fd_gradient",
    "init_kernel_predictor",
    "init_model",
    "kernel_backend",
    "kernel_losses",
    "linear_schedule",
    "load_checkpoint",
    "max_relative_error",
    "predict_kernel_field",
    "psnr",
    "sample",
    "sample_step",
    "save_checkpoint",
    "ssim",
    "tensor",
    "train_loop",
    "train_step",
    "zeros",
]
