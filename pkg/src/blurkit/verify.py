"""Finite-difference verification of every differentiable op, in float64.

Each registered check builds a small random instance, computes analytic
gradients through a tape, and compares them against central finite
differences of the same scalar loss. The loss contracts the op output against
fixed random weights so no gradient component can hide behind cancellation.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .adaptive_conv import adaptive_conv
from .autodiff import Tape, Tensor, backward, fd_gradient, max_relative_error
from .codec import Codec
from .diffusion import DenoiserConfig, denoise, init_model, linear_schedule
from .kernel_net import KernelPredictorConfig, predict_kernel_field
from .training import compute_objective
from .unet import init_resblock, randomized, resblock

DEFAULT_EPS = 1e-5

# spec'd tolerances: whole objective 1e-4, composite networks 1e-5, single ops 1e-6
THRESHOLDS = {
    "kernel_net": 1e-5,
    "denoiser": 1e-5,
    "objective": 1e-4,
}
DEFAULT_THRESHOLD = 1e-6


def _t(rng, *shape) -> Tensor:
    return Tensor._wrap(rng.standard_normal(shape))


def _check(make_loss, inputs: dict[str, Tensor], eps: float) -> float:
    """Max relative error between tape gradients and finite differences."""
    tape = Tape()
    tape.register_all(inputs)
    loss = make_loss(tape)
    grads = backward(tape, loss)
    worst = 0.0
    for name, x in inputs.items():
        fd = fd_gradient(lambda _x: make_loss(None), x, eps)
        worst = max(worst, max_relative_error(grads[name], fd))
    return worst


def _contract(out: Tensor, r: Tensor, tape) -> Tensor:
    return ops.sum_all(ops.mul(out, r, tape=tape), tape=tape)


def _check_conv2d(rng, eps):
    x, w, b = _t(rng, 2, 5, 6), _t(rng, 3, 2, 3, 3), _t(rng, 3)
    r = _t(rng, 3, 5, 6)
    err = _check(
        lambda tp: _contract(ops.conv2d(x, w, b, stride=1, pad=1, tape=tp), r, tp),
        {"x": x, "w": w, "b": b},
        eps,
    )
    xs, ws = _t(rng, 2, 6, 6), _t(rng, 4, 2, 2, 2)
    rs = _t(rng, 4, 3, 3)
    err2 = _check(
        lambda tp: _contract(ops.conv2d(xs, ws, stride=2, tape=tp), rs, tp),
        {"x": xs, "w": ws},
        eps,
    )
    return max(err, err2)


def _check_group_norm(rng, eps):
    x, g, b = _t(rng, 4, 3, 3), _t(rng, 4), _t(rng, 4)
    r = _t(rng, 4, 3, 3)
    return _check(
        lambda tp: _contract(ops.group_norm(x, 2, g, b, tape=tp), r, tp),
        {"x": x, "gamma": g, "beta": b},
        eps,
    )


def _check_attention2d(rng, eps):
    c = 3
    x = _t(rng, c, 2, 2)
    mats = {n: _t(rng, c, c) for n in ("wq", "wk", "wv", "wo")}
    r = _t(rng, c, 2, 2)
    return _check(
        lambda tp: _contract(
            ops.attention2d(x, mats["wq"], mats["wk"], mats["wv"], mats["wo"], tape=tp), r, tp
        ),
        {"x": x, **mats},
        eps,
    )


def _check_linear(rng, eps):
    x, w, b = _t(rng, 3, 4), _t(rng, 4, 5), _t(rng, 5)
    r = _t(rng, 3, 5)
    return _check(
        lambda tp: _contract(ops.linear(x, w, b, tape=tp), r, tp), {"x": x, "w": w, "b": b}, eps
    )


def _check_elementwise(rng, eps):
    a, b = _t(rng, 7), _t(rng, 7)
    r = _t(rng, 7)
    worst = 0.0
    for kind in ("add", "sub", "mul"):
        worst = max(
            worst,
            _check(
                lambda tp, k=kind: _contract(ops.elementwise(k, a, b, tape=tp), r, tp),
                {"a": a, "b": b},
                eps,
            ),
        )
    for kind in ("silu", "square"):
        worst = max(
            worst,
            _check(
                lambda tp, k=kind: _contract(ops.elementwise(k, a, tape=tp), r, tp), {"a": a}, eps
            ),
        )
    worst = max(
        worst,
        _check(lambda tp: _contract(ops.scale(a, 1.7, tape=tp), r, tp), {"a": a}, eps),
    )
    return worst


def _check_structural(rng, eps):
    x = _t(rng, 2, 3, 4, 4)
    bias = _t(rng, 2, 3)
    r = _t(rng, 2, 3, 4, 4)
    worst = _check(
        lambda tp: _contract(ops.add_channel_bias(x, bias, tape=tp), r, tp),
        {"x": x, "bias": bias},
        eps,
    )
    a, b = _t(rng, 2, 4, 4), _t(rng, 3, 4, 4)
    rc = _t(rng, 5, 4, 4)
    worst = max(
        worst,
        _check(
            lambda tp: _contract(ops.concat_channels(a, b, tape=tp), rc, tp), {"a": a, "b": b}, eps
        ),
    )
    u = _t(rng, 2, 3, 3)
    ru = _t(rng, 2, 6, 6)
    worst = max(
        worst,
        _check(lambda tp: _contract(ops.upsample_nearest2x(u, tape=tp), ru, tp), {"u": u}, eps),
    )
    p = _t(rng, 2, 4, 4)
    rp = _t(rng, 2, 2, 2)
    worst = max(
        worst, _check(lambda tp: _contract(ops.avgpool2x(p, tape=tp), rp, tp), {"p": p}, eps)
    )
    m1, m2 = _t(rng, 3, 5), _t(rng, 3, 5)
    worst = max(
        worst, _check(lambda tp: ops.mse(m1, m2, tape=tp), {"a": m1, "b": m2}, eps)
    )
    worst = max(
        worst, _check(lambda tp: ops.mean_all(ops.square(m1, tape=tp), tape=tp), {"a": m1}, eps)
    )
    return worst


def _check_adaptive_conv(rng, eps):
    c, h, w, k = 2, 5, 5, 3
    z = _t(rng, c, h, w)
    f = _t(rng, c * k * k, h, w)
    r = _t(rng, c, h, w)
    return _check(
        lambda tp: _contract(adaptive_conv(z, f, k, tape=tp), r, tp), {"z": z, "field": f}, eps
    )


def _check_resblock(rng, eps):
    params: dict[str, Tensor] = {}
    init_resblock(params, "rb", 3, 4, 6, rng, np.float64)
    params = randomized(params, rng, scale=0.4)
    x = _t(rng, 2, 3, 4, 4)
    temb = _t(rng, 2, 6)
    r = _t(rng, 2, 4, 4, 4)
    inputs = {"x": x, "temb": temb, **params}
    return _check(
        lambda tp: _contract(resblock(params, "rb", x, temb, tape=tp), r, tp), inputs, eps
    )


def micro_kpn_config(k: int = 3, attention: bool = True) -> KernelPredictorConfig:
    return KernelPredictorConfig(
        latent_channels=1,
        base_channels=4,
        levels=2,
        blocks_per_level=1,
        k=k,
        attention_levels=(1,) if attention else (),
        temb_dim=8,
    )


def micro_den_config(attention: bool = False) -> DenoiserConfig:
    return DenoiserConfig(
        latent_channels=1,
        base_channels=4,
        levels=2,
        blocks_per_level=1,
        attention_levels=(1,) if attention else (),
        temb_dim=8,
    )


def _check_kernel_net(rng, eps):
    cfg = micro_kpn_config()
    model = init_model(cfg, micro_den_config(), rng, dtype=np.float64)
    params = {k: v for k, v in randomized(model.params, rng, scale=0.3).items() if k.startswith("kpn.")}
    z_t, z_lq = _t(rng, 1, 8, 8), _t(rng, 1, 8, 8)
    r = _t(rng, cfg.field_channels, 8, 8)

    def make_loss(tp):
        out = predict_kernel_field(params, z_t, z_lq, 3, cfg, tape=tp, prefix="kpn")
        return _contract(out, r, tp)

    return _check(make_loss, {**params, "z_t": z_t, "z_lq": z_lq}, eps)


def _check_denoiser(rng, eps):
    den = micro_den_config()
    model = init_model(micro_kpn_config(), den, rng, dtype=np.float64)
    params = {k: v for k, v in randomized(model.params, rng, scale=0.3).items() if k.startswith("den.")}
    z_t, cond = _t(rng, 1, 8, 8), _t(rng, 2, 8, 8)
    r = _t(rng, 1, 8, 8)

    def make_loss(tp):
        out = denoise(params, z_t, cond, 2, den, tape=tp, prefix="den")
        return _contract(out, r, tp)

    return _check(make_loss, {**params, "z_t": z_t, "cond": cond}, eps)


def _check_objective(rng, eps):
    """Full joint objective on one 8x8 sample, every parameter finite-differenced."""
    model = init_model(
        micro_kpn_config(attention=False), micro_den_config(), rng, dtype=np.float64
    )
    model.params = randomized(model.params, rng, scale=0.3)
    sched = linear_schedule(4)
    codec = Codec("identity")
    z0 = Tensor._wrap(rng.standard_normal((1, 1, 8, 8)))
    z_lq = Tensor._wrap(rng.standard_normal((1, 1, 8, 8)))
    eps_draw = Tensor._wrap(rng.standard_normal((1, 1, 8, 8)))
    t = np.array([3])

    def make_loss(tp):
        total, _, _, _ = compute_objective(model, z0, z_lq, eps_draw, t, codec, sched, tape=tp)
        return total

    return _check(make_loss, dict(model.params), eps)


OP_CHECKS = {
    "elementwise": _check_elementwise,
    "linear": _check_linear,
    "structural": _check_structural,
    "conv2d": _check_conv2d,
    "group_norm": _check_group_norm,
    "attention2d": _check_attention2d,
    "adaptive_conv": _check_adaptive_conv,
    "resblock": _check_resblock,
    "kernel_net": _check_kernel_net,
    "denoiser": _check_denoiser,
    "objective": _check_objective,
}


def threshold_for(name: str) -> float:
    return THRESHOLDS.get(name, DEFAULT_THRESHOLD)


# whole-network checks finite-difference every parameter; cap their repeats
HEAVY = {"kernel_net", "denoiser", "objective"}


def run_gradcheck(
    op_names: list[str] | None = None, seeds: int = 3, eps: float = DEFAULT_EPS
) -> dict[str, float]:
    """Max relative error per op over ``seeds`` random instances (heavy checks cap at 2)."""
    names = list(OP_CHECKS) if op_names is None else list(op_names)
    results: dict[str, float] = {}
    for name in names:
        if name not in OP_CHECKS:
            raise KeyError(f"unknown op {name!r}; known: {sorted(OP_CHECKS)}")
        worst = 0.0
        for s in range(min(seeds, 2) if name in HEAVY else seeds):
            rng = np.random.default_rng((7001, s))
            worst = max(worst, OP_CHECKS[name](rng, eps))
        results[name] = worst
    return results
