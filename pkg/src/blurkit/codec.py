"""Frozen image <-> latent codec.

Two kinds, both linear, parameter-free and deterministic:

* ``identity``      - latent space is pixel space.
* ``fixed_downsample`` - 2x average-pool encode, nearest-neighbor decode.

The decode path participates in gradient tapes (the pixel-space loss
backpropagates through it); there is nothing to train in the codec itself.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ops
from .autodiff import Tape, Tensor

KINDS = ("identity", "fixed_downsample")


@dataclass(frozen=True)
class Codec:
    kind: str = "identity"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"codec kind must be one of {KINDS}, got {self.kind!r}")

    @property
    def scale(self) -> int:
        return 1 if self.kind == "identity" else 2


def encode(x: Tensor, codec: Codec, tape: Tape | None = None) -> Tensor:
    if codec.kind == "identity":
        return x
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ValueError(f"image extents {x.shape[-2:]} not divisible by {codec.scale}")
    return ops.avgpool2x(x, tape=tape)


def decode(z: Tensor, codec: Codec, tape: Tape | None = None) -> Tensor:
    if codec.kind == "identity":
        return z
    return ops.upsample_nearest2x(z, tape=tape)
