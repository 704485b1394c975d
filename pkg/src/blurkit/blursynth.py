"""Motion-blur data pipeline: trajectories, point-spread functions, paired datasets.

A blur kernel is rasterized from an inertial random walk confined to the
kernel support square. Uniform blur convolves the whole image with one
kernel; regional blur composites several kernels through disjoint geometric
masks. ``synth_dataset`` writes (blurry, sharp) pairs plus a JSON manifest
from which the dataset regenerates byte-identically.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imageio import read_image, write_image

PSF_SUM_TOL = 1e-6


@dataclass(frozen=True)
class Trajectory:
    """Continuous 2-D points, offsets from the kernel center, inside the support square."""

    points: np.ndarray  # (length, 2) as (x, y)

    def __len__(self) -> int:
        return len(self.points)


def gen_trajectory(
    rng: np.random.Generator,
    max_len: int,
    support: int,
    turn_sigma: float = 0.5,
    step_scale: float = 1.0,
    step_jitter: float = 0.3,
) -> Trajectory:
    """Inertial random walk: Gaussian heading turns, jittered step length.

    Starts at the exact center; length is uniform in [1, max_len]; positions
    reflect off the support square so every point stays inside.
    """
    if support % 2 == 0 or support < 1:
        raise ValueError(f"support must be odd and positive, got {support}")
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    length = int(rng.integers(1, max_len + 1))
    bound = (support - 1) / 2.0
    pts = np.zeros((length, 2), dtype=np.float64)
    heading = rng.uniform(0.0, 2.0 * np.pi)
    x = y = 0.0
    for i in range(1, length):
        heading += turn_sigma * rng.standard_normal()
        step = step_scale * max(0.0, 1.0 + step_jitter * rng.standard_normal())
        x += step * np.cos(heading)
        y += step * np.sin(heading)
        x = _reflect(x, bound)
        y = _reflect(y, bound)
        pts[i] = (x, y)
    return Trajectory(points=pts)


def _reflect(v: float, bound: float) -> float:
    while v > bound or v < -bound:
        if v > bound:
            v = 2.0 * bound - v
        else:
            v = -2.0 * bound - v
    return v


def rasterize_psf(traj: Trajectory, support: int) -> np.ndarray:
    """Deposit unit mass per point, bilinearly split over 4 cells; normalize to sum 1."""
    if support % 2 == 0 or support < 1:
        raise ValueError(f"support must be odd and positive, got {support}")
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    psf = np.zeros((support, support), dtype=np.float64)
    center = (support - 1) / 2.0
    for x, y in traj.points:
        cx = x + center
        cy = y + center
        ix, iy = int(np.floor(cx)), int(np.floor(cy))
        fx, fy = cx - ix, cy - iy
        for dy, wy in ((0, 1.0 - fy), (1, fy)):
            for dx, wx in ((0, 1.0 - fx), (1, fx)):
                wgt = wx * wy
                if wgt > 0.0:
                    psf[iy + dy, ix + dx] += wgt
    return psf / psf.sum()


def validate_psf(psf: np.ndarray) -> None:
    if psf.ndim != 2 or psf.shape[0] != psf.shape[1] or psf.shape[0] % 2 == 0:
        raise ValueError(f"psf must be square with odd extent, got {psf.shape}")
    if np.any(psf < 0):
        raise ValueError("psf has negative values")
    if abs(float(psf.sum()) - 1.0) > PSF_SUM_TOL:
        raise ValueError(f"psf sum {psf.sum()} deviates from 1 beyond {PSF_SUM_TOL}")


def apply_uniform_blur(img: np.ndarray, psf: np.ndarray) -> np.ndarray:
    """True per-channel convolution (kernel flipped) with replicate padding."""
    validate_psf(psf)
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"image must be (c,H,W), got {img.shape}")
    if psf.shape[0] > img.shape[1] or psf.shape[1] > img.shape[2]:
        raise ValueError(f"psf {psf.shape} larger than image {img.shape[1:]}")
    return np.stack([ndimage.convolve(ch, psf, mode="nearest") for ch in img])


def apply_regional_blur(
    img: np.ndarray, masks: list[np.ndarray], psfs: list[np.ndarray]
) -> np.ndarray:
    """Composite per-region uniform blurs: sum_i mask_i * blur(img, psf_i)."""
    if len(masks) != len(psfs):
        raise ValueError(f"{len(masks)} masks vs {len(psfs)} psfs")
    if not masks:
        raise ValueError("need at least one region")
    img = np.asarray(img, dtype=np.float64)
    cover = np.zeros(img.shape[1:], dtype=np.float64)
    for m in masks:
        if m.shape != img.shape[1:]:
            raise ValueError(f"mask shape {m.shape} does not match image {img.shape[1:]}")
        cover += m
    if not np.array_equal(cover, np.ones_like(cover)):
        raise ValueError("masks must be disjoint and cover the image")
    out = np.zeros_like(img)
    for m, psf in zip(masks, psfs):
        out += m[None] * apply_uniform_blur(img, psf)
    return out


def random_region_masks(rng: np.random.Generator, h: int, w: int) -> list[np.ndarray]:
    """Two-region partition: random half-plane, axis-aligned rectangle, or ellipse."""
    yy, xx = np.mgrid[0:h, 0:w]
    kind = ("halfplane", "rect", "ellipse")[int(rng.integers(3))]
    if kind == "halfplane":
        theta = rng.uniform(0.0, np.pi)
        off = rng.uniform(0.25, 0.75)
        proj = (xx - w * off) * np.cos(theta) + (yy - h * off) * np.sin(theta)
        inside = proj < 0
    elif kind == "rect":
        y0, x0 = rng.integers(0, h // 2), rng.integers(0, w // 2)
        y1, x1 = rng.integers(h // 2 + 1, h + 1), rng.integers(w // 2 + 1, w + 1)
        inside = (yy >= y0) & (yy < y1) & (xx >= x0) & (xx < x1)
    else:
        cy, cx = rng.uniform(0.3, 0.7) * h, rng.uniform(0.3, 0.7) * w
        ry, rx = rng.uniform(0.2, 0.45) * h, rng.uniform(0.2, 0.45) * w
        inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1.0
    m = inside.astype(np.float64)
    return [m, 1.0 - m]


# ---------------------------------------------------------------------------
# dataset synthesis
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class SynthSpec:
    support: int = 9
    max_len: int = 13
    kind: str = "uniform"  # uniform | regional
    seed: int = 0
    bits: int = 8
    turn_sigma: float = 0.5
    step_scale: float = 1.0
    step_jitter: float = 0.3

    def __post_init__(self):
        if self.kind not in ("uniform", "regional"):
            raise ValueError(f"kind must be 'uniform' or 'regional', got {self.kind!r}")


def synth_pair(
    sharp: np.ndarray, rng: np.random.Generator, spec: SynthSpec
) -> np.ndarray:
    """Blur one sharp image according to the spec, using the given rng stream."""
    traj_kwargs = dict(
        turn_sigma=spec.turn_sigma, step_scale=spec.step_scale, step_jitter=spec.step_jitter
    )
    if spec.kind == "uniform":
        traj = gen_trajectory(rng, spec.max_len, spec.support, **traj_kwargs)
        return apply_uniform_blur(sharp, rasterize_psf(traj, spec.support))
    masks = random_region_masks(rng, sharp.shape[1], sharp.shape[2])
    psfs = [
        rasterize_psf(gen_trajectory(rng, spec.max_len, spec.support, **traj_kwargs), spec.support)
        for _ in masks
    ]
    return apply_regional_blur(sharp, masks, psfs)


def synth_dataset(
    sharp_dir: str | os.PathLike,
    out_dir: str | os.PathLike,
    count: int,
    spec: SynthSpec,
) -> dict:
    """Write ``count`` (blurry, sharp) pairs plus the manifest; returns the manifest.

    Pair i draws from the stream seeded by (spec.seed, i), so generation is
    order-independent and regeneration from the manifest is byte-exact.
    """
    sharp_dir = Path(sharp_dir)
    out_dir = Path(out_dir)
    files = sorted(p for p in sharp_dir.iterdir() if p.suffix in (".pgm", ".ppm"))
    if count > 0 and not files:
        raise FileNotFoundError(f"no .pgm/.ppm images in {sharp_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    if count > 0:
        (out_dir / "sharp").mkdir(exist_ok=True)
        (out_dir / "blurry").mkdir(exist_ok=True)
    pairs = []
    for i in range(count):
        rng = np.random.default_rng((spec.seed, i))
        src = files[i % len(files)]
        sharp = read_image(src)
        blurry = synth_pair(sharp, rng, spec)
        ext = ".pgm" if sharp.shape[0] == 1 else ".ppm"
        sharp_rel = f"sharp/{i:05d}{ext}"
        blurry_rel = f"blurry/{i:05d}{ext}"
        write_image(out_dir / sharp_rel, sharp, bits=spec.bits)
        write_image(out_dir / blurry_rel, blurry, bits=spec.bits)
        pairs.append(
            {
                "id": i,
                "sharp_path": sharp_rel,
                "blurry_path": blurry_rel,
                "seed": [spec.seed, i],
                "support": spec.support,
                "kind": spec.kind,
                "source": src.name,
            }
        )
    manifest = {"version": 1, "count": count, "spec": asdict(spec), "pairs": pairs}
    with open(out_dir / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(dataset_dir: str | os.PathLike) -> dict:
    with open(Path(dataset_dir) / MANIFEST_NAME) as fh:
        return json.load(fh)


def spec_from_manifest(manifest: dict) -> SynthSpec:
    return SynthSpec(**manifest["spec"])


def load_pairs(dataset_dir: str | os.PathLike) -> list[tuple[np.ndarray, np.ndarray]]:
    """(sharp, blurry) float32 arrays for every manifest pair, in id order."""
    root = Path(dataset_dir)
    manifest = load_manifest(root)
    out = []
    for rec in sorted(manifest["pairs"], key=lambda r: r["id"]):
        out.append((read_image(root / rec["sharp_path"]), read_image(root / rec["blurry_path"])))
    return out


# ---------------------------------------------------------------------------
# synthetic sharp scenes (toy ground truth)
# ---------------------------------------------------------------------------


def render_scene(rng: np.random.Generator, size: int = 32, supersample: int = 4) -> np.ndarray:
    """Random grayscale scene: gradient background plus anti-aliased shapes."""
    hs = size * supersample
    yy, xx = np.mgrid[0:hs, 0:hs] / hs
    img = rng.uniform(0.1, 0.9) + rng.uniform(-0.3, 0.3) * xx + rng.uniform(-0.3, 0.3) * yy
    for _ in range(int(rng.integers(3, 7))):
        val = rng.uniform(0.0, 1.0)
        kind = int(rng.integers(3))
        if kind == 0:  # rectangle
            y0, x0 = rng.uniform(0, 0.8, 2)
            hgt, wid = rng.uniform(0.1, 0.5, 2)
            m = (yy >= y0) & (yy < y0 + hgt) & (xx >= x0) & (xx < x0 + wid)
        elif kind == 1:  # ellipse
            cy, cx = rng.uniform(0.2, 0.8, 2)
            ry, rx = rng.uniform(0.05, 0.3, 2)
            m = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1.0
        else:  # bar of random orientation
            theta = rng.uniform(0, np.pi)
            off = rng.uniform(0.2, 0.8)
            width = rng.uniform(0.02, 0.1)
            proj = (xx - off) * np.cos(theta) + (yy - off) * np.sin(theta)
            m = np.abs(proj) < width
        img = np.where(m, val, img)
    img = img.reshape(size, supersample, size, supersample).mean(axis=(1, 3))
    return np.clip(img, 0.0, 1.0)[None].astype(np.float64)


def make_sharp_dir(
    out_dir: str | os.PathLike, count: int, size: int = 32, seed: int = 0, bits: int = 8
) -> list[str]:
    """Render ``count`` synthetic sharp scenes into a directory of PGM files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i in range(count):
        rng = np.random.default_rng((seed, i))
        name = f"scene_{i:05d}.pgm"
        write_image(out / name, render_scene(rng, size=size), bits=bits)
        names.append(name)
    return names
