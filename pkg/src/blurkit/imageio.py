"""Binary PGM (P5) and PPM (P6) image files.

Images round-trip as float arrays in [0, 1] with shape (c, H, W); c is 1 for
PGM and 3 for PPM. 16-bit samples are big-endian per the netpbm formats.
"""

from __future__ import annotations

import os

import numpy as np


def write_image(path: str | os.PathLike, img: np.ndarray, bits: int = 8) -> None:
    """Quantize a (c,H,W) float array in [0,1] and write P5/P6 accordingly."""
    if bits not in (8, 16):
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"image must be (1|3, H, W), got {img.shape}")
    c, h, w = img.shape
    maxval = (1 << bits) - 1
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    q = q.astype(np.uint8 if bits == 8 else ">u2")
    magic = b"P5" if c == 1 else b"P6"
    header = magic + f"\n{w} {h}\n{maxval}\n".encode("ascii")
    # samples are interleaved row-major, channel-last for PPM
    raw = q.transpose(1, 2, 0).tobytes() if c == 3 else q[0].tobytes()
    with open(path, "wb") as fh:
        fh.write(header + raw)


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Read a binary PGM/PPM into a (c,H,W) float32 array scaled to [0,1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: not a binary PGM/PPM file (magic {magic!r})")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: invalid maxval {maxval}")
    c = 1 if magic == b"P5" else 3
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    count = w * h * c
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    if raw.size != count:
        raise ValueError(f"{path}: truncated pixel data")
    arr = raw.astype(np.float32) / np.float32(maxval)
    if c == 1:
        return arr.reshape(1, h, w)
    return np.ascontiguousarray(arr.reshape(h, w, 3).transpose(2, 0, 1))
