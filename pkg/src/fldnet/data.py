"""Synthetic polyp-like data, augmentation, and 8-bit PNM file exchange."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .functional import interp_matrix


@dataclass
class SynthSpec:
    count: int = 8
    size: int = 64
    blobs_min: int = 1
    blobs_max: int = 3
    radius_min: float = 0.1
    radius_max: float = 0.3
    ecc_min: float = 0.0
    ecc_max: float = 0.6
    contrast: float = 0.15
    noise: float = 0.02
    min_fraction: float = 0.005
    max_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.count < 0 or self.size < 1:
            raise ValueError("synth.count must be >= 0 and synth.size >= 1")
        if not 1 <= self.blobs_min <= self.blobs_max:
            raise ValueError("need 1 <= synth.blobs_min <= synth.blobs_max")
        if not 0 < self.radius_min <= self.radius_max < 0.5:
            raise ValueError("need 0 < synth.radius_min <= synth.radius_max < 0.5")
        if not 0 <= self.ecc_min <= self.ecc_max < 1:
            raise ValueError("need 0 <= synth.ecc_min <= synth.ecc_max < 1")


def ellipse_field(size: int, cy: float, cx: float, a: float, b: float, angle: float) -> np.ndarray:
    """Normalised elliptical radius at every pixel centre (<= 1 means inside)."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(angle), np.sin(angle)
    u = (dx * c + dy * s) / a
    v = (-dx * s + dy * c) / b
    return np.sqrt(u * u + v * v)


def _smooth_noise(rng, size: int, cells: int) -> np.ndarray:
    m = interp_matrix(cells, size)
    return m @ rng.normal(size=(cells, cells)) @ m.T


def _sample(rng: np.random.Generator, spec: SynthSpec):
    n = spec.size
    base = np.array([0.62, 0.38, 0.32]) + rng.uniform(-0.08, 0.08, size=3)
    image = base[:, None, None] + 0.06 * _smooth_noise(rng, n, 8)[None] \
        + 0.03 * _smooth_noise(rng, n, 16)[None]
    mask = np.zeros((n, n), dtype=bool)
    tint = np.array([1.0, 0.55, 0.45]) * rng.choice([-1.0, 1.0])
    for _ in range(rng.integers(spec.blobs_min, spec.blobs_max + 1)):
        a = rng.uniform(spec.radius_min, spec.radius_max) * n
        ecc = rng.uniform(spec.ecc_min, spec.ecc_max)
        b = a * np.sqrt(1.0 - ecc * ecc)
        angle = rng.uniform(0, np.pi)
        cy, cx = rng.uniform(a, n - a, size=2)
        rho = ellipse_field(n, cy, cx, a, b, angle)
        mask |= rho <= 1.0
        # blurred rim: the intensity ramps over a couple of pixels around the edge
        soft = 1.0 / (1.0 + np.exp(-(1.0 - rho) * b / 1.5))
        image = image + spec.contrast * tint[:, None, None] * soft[None]
    image = image + spec.noise * rng.normal(size=image.shape)
    return np.clip(image, 0.0, 1.0), mask[None].astype(np.float64)


def synth_dataset(spec: SynthSpec):
    """List of (image (3,H,W) in [0,1], mask (1,H,W) in {0,1}); fixed by ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    out = []
    while len(out) < spec.count:
        image, mask = _sample(rng, spec)
        frac = mask.mean()
        if spec.min_fraction <= frac <= spec.max_fraction:
            out.append((image, mask))
    return out


# --------------------------------------------------------------- augmentation

@dataclass
class AugmentConfig:
    hflip: float = 0.5
    vflip: float = 0.5
    brightness_lo: float = 0.7
    brightness_hi: float = 1.3


def hflip(image, mask):
    return image[..., ::-1].copy(), mask[..., ::-1].copy()


def vflip(image, mask):
    return image[..., ::-1, :].copy(), mask[..., ::-1, :].copy()


def adjust_brightness(image, factor: float):
    return np.clip(image * factor, 0.0, 1.0)


def augment(image, mask, config: AugmentConfig, rng: np.random.Generator):
    """Joint random flips plus an image-only brightness scale.

    The same three draws are consumed on every call so the stream position
    never depends on which transforms fired.
    """
    u_h, u_v = rng.random(2)
    factor = rng.uniform(config.brightness_lo, config.brightness_hi)
    if u_h < config.hflip:
        image, mask = hflip(image, mask)
    if u_v < config.vflip:
        image, mask = vflip(image, mask)
    return adjust_brightness(image, factor), mask


# --------------------------------------------------------------------- files

class PNMError(ValueError):
    pass


def _read_token(buf: bytes, pos: int):
    n = len(buf)
    while pos < n:
        if buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif buf[pos:pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PNMError("truncated PNM header")
    return buf[start:pos], pos


def read_pnm(path) -> np.ndarray:
    """Binary P5 (H, W) or P6 (H, W, 3) with maxval <= 255, as uint8."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise PNMError(f"{path}: unsupported PNM magic {magic!r}")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        fields.append(int(tok))
    w, h, maxval = fields
    if not 0 < maxval < 256:
        raise PNMError(f"{path}: only 8-bit maxval supported, got {maxval}")
    pos += 1  # single whitespace after maxval
    depth = 3 if magic == b"P6" else 1
    need = w * h * depth
    data = np.frombuffer(buf, dtype=np.uint8, count=min(need, max(len(buf) - pos, 0)), offset=pos)
    if data.size != need:
        raise PNMError(f"{path}: truncated pixel data ({data.size} of {need} bytes)")
    return data.reshape((h, w, 3) if depth == 3 else (h, w)).copy()


def write_pgm(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(arr).tobytes())


def write_ppm(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"PPM needs an (H, W, 3) array, got {arr.shape}")
    h, w, _ = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(arr).tobytes())


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x) * 255.0), 0, 255).astype(np.uint8)


def load_image(path) -> np.ndarray:
    """(3, H, W) float in [0, 1]; a P5 file is replicated to three channels."""
    arr = read_pnm(path).astype(np.float64) / 255.0
    if arr.ndim == 2:
        arr = np.repeat(arr[None], 3, axis=0)
    else:
        arr = arr.transpose(2, 0, 1)
    return arr


def load_mask(path) -> np.ndarray:
    """(1, H, W) mask in {0, 1}, thresholded at half intensity."""
    arr = read_pnm(path)
    if arr.ndim != 2:
        raise PNMError(f"{path}: masks must be single-channel P5")
    return (arr >= 128).astype(np.float64)[None]


def save_dataset(samples, out_dir) -> list[str]:
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    names = []
    for i, (image, mask) in enumerate(samples):
        name = f"{i:04d}"
        write_ppm(os.path.join(out_dir, "images", name + ".ppm"), to_uint8(image.transpose(1, 2, 0)))
        write_pgm(os.path.join(out_dir, "masks", name + ".pgm"), to_uint8(mask[0]))
        names.append(name)
    return names


def load_dataset(data_dir):
    """Read ``images/*.ppm`` (or ``.pgm``) and ``masks/*.pgm`` pairs, sorted by name."""
    img_dir = os.path.join(data_dir, "images")
    mask_dir = os.path.join(data_dir, "masks")
    if not os.path.isdir(img_dir) or not os.path.isdir(mask_dir):
        raise FileNotFoundError(f"{data_dir}: expected images/ and masks/ subdirectories")
    stems = sorted(os.path.splitext(f)[0] for f in os.listdir(img_dir) if f.endswith((".ppm", ".pgm")))
    masks = sorted(os.path.splitext(f)[0] for f in os.listdir(mask_dir) if f.endswith(".pgm"))
    if stems != masks:
        raise ValueError(f"{data_dir}: {len(stems)} images and {len(masks)} masks do not pair up by name")
    samples = []
    for stem in stems:
        img_path = os.path.join(img_dir, stem + ".ppm")
        if not os.path.exists(img_path):
            img_path = os.path.join(img_dir, stem + ".pgm")
        samples.append((load_image(img_path), load_mask(os.path.join(mask_dir, stem + ".pgm"))))
    return stems, samples
