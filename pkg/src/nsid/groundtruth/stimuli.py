"""Stimulus generators: Gaussian white noise, pink noise, and PGM image crops."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class IngestionError(ValueError):
    """Raised when image files cannot be used as a stimulus source."""


def gaussian_white_stimuli(count: int, height: int, width: int, seed: int) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((count, 1, height, width))


def _standardize(patches: np.ndarray) -> np.ndarray:
    mu = patches.mean(axis=(-2, -1), keepdims=True)
    centered = patches - mu
    sd = np.sqrt((centered * centered).mean(axis=(-2, -1), keepdims=True))
    return centered / sd


def pink_noise(count: int, height: int, width: int, seed: int) -> np.ndarray:
    """Gaussian fields with a 1/f amplitude spectrum, standardized per patch."""
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.rfftfreq(width)[None, :]
    f = np.sqrt(fy * fy + fx * fx)
    amp = np.zeros_like(f)
    amp[f > 0] = 1.0 / f[f > 0]
    white = rng.standard_normal((count, height, width))
    field = np.fft.irfft2(np.fft.rfft2(white) * amp, s=(height, width))
    return _standardize(field)[:, None]


def read_pgm(path: str | Path) -> np.ndarray:
    """Read an 8-bit binary (P5) PGM file into a float array."""
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IngestionError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise IngestionError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise IngestionError(f"{path}: only 8-bit PGM is supported")
    pos += 1
    pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos) if len(raw) - pos >= width * height else None
    if pixels is None:
        raise IngestionError(f"{path}: truncated pixel data")
    return pixels.reshape(height, width).astype(np.float64)


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    img = np.clip(np.asarray(image), 0, 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + img.tobytes())


def image_crops(count: int, height: int, width: int, seed: int, image_dir: str | Path) -> np.ndarray:
    """Random standardized crops from the PGM images in ``image_dir``."""
    files = sorted(Path(image_dir).glob("*.pgm"))
    if not files:
        raise IngestionError(f"no .pgm images found in {image_dir}")
    images, bad = [], []
    for f in files:
        try:
            img = read_pgm(f)
        except (IngestionError, OSError, ValueError) as exc:
            bad.append(f"{f.name} ({exc})")
            continue
        if img.shape[0] <= height or img.shape[1] <= width:
            bad.append(f"{f.name} (size {img.shape} not larger than {height}x{width})")
            continue
        images.append(img)
    if bad:
        raise IngestionError("unusable images: " + "; ".join(bad))
    rng = np.random.default_rng(seed)
    out = np.empty((count, 1, height, width))
    for i in range(count):
        img = images[rng.integers(len(images))]
        r = rng.integers(img.shape[0] - height + 1)
        c = rng.integers(img.shape[1] - width + 1)
        crop = img[r:r + height, c:c + width]
        if crop.std() == 0:
            raise IngestionError("crop with zero variance; constant image regions cannot be standardized")
        out[i, 0] = crop
    return _standardize(out)


def natural_like_stimuli(count: int, height: int = 44, width: int = 44, seed: int = 0,
                         source: str = "pink_noise", image_dir: str | Path | None = None) -> np.ndarray:
    if source == "pink_noise":
        return pink_noise(count, height, width, seed)
    if source == "image_dir":
        if image_dir is None:
            raise IngestionError("source 'image_dir' needs an image_dir path")
        return image_crops(count, height, width, seed, image_dir)
    raise ValueError(f"unknown stimulus source {source!r}")
