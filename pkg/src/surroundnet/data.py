"""8-bit image I/O, paired datasets and aligned random crops."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".bmp", ".tif", ".tiff", ".ppm", ".jpg", ".jpeg")


class DataError(ValueError):
    """Unreadable, unsupported or inconsistent image data."""


def read_image(path) -> np.ndarray:
    """Load an 8-bit image as float32 (3, H, W) in [0, 1]."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I", "F") or im.mode.startswith("I;"):
                raise DataError(f"{path}: {im.mode} images are not supported (8-bit only)")
            if im.mode != "RGB":
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"{path}: cannot read image ({exc})") from None
    return (arr.transpose(2, 0, 1).astype(np.float32) / 255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """(3, H, W) float in [0, 1] -> (H, W, 3) uint8 via round(clamp * 255)."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.round(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)


def write_image(path, img: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img), mode="RGB").save(path)


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


@dataclass
class PairedDataset:
    names: list[str]
    low: list[np.ndarray]
    high: list[np.ndarray]
    led: list[np.ndarray] = field(default_factory=list)  # noise-free dark targets

    def __len__(self) -> int:
        return len(self.names)

    def __post_init__(self):
        if not (len(self.names) == len(self.low) == len(self.high)):
            raise DataError("names, low and high must have equal length")
        if self.led and len(self.led) != len(self.low):
            raise DataError("led targets must match the pairs one to one")
        for name, lo, hi in zip(self.names, self.low, self.high):
            if lo.shape != hi.shape:
                raise DataError(f"{name}: low {lo.shape} and high {hi.shape} differ")

    def drop_smaller_than(self, patch: int) -> "PairedDataset":
        keep = []
        for i, (name, lo) in enumerate(zip(self.names, self.low)):
            if min(lo.shape[1:]) < patch:
                log.warning("skipping %s: %s is smaller than the %d px patch", name, lo.shape[1:], patch)
            else:
                keep.append(i)
        return PairedDataset([self.names[i] for i in keep], [self.low[i] for i in keep],
                             [self.high[i] for i in keep], [self.led[i] for i in keep] if self.led else [])


def load_pairs(directory, require_led: bool = False) -> PairedDataset:
    """Read ``low/`` and ``high/`` (and ``led_target/`` if present) by filename."""
    directory = Path(directory)
    lows = {p.name: p for p in list_images(directory / "low")}
    highs = {p.name: p for p in list_images(directory / "high")}
    if set(lows) != set(highs):
        only = sorted(set(lows) ^ set(highs))
        raise DataError(f"{directory}: low/ and high/ differ in {only[:5]}")
    if not lows:
        raise DataError(f"{directory}: no images in low/")
    names = sorted(lows)
    led_dir = directory / "led_target"
    led = []
    if led_dir.is_dir():
        led = [read_image(led_dir / n) for n in names]
    elif require_led:
        raise DataError(f"{directory}: led_target/ missing")
    return PairedDataset(names, [read_image(lows[n]) for n in names], [read_image(highs[n]) for n in names], led)


@dataclass
class Batch:
    low: np.ndarray  # (B, 3, p, p)
    high: np.ndarray
    led: np.ndarray | None
    windows: list[tuple[int, int, int]]  # (image index, top, left)


def sample_windows(sizes: list[tuple[int, int]], rng: np.random.Generator, batch_size: int,
                   patch: int) -> list[tuple[int, int, int]]:
    out = []
    for _ in range(batch_size):
        i = int(rng.integers(len(sizes)))
        h, w = sizes[i]
        out.append((i, int(rng.integers(0, h - patch + 1)), int(rng.integers(0, w - patch + 1))))
    return out


def sample_batch(data: PairedDataset, seed: int, step: int, batch_size: int, patch: int) -> Batch:
    """Aligned random crops; the same (seed, step) always yields the same batch."""
    if len(data) == 0:
        raise DataError("empty dataset")
    rng = np.random.default_rng([seed, step])
    windows = sample_windows([lo.shape[1:] for lo in data.low], rng, batch_size, patch)

    def crop(images):
        return np.stack([images[i][:, t:t + patch, l:l + patch] for i, t, l in windows])

    return Batch(crop(data.low), crop(data.high), crop(data.led) if data.led else None, windows)
