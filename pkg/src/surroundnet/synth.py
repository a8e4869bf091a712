"""Synthetic darkening, darkening-parameter recovery, and denoiser targets.

A dark image is simulated as ``beta * (alpha * img) ** gamma``.  For a real
(noisy dark, clean normal) pair the three parameters are fitted by least
squares so the clean image can be darkened into a noise-free dark target.

Only ``beta * alpha ** gamma`` and ``gamma`` are determined by a pair: any
(alpha, beta) on the curve ``beta * alpha ** gamma = const`` produces the same
dark image.  ``DarkeningParams.gain`` exposes the identifiable product.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .lm import LmConfig, LmResult, lm_optimize

log = logging.getLogger(__name__)

ALPHA_RANGE = (0.9, 1.0)
BETA_RANGE = (0.5, 1.0)
GAMMA_RANGE = (1.5, 5.0)
FIT_START = (0.95, 0.75, 3.25)  # midpoints of the sampling ranges
FIT_BOX = (1e-6, 10.0)
FIT_MAX_PIXELS = 65536
H_FLOOR = 1.0 / 255.0


@dataclass(frozen=True)
class DarkeningParams:
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and self.gamma > 0):
            raise ValueError(f"darkening parameters must be positive, got {self}")

    @property
    def gain(self) -> float:
        return self.beta * self.alpha**self.gamma

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma])


def darken(img, p: DarkeningParams) -> np.ndarray:
    """beta * (alpha * img) ** gamma, clamped to [0, 1], same for every channel."""
    arr = np.asarray(getattr(img, "data", img), dtype=np.float64)
    out = p.beta * np.power(p.alpha * np.clip(arr, 0.0, None), p.gamma)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def sample_params(rng: np.random.Generator | int) -> DarkeningParams:
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    alpha = rng.uniform(*ALPHA_RANGE)
    beta = rng.uniform(*BETA_RANGE)
    gamma = rng.uniform(*GAMMA_RANGE)
    return DarkeningParams(float(alpha), float(beta), float(gamma))


def _project(x: np.ndarray) -> np.ndarray:
    return np.clip(x, *FIT_BOX)


def darkening_problem(low: np.ndarray, high: np.ndarray):
    """Residual and Jacobian callables over x = (alpha, beta, gamma)."""
    lo = np.asarray(low, dtype=np.float64).ravel()
    h = np.maximum(np.asarray(high, dtype=np.float64).ravel(), H_FLOOR)
    log_h = np.log(h)

    def residual(x):
        a, b, g = x
        return lo - b * np.exp(g * (np.log(a) + log_h))

    def jacobian(x):
        a, b, g = x
        ah_g = np.exp(g * (np.log(a) + log_h))  # (alpha * h) ** gamma
        return np.stack([-b * g * ah_g / a, -ah_g, -b * ah_g * (np.log(a) + log_h)], axis=1)

    return residual, jacobian


def fit_darkening(low, high, cfg: LmConfig = LmConfig(), x0=FIT_START,
                  max_pixels: int = FIT_MAX_PIXELS, seed: int = 0) -> tuple[DarkeningParams, LmResult]:
    """Least-squares fit of (alpha, beta, gamma) mapping ``high`` onto ``low``.

    At most ``max_pixels`` values are used, drawn uniformly without replacement.
    """
    lo = np.asarray(getattr(low, "data", low), dtype=np.float64).ravel()
    hi = np.asarray(getattr(high, "data", high), dtype=np.float64).ravel()
    if lo.shape != hi.shape:
        raise ValueError(f"pair shapes differ: {lo.shape} vs {hi.shape}")
    if lo.size > max_pixels:
        idx = np.random.default_rng(seed).choice(lo.size, size=max_pixels, replace=False)
        lo, hi = lo[idx], hi[idx]
    if np.ptp(hi) < 1e-6 or np.ptp(lo) < 1e-6:
        warnings.warn("constant image in pair: darkening parameters are ill-posed", RuntimeWarning, stacklevel=2)
    residual, jacobian = darkening_problem(lo, hi)
    result = lm_optimize(residual, jacobian, x0, cfg, project=_project)
    if not result.success:
        log.warning("darkening fit did not converge: %s", result.message)
    a, b, g = result.x
    return DarkeningParams(float(a), float(b), float(g)), result


def fit_darkening_params(low, high, cfg: LmConfig = LmConfig(), **kwargs) -> DarkeningParams:
    return fit_darkening(low, high, cfg, **kwargs)[0]


def make_led_target(low, high=None, cfg: LmConfig = LmConfig()) -> np.ndarray:
    """Noise-free dark target for the denoiser.

    A synthetic dark image (``high`` is None) is its own target.  For a real
    pair the clean image is darkened with parameters fitted to the pair.
    """
    if high is None:
        return np.asarray(getattr(low, "data", low))
    return darken(high, fit_darkening_params(low, high, cfg))


# -- procedural scenes -----------------------------------------------------

def _smooth_noise(rng: np.random.Generator, h: int, w: int, cells: int) -> np.ndarray:
    coarse = rng.random((cells + 1, cells + 1))
    ys = np.linspace(0, cells, h)
    xs = np.linspace(0, cells, w)
    y0 = np.minimum(ys.astype(int), cells - 1)
    x0 = np.minimum(xs.astype(int), cells - 1)
    ty = (ys - y0)[:, None]
    tx = (xs - x0)[None, :]
    c00 = coarse[y0][:, x0]
    c01 = coarse[y0][:, x0 + 1]
    c10 = coarse[y0 + 1][:, x0]
    c11 = coarse[y0 + 1][:, x0 + 1]
    return (c00 * (1 - ty) * (1 - tx) + c01 * (1 - ty) * tx + c10 * ty * (1 - tx) + c11 * ty * tx)


def procedural_scene(rng: np.random.Generator, height: int = 96, width: int = 96) -> np.ndarray:
    """A normal-light (3, H, W) test scene: smooth colour fields, shapes, fine texture."""
    img = np.empty((3, height, width))
    base = rng.uniform(0.3, 0.7, size=3)
    for c in range(3):
        img[c] = base[c] + 0.35 * (_smooth_noise(rng, height, width, 3) - 0.5)
    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(rng.integers(3, 7)):
        color = rng.uniform(0.05, 1.0, size=3)
        if rng.random() < 0.5:
            # the max() guards only matter below 16 px and keep larger scenes unchanged
            y0, x0 = rng.integers(0, max(height - 8, 1)), rng.integers(0, max(width - 8, 1))
            y1 = y0 + rng.integers(6, max(height // 2, 7))
            x1 = x0 + rng.integers(6, max(width // 2, 7))
            mask = (yy >= y0) & (yy < y1) & (xx >= x0) & (xx < x1)
        else:
            cy, cx, rad = rng.uniform(0, height), rng.uniform(0, width), rng.uniform(4, max(height / 4, 4))
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < rad**2
        img[:, mask] = color[:, None]
    img += 0.04 * (_smooth_noise(rng, height, width, max(height // 4, 2))[None] - 0.5)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def lol_style_pair(rng: np.random.Generator, height: int = 96, width: int = 96,
                   noise: float = 0.03) -> tuple[np.ndarray, np.ndarray, DarkeningParams]:
    """(noisy dark, clean normal, true params) resembling a real captured pair."""
    high = procedural_scene(rng, height, width)
    p = sample_params(rng)
    low = darken(high, p) + rng.normal(0.0, noise, size=high.shape)
    return np.clip(low, 0.0, 1.0).astype(np.float32), high, p
