"""Training losses and evaluation metrics.

The training objective is

    L_t = L_h + L_l
    L_h = ssim(o, n) + charbonnier(o, n) + dists(o, n)      # enhanced vs normal light
    L_l = ssim(ol, cl) + charbonnier(ol, cl) + dists(ol, cl)  # denoiser vs clean dark

where ``L_l`` is dropped when low-exposure supervision is off.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
CHARBONNIER_EPS = 1e-3
DISTS_D1 = 1e-6
DISTS_D2 = 1e-6
PSNR_CAP = 100.0


class FeatureExtractor(Protocol):
    def __call__(self, x: Tensor) -> Sequence[Tensor]:
        ...


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    d = np.arange(size) - (size - 1) / 2
    w = np.exp(-0.5 * (d / sigma) ** 2)
    return w / w.sum()


_WINDOW = ad.tensor(_gaussian_window())
_BINOMIAL = ad.tensor(np.array([1, 4, 6, 4, 1]) / 16.0)


def _check_pair(name: str, x: Tensor, y: Tensor) -> None:
    if x.shape != y.shape:
        raise ad.ShapeError(name, x.shape, y.shape)
    if x.ndim != 4:
        raise ad.ShapeError(name, x.shape, ("N", "C", "H", "W"))


def _window_mean(t: Tensor) -> Tensor:
    # valid-region Gaussian window statistics, separable
    return ad.conv1d(ad.conv1d(t, _WINDOW, padding=0, axis=3), _WINDOW, padding=0, axis=2)


def ssim_map(x: Tensor, y: Tensor) -> Tensor:
    """Per-window SSIM over valid 11x11 Gaussian windows, per channel."""
    _check_pair("ssim", x, y)
    if min(x.shape[2:]) < SSIM_WINDOW:
        raise ad.ShapeError("ssim (image smaller than window)", x.shape, (SSIM_WINDOW, SSIM_WINDOW))
    n = x.shape[0]
    stats = _window_mean(ad.concat([x, y, x * x, y * y, x * y], axis=0))
    mx, my = stats[0:n], stats[n:2 * n]
    sxx = stats[2 * n:3 * n] - mx * mx
    syy = stats[3 * n:4 * n] - my * my
    sxy = stats[4 * n:5 * n] - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return num / den


def ssim_loss(x: Tensor, y: Tensor) -> Tensor:
    return 1.0 - ad.mean(ssim_map(x, y))


def charbonnier_loss(x: Tensor, y: Tensor, eps: float = CHARBONNIER_EPS) -> Tensor:
    """Mean over elements of sqrt((x - y)^2 + eps^2)."""
    if x.shape != y.shape:
        raise ad.ShapeError("charbonnier", x.shape, y.shape)
    d = x - y
    return ad.mean(ad.sqrt(d * d + eps * eps))


class PyramidExtractor:
    """Fixed multi-scale features: the image, then binomial-blurred 2x decimations."""

    def __init__(self, levels: int = 3):
        if levels < 1:
            raise ValueError("levels must be >= 1")
        self.levels = levels

    def __call__(self, x: Tensor) -> list[Tensor]:
        feats = [x]
        for _ in range(self.levels - 1):
            cur = feats[-1]
            if min(cur.shape[2:]) < 2:
                break
            blur = ad.conv1d(ad.conv1d(cur, _BINOMIAL, axis=3), _BINOMIAL, axis=2)
            feats.append(blur[:, :, ::2, ::2])
        return feats


def identity_extractor(x: Tensor) -> list[Tensor]:
    return [x]


def _spatial_stats(f: Tensor) -> tuple[Tensor, Tensor]:
    mu = ad.mean(f, axis=(2, 3))
    centered = f - ad.broadcast_to(ad.reshape(mu, mu.shape + (1, 1)), f.shape)
    return mu, centered


def dists_terms(fx: Tensor, fy: Tensor, d1: float = DISTS_D1, d2: float = DISTS_D2) -> tuple[Tensor, Tensor]:
    """Texture (means) and structure (covariance) similarity per (sample, channel)."""
    if fx.shape != fy.shape:
        raise ad.ShapeError("dists features", fx.shape, fy.shape)
    mx, cx = _spatial_stats(fx)
    my, cy = _spatial_stats(fy)
    vx = ad.mean(cx * cx, axis=(2, 3))
    vy = ad.mean(cy * cy, axis=(2, 3))
    cov = ad.mean(cx * cy, axis=(2, 3))
    texture = (2 * mx * my + d1) / (mx * mx + my * my + d1)
    structure = (2 * cov + d2) / (vx + vy + d2)
    return texture, structure


def dists_loss(x: Tensor, y: Tensor, extractor: Callable | None = None) -> Tensor:
    """1 - sum over feature maps of (zeta * texture + eta * structure).

    zeta = eta = 1 / (2 * number of maps); each map's terms are averaged over
    samples and channels.
    """
    _check_pair("dists", x, y)
    extractor = extractor or DEFAULT_EXTRACTOR
    fxs, fys = list(extractor(x)), list(extractor(y))
    if not fxs or len(fxs) != len(fys):
        raise ValueError("feature extractor returned no maps (or a different number for x and y)")
    weight = 1.0 / (2 * len(fxs))
    score = None
    for fx, fy in zip(fxs, fys):
        texture, structure = dists_terms(fx, fy)
        term = weight * ad.mean(texture) + weight * ad.mean(structure)
        score = term if score is None else score + term
    return 1.0 - score


DEFAULT_EXTRACTOR = PyramidExtractor(3)


@dataclass
class LossTerms:
    l_ssim: Tensor
    l_char: Tensor
    l_dists: Tensor
    l_h: Tensor
    l_l: Tensor
    l_t: Tensor

    def record(self) -> dict[str, float]:
        """Scalar values for logging, keyed by metrics-log column."""
        return {"loss": self.l_t.item(), "l_ssim": self.l_ssim.item(), "l_char": self.l_char.item(),
                "l_dists": self.l_dists.item(), "l_l": self.l_l.item()}


def _composite(x: Tensor, y: Tensor, extractor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    a, b, c = ssim_loss(x, y), charbonnier_loss(x, y), dists_loss(x, y, extractor)
    return a, b, c, a + b + c


def total_loss(o: Tensor, n: Tensor, ol: Tensor | None = None, cl: Tensor | None = None,
               extractor: Callable | None = None, use_les: bool = True) -> LossTerms:
    """Enhancement loss plus, with ``use_les``, the denoiser supervision loss."""
    l_ssim, l_char, l_dists, l_h = _composite(o, n, extractor)
    if use_les:
        if ol is None or cl is None:
            raise ValueError("low-exposure supervision needs the LED output and its clean target")
        l_l = _composite(ol, cl, extractor)[3]
        l_t = l_h + l_l
    else:
        l_l = ad.tensor(0.0)
        l_t = l_h
    return LossTerms(l_ssim, l_char, l_dists, l_h, l_l, l_t)


# -- metrics (no gradient) --------------------------------------------------

def psnr(x, y, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 for near-identical inputs."""
    x = x.data if isinstance(x, Tensor) else np.asarray(x)
    y = y.data if isinstance(y, Tensor) else np.asarray(y)
    if x.shape != y.shape:
        raise ad.ShapeError("psnr", x.shape, y.shape)
    mse = float(np.mean((x.astype(np.float64) - y.astype(np.float64)) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return float(10.0 * np.log10(peak * peak / mse))


def _as_nchw(a) -> Tensor:
    arr = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float32)
    while arr.ndim < 4:
        arr = arr[None]
    return Tensor(arr)


def ssim_index(x, y) -> float:
    """Mean SSIM in [-1, 1]; 2-D and 3-D (C, H, W) inputs are accepted."""
    with ad.no_grad():
        return 1.0 - ssim_loss(_as_nchw(x), _as_nchw(y)).item()
