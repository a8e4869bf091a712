"""Surround functions, the adaptive surround kernel, and SSR/MSR baselines.

Kernels are 1-D, odd-length (``2K - 1`` taps for half size ``K``), symmetric,
normalized to unit sum and peaked at the centre.  A 2-D surround is the outer
product of a 1-D kernel with itself and is always applied separably.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG_OFFSET = 1.0 / 255.0


class SingularKernelError(ValueError):
    """The kernel taps sum to zero and cannot be normalized."""


@dataclass
class SurroundKernel1D:
    weights: Tensor  # length 2K - 1
    half_size: int

    @property
    def size(self) -> int:
        return 2 * self.half_size - 1

    def numpy(self) -> np.ndarray:
        return self.weights.data


def _offsets(half_size: int) -> np.ndarray:
    if half_size < 1:
        raise ValueError(f"half size must be >= 1, got {half_size}")
    return np.arange(-(half_size - 1), half_size, dtype=np.float64)


def _normalized(w: np.ndarray, half_size: int) -> SurroundKernel1D:
    w = w / w.sum()
    return SurroundKernel1D(ad.tensor(w), half_size)


def gaussian_half_size(sigma: float, tail: float = 1e-3) -> int:
    """Smallest K whose outermost tap is below ``tail`` times the peak."""
    reach = sigma * math.sqrt(2.0 * math.log(1.0 / tail))
    return int(math.floor(reach)) + 2


def gaussian_kernel(sigma: float, half_size: int) -> SurroundKernel1D:
    """Sampled exp(-d^2 / (2 sigma^2)) at integer offsets, unit sum."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    d = _offsets(half_size)
    return _normalized(np.exp(-0.5 * (d / sigma) ** 2), half_size)


def inverse_square_kernel(half_size: int) -> SurroundKernel1D:
    """1/r^2 surround; the centre tap takes the r = 1 value."""
    r = np.maximum(np.abs(_offsets(half_size)), 1.0)
    return _normalized(1.0 / r**2, half_size)


def exponential_kernel(c: float, half_size: int) -> SurroundKernel1D:
    """exp(-|r| / c) surround."""
    if not c > 0:
        raise ValueError(f"c must be positive, got {c}")
    return _normalized(np.exp(-np.abs(_offsets(half_size)) / c), half_size)


def init_asf(half_size: int, requires_grad: bool = True) -> Tensor:
    """Learnable ASF vector, initialized to all ones."""
    if half_size < 1:
        raise ValueError(f"ASF size must be >= 1, got {half_size}")
    return ad.tensor(np.ones(half_size), requires_grad=requires_grad)


def build_asf_1d(params: Tensor) -> SurroundKernel1D:
    """Differentiable kernel construction from a free vector of length K.

    cumsum(|x|) gives the rising half, its mirror without the peak gives the
    falling half, and the concatenation is divided by its sum.
    """
    if params.ndim != 1 or params.shape[0] < 1:
        raise ValueError(f"ASF parameters must be a non-empty vector, got shape {params.shape}")
    k = params.shape[0]
    rising = ad.cumsum(ad.abs(params))
    s = ad.concat([rising, ad.flip(rising[:-1])]) if k > 1 else rising
    total = ad.sum(s)
    if not total.data > 0:
        raise SingularKernelError("ASF parameters are all zero; kernel cannot be normalized")
    return SurroundKernel1D(s / total, k)


def half_differences(kernel: SurroundKernel1D | np.ndarray) -> np.ndarray:
    """ASF parameters that rebuild ``kernel``: successive differences of its rising half."""
    w = kernel.numpy() if isinstance(kernel, SurroundKernel1D) else np.asarray(kernel)
    k = (w.shape[0] + 1) // 2
    rising = np.asarray(w[:k], dtype=np.float64)
    return np.diff(rising, prepend=0.0)


def asf_2d(kernel: SurroundKernel1D) -> Tensor:
    """Outer product k k^T as a (2K-1, 2K-1) tensor."""
    w = kernel.weights
    n = w.shape[0]
    col = ad.broadcast_to(ad.reshape(w, (n, 1)), (n, n))
    row = ad.broadcast_to(ad.reshape(w, (1, n)), (n, n))
    return col * row


def apply_separable(feat: Tensor, kernel: SurroundKernel1D) -> Tensor:
    """Depthwise surround filtering of an (N, C, H, W) map.

    Rows then columns, each pass zero-padded by K - 1 per side, which equals
    full 2-D filtering with ``asf_2d(kernel)`` under zero padding.
    """
    if feat.ndim != 4:
        raise ad.ShapeError("apply_separable", feat.shape, ("N", "C", "H", "W"))
    pad = kernel.half_size - 1
    rows = ad.conv1d(feat, kernel.weights, padding=pad, axis=3)
    return ad.conv1d(rows, kernel.weights, padding=pad, axis=2)


def _as_nchw(image) -> tuple[Tensor, tuple]:
    t = image if isinstance(image, Tensor) else ad.tensor(image)
    shape = t.shape
    if t.ndim == 2:
        return ad.reshape(t, (1, 1) + shape), shape
    if t.ndim == 3:
        return ad.reshape(t, (1,) + shape), shape
    if t.ndim == 4:
        return t, shape
    raise ad.ShapeError("retinex input", shape, ("[N]", "[C]", "H", "W"))


def ssr(image, kernel: SurroundKernel1D, delta: float = LOG_OFFSET) -> Tensor:
    """Single-scale Retinex: log(S + delta) - G * log(S + delta).

    Accepts (H, W), (C, H, W) or (N, C, H, W) input and returns the same
    shape.  The surround blurs the log image.
    """
    t, shape = _as_nchw(image)
    shifted = t + delta
    if np.any(shifted.data <= 0):
        raise ad.DomainError("ssr input must stay positive after the log offset")
    logged = ad.log(shifted)
    r = logged - apply_separable(logged, kernel)
    return ad.reshape(r, shape)


def default_msr_kernels(sigmas: Sequence[float] = (15.0, 50.0, 80.0)) -> list[SurroundKernel1D]:
    return [gaussian_kernel(s, gaussian_half_size(s)) for s in sigmas]


def msr(image, kernels: Sequence[SurroundKernel1D] | None = None,
        weights: Sequence[float] | None = None, delta: float = LOG_OFFSET) -> Tensor:
    """Weighted sum of SSR outputs; defaults to equal weights over sigma 15, 50, 80."""
    kernels = default_msr_kernels() if kernels is None else list(kernels)
    if weights is None:
        weights = [1.0 / len(kernels)] * len(kernels)
    if len(weights) != len(kernels) or not kernels:
        raise ValueError(f"need one weight per kernel, got {len(weights)} weights for {len(kernels)} kernels")
    if abs(float(np.sum(weights)) - 1.0) > 1e-6:
        raise ValueError(f"MSR weights must sum to 1, got {float(np.sum(weights))}")
    out = None
    for k, w in zip(kernels, weights):
        term = ssr(image, k, delta) * float(w)
        out = term if out is None else out + term
    return out


def stretch(r: np.ndarray, low: float = 1.0, high: float = 99.0) -> np.ndarray:
    """Map a reflectance estimate to [0, 1] by per-channel percentile clipping.

    ``r`` is channel-first, (C, H, W).
    """
    r = np.asarray(r, dtype=np.float64)
    out = np.empty_like(r)
    for c in range(r.shape[0]):
        lo, hi = np.percentile(r[c], [low, high])
        out[c] = np.clip((r[c] - lo) / max(hi - lo, 1e-12), 0.0, 1.0)
    return out.astype(np.float32)
