"""Report figures written straight to files (Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import autodiff as ad  # noqa: E402
from .retinex import (build_asf_1d, exponential_kernel, gaussian_kernel,  # noqa: E402
                      inverse_square_kernel, stretch)

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def _centred(kernel) -> tuple[np.ndarray, np.ndarray]:
    w = kernel.numpy()
    k = kernel.half_size
    return np.arange(-(k - 1), k), w


def plot_kernel_profiles(path, half_size: int = 15, sigma: float = 4.0, decay: float = 3.0,
                         learned: Mapping[str, np.ndarray] | None = None) -> Path:
    """Classical surround profiles next to any learned surround parameter vectors."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 3.4))
        for label, kern in (
            (f"gaussian, sigma={sigma:g}", gaussian_kernel(sigma, half_size)),
            ("inverse square", inverse_square_kernel(half_size)),
            (f"exponential, c={decay:g}", exponential_kernel(decay, half_size)),
        ):
            ax.plot(*_centred(kern), marker=".", label=label)
        for label, params in (learned or {}).items():
            ax.plot(*_centred(build_asf_1d(ad.tensor(params))), marker="x", linestyle="--", label=label)
        ax.set_xlabel("offset (px)")
        ax.set_ylabel("weight")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_learned_surrounds(path, net) -> Path:
    """Learned surround kernels of every adaptive block in ``net``."""
    learned = {name: p.data for name, p in net.named_parameters() if name.endswith(".asf")}
    if not learned:
        raise ValueError("network has no adaptive surround blocks")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 3.4))
        for name, params in learned.items():
            ax.plot(*_centred(build_asf_1d(ad.tensor(params))), marker=".", label=name.removesuffix(".asf"))
        ax.set_xlabel("offset (px)")
        ax.set_ylabel("weight")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_ssr_sweep(path, image: np.ndarray, outputs: Sequence[tuple[str, np.ndarray]]) -> Path:
    """Input image followed by percentile-stretched Retinex outputs, one panel each."""
    panels = [("input", image)] + [(label, stretch(r)) for label, r in outputs]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(panels), figsize=(2.4 * len(panels), 2.6))
        for ax, (label, img) in zip(np.atleast_1d(axes), panels):
            ax.imshow(np.clip(np.transpose(img, (1, 2, 0)), 0, 1), interpolation="nearest")
            ax.set_title(label)
            ax.axis("off")
        return _save(fig, path)


def plot_loss_curve(path, records: Sequence[Mapping[str, float]]) -> Path:
    """Per-step loss terms on a log scale."""
    steps = [r["step"] for r in records]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.6))
        for key in ("loss", "l_ssim", "l_char", "l_dists", "l_l"):
            vals = np.array([r[key] for r in records])
            if np.any(vals > 0):
                ax.plot(steps, vals, lw=1.0, label=key)
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.legend(frameon=False, ncol=3)
        return _save(fig, path)


def plot_eval_scores(path, names: Sequence[str], psnrs: Sequence[float], ssims: Sequence[float]) -> Path:
    """Per-image PSNR and SSIM bars with the mean marked."""
    x = np.arange(len(names))
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(2, 1, figsize=(max(4.0, 0.5 * len(names) + 2), 4.6), sharex=True)
        for ax, vals, label in ((a1, psnrs, "PSNR (dB)"), (a2, ssims, "SSIM")):
            ax.bar(x, vals, color="tab:blue", alpha=0.8)
            ax.axhline(float(np.mean(vals)), color="tab:red", lw=1.0, ls="--")
            ax.set_ylabel(label)
        a2.set_xticks(x)
        a2.set_xticklabels(names, rotation=45, ha="right")
        return _save(fig, path)
