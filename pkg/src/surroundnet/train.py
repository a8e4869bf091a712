"""Adam training loop with optional synthetic pretraining and resumable checkpoints.

Batches depend only on (seed, global step), and the optimizer state is saved
next to each checkpoint, so a resumed run continues bit-for-bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import load_tensors, optimizer_path, save_tensors
from .data import PairedDataset, load_pairs, sample_batch
from .losses import psnr, ssim_index, total_loss
from .model import ASF_SIZES, NetConfig, SurroundNet
from .synth import make_led_target

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "loss", "l_ssim", "l_char", "l_dists", "l_l")


class TrainingDiverged(RuntimeError):
    """The loss became non-finite; the last written checkpoint is left untouched."""


@dataclass
class TrainConfig:
    data_dir: str = ""
    pretrain_dir: str = ""
    eval_dir: str = ""
    out_dir: str = "run"
    batch_size: int = 8
    patch_size: int = 64
    epochs: int = 1
    pretrain_epochs: int = 0
    steps: int = 0  # > 0 overrides epochs for the main stage
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    use_les: bool = True
    blocks: int = 4
    eca: bool = True
    plain: bool = False
    channels: int = 32
    led_features: int = 16
    rdb_layers: int = 4
    growth: int = 8
    checkpoint_every: int = 0
    eval_every: int = 0
    reset_optimizer: bool = True
    freeze_led: bool = False
    resume: str = ""

    def __post_init__(self):
        net = self.net_config()
        if self.patch_size < net.receptive_field:
            raise ValueError(f"patch_size {self.patch_size} is below the largest surround "
                             f"receptive field {net.receptive_field}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def net_config(self) -> NetConfig:
        if not 1 <= self.blocks <= len(ASF_SIZES):
            raise ValueError(f"blocks must be in 1..{len(ASF_SIZES)}, got {self.blocks}")
        return NetConfig(channels=self.channels, led_features=self.led_features,
                         rdb_layers=self.rdb_layers, growth=self.growth,
                         asf_sizes=ASF_SIZES[:self.blocks], use_eca=self.eca,
                         block="plain" if self.plain else "arblock")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class Adam:
    """Bias-corrected Adam over named parameters; state kept in float32."""

    def __init__(self, named_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}
        self.skipped = 0

    def step(self) -> bool:
        """Apply one update from ``p.grad``; returns False (and skips) on non-finite grads."""
        live = [(n, p) for n, p in self.params if p.requires_grad and p.grad is not None]
        if not all(np.all(np.isfinite(p.grad)) for _, p in live):
            self.skipped += 1
            log.warning("non-finite gradient at optimizer step %d; update skipped", self.t + 1)
            return False
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in live:
            g = p.grad.astype(p.dtype, copy=False)
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            p.data = (p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
        return True

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"adam.step": np.array([self.t], dtype=np.float32)}
        for name, _ in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["adam.step"][0])
        for name, p in self.params:
            self.m[name] = state[f"adam.m.{name}"].astype(p.dtype).reshape(p.shape)
            self.v[name] = state[f"adam.v.{name}"].astype(p.dtype).reshape(p.shape)


@dataclass
class TrainResult:
    net: SurroundNet
    optimizer: Adam
    records: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None


def ensure_led_targets(data: PairedDataset) -> PairedDataset:
    """Fill in noise-free dark targets by fitting each pair when none were supplied."""
    if data.led:
        return data
    log.info("fitting darkening parameters for %d pairs", len(data))
    led = [make_led_target(lo, hi) for lo, hi in zip(data.low, data.high)]
    return PairedDataset(data.names, data.low, data.high, led)


def _steps_for(data: PairedDataset, epochs: int, batch: int) -> int:
    return epochs * math.ceil(len(data) / batch)


def evaluate(net: SurroundNet, data: PairedDataset) -> dict[str, float]:
    """Mean PSNR / SSIM of the clamped enhancement over whole images."""
    scores_p, scores_s = [], []
    with ad.no_grad():
        for lo, hi in zip(data.low, data.high):
            out, _ = net(ad.tensor(lo[None]))
            scores_p.append(psnr(out.data[0], hi))
            scores_s.append(ssim_index(out.data[0], hi))
    return {"psnr": float(np.mean(scores_p)), "ssim": float(np.mean(scores_s))}


def format_record(rec: dict) -> str:
    return " ".join([str(rec["step"])] + [f"{rec[c]:.9g}" for c in LOG_COLUMNS[1:]])


def save_checkpoint(path, net: SurroundNet, opt: Adam, step: int) -> None:
    save_tensors(path, net.state_dict())
    state = opt.state_dict()
    state["train.step"] = np.array([step], dtype=np.float32)
    save_tensors(optimizer_path(path), state)


def train(cfg: TrainConfig, data: PairedDataset | None = None, pretrain: PairedDataset | None = None,
          eval_data: PairedDataset | None = None, write_files: bool = True) -> TrainResult:
    """Run the (optional) pretraining stage then the main stage.

    Datasets passed in take precedence over the directories in ``cfg``.
    Writes ``metrics.log`` (and ``eval.log``, ``checkpoint.srnd``) under
    ``cfg.out_dir`` unless ``write_files`` is False.
    """
    if data is None:
        if not cfg.data_dir:
            raise ValueError("no training data: set data_dir")
        data = load_pairs(cfg.data_dir)
    if pretrain is None and cfg.pretrain_dir:
        pretrain = load_pairs(cfg.pretrain_dir)
    if eval_data is None and cfg.eval_dir:
        eval_data = load_pairs(cfg.eval_dir)

    stages = []
    if pretrain is not None and cfg.pretrain_epochs > 0:
        pretrain = pretrain.drop_smaller_than(cfg.patch_size)
        if cfg.use_les:
            pretrain = ensure_led_targets(pretrain)
        stages.append(("pretrain", pretrain, _steps_for(pretrain, cfg.pretrain_epochs, cfg.batch_size)))
    data = data.drop_smaller_than(cfg.patch_size)
    if len(data) == 0:
        raise ValueError("no training pair is at least patch_size in both dimensions")
    if cfg.use_les:
        data = ensure_led_targets(data)
    main_steps = cfg.steps if cfg.steps > 0 else _steps_for(data, cfg.epochs, cfg.batch_size)
    stages.append(("main", data, main_steps))

    net = SurroundNet(cfg.net_config(), seed=cfg.seed)
    if cfg.freeze_led:
        for name, p in net.named_parameters():
            if name.startswith("led."):
                p.requires_grad = False
    opt = Adam(net.named_parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    start = 0
    if cfg.resume:
        net.load_state_dict(load_tensors(cfg.resume))
        state = load_tensors(optimizer_path(cfg.resume))
        opt.load_state_dict(state)
        start = int(state["train.step"][0]) + 1
        log.info("resumed from %s at step %d", cfg.resume, start)

    out_dir = Path(cfg.out_dir)
    ckpt = out_dir / "checkpoint.srnd"
    if write_files:
        out_dir.mkdir(parents=True, exist_ok=True)
    metrics = open(out_dir / "metrics.log", "a") if write_files else None
    result = TrainResult(net, opt, checkpoint=ckpt if write_files else None)
    params = net.parameters()

    try:
        offset = 0
        for stage_no, (stage, dataset, n_steps) in enumerate(stages):
            first, last = offset, offset + n_steps
            offset = last
            if start >= last:
                continue
            if stage_no > 0 and start <= first and cfg.reset_optimizer:
                opt = result.optimizer = Adam(net.named_parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            for step in range(max(start, first), last):
                batch = sample_batch(dataset, cfg.seed, step, cfg.batch_size, cfg.patch_size)
                ad.zero_grad(params)
                enhanced, led_out = net(ad.tensor(batch.low), clamp=False)
                led_target = ad.tensor(batch.led) if batch.led is not None else None
                terms = total_loss(enhanced, ad.tensor(batch.high), led_out, led_target, use_les=cfg.use_les)
                rec = {"step": step, **terms.record()}
                if not all(math.isfinite(rec[c]) for c in LOG_COLUMNS[1:]):
                    raise TrainingDiverged(f"non-finite loss at step {step} ({stage})")
                ad.backward(terms.l_t)
                opt.step()
                result.records.append(rec)
                if metrics:
                    metrics.write(format_record(rec) + "\n")
                if step % 100 == 0:
                    log.info("%s step %d loss %.5f", stage, step, rec["loss"])
                if write_files and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                    metrics.flush()
                    save_checkpoint(ckpt, net, opt, step)
                if write_files and eval_data is not None and cfg.eval_every and (step + 1) % cfg.eval_every == 0:
                    scores = evaluate(net, eval_data)
                    with open(out_dir / "eval.log", "a") as fh:
                        fh.write(f"{step} {scores['psnr']:.6f} {scores['ssim']:.6f}\n")
        if write_files and offset > start:
            save_checkpoint(ckpt, net, opt, offset - 1)
    finally:
        if metrics:
            metrics.close()
    return result


def read_metrics(path) -> list[dict]:
    """Parse a metrics log back into records."""
    out = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if len(parts) != len(LOG_COLUMNS):
            continue
        rec = {"step": int(parts[0])}
        rec.update({c: float(v) for c, v in zip(LOG_COLUMNS[1:], parts[1:])})
        out.append(rec)
    return out
