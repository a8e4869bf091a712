"""Batch command line: enhance, train, synth, fit, eval, ssr, gradcheck, params.

Tabular results go to stdout as tab-separated text.  Commands that take
``--report DIR`` also write the table and matplotlib figures there.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import DomainError, ShapeError, gradient_check
from .checkpoint import CheckpointError, load_model
from .config import ConfigError, build_train_config, dump_config, load_config
from .data import DataError, list_images, load_pairs, read_image, write_image
from .losses import psnr, ssim_index, total_loss
from .model import ASF_SIZES, NetConfig, SurroundNet, param_breakdown, param_count
from .retinex import SingularKernelError, default_msr_kernels, gaussian_half_size, gaussian_kernel, msr, ssr, stretch
from .synth import FIT_MAX_PIXELS, darken, fit_darkening, procedural_scene, sample_params
from .train import TrainConfig, TrainingDiverged, train

log = logging.getLogger("surroundnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


TRAIN_HELP = {
    "data_dir": "training set with low/ and high/ (and optionally led_target/)",
    "pretrain_dir": "synthetic pretraining set, used when pretrain_epochs > 0",
    "eval_dir": "held-out pairs scored every eval_every steps",
    "out_dir": "directory for metrics.log, eval.log, checkpoint.srnd and figures",
    "batch_size": "patches per step",
    "patch_size": "square crop side in pixels",
    "epochs": "passes over the training set in the main stage",
    "pretrain_epochs": "passes over the pretraining set before the main stage",
    "steps": "fixed number of main-stage steps (overrides epochs when > 0)",
    "seed": "seed for weights and patch sampling",
    "lr": "Adam learning rate",
    "beta1": "Adam first-moment decay",
    "beta2": "Adam second-moment decay",
    "adam_eps": "Adam denominator epsilon",
    "use_les": "supervise the denoiser with noise-free dark targets",
    "blocks": f"number of parallel surround blocks (1..{len(ASF_SIZES)})",
    "eca": "channel gating before the output convolution",
    "plain": "replace surround blocks with plain conv stacks (ablation)",
    "channels": "feature width of the main branch",
    "led_features": "feature width of the denoiser",
    "rdb_layers": "conv layers per residual dense block",
    "growth": "growth rate of each residual dense block",
    "checkpoint_every": "write a checkpoint every N steps (0: only at the end)",
    "eval_every": "score eval_dir every N steps (0: never)",
    "reset_optimizer": "start the main stage with fresh Adam state after pretraining",
    "freeze_led": "keep denoiser weights fixed",
    "resume": "checkpoint to resume from (its .optim sibling is required)",
}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(TrainConfig):
        help_text = f"{TRAIN_HELP[f.name]} (default: {f.default})"
        if f.type in ("bool", bool):
            p.add_argument(_flag(f.name), dest=f.name, action=argparse.BooleanOptionalAction,
                           default=None, help=help_text)
        else:
            kind = {"int": int, "float": float, "str": str}.get(f.type, f.type)
            p.add_argument(_flag(f.name), dest=f.name, type=kind, default=None, metavar="X", help=help_text)


def _add_net_flags(p: argparse.ArgumentParser) -> None:
    d = NetConfig()
    p.add_argument("--checkpoint", help="read the architecture (and weights) from this checkpoint")
    p.add_argument("--channels", type=int, default=d.channels, help="main-branch feature width")
    p.add_argument("--led-features", type=int, default=d.led_features, help="denoiser feature width")
    p.add_argument("--rdb-layers", type=int, default=d.rdb_layers, help="conv layers per dense block")
    p.add_argument("--growth", type=int, default=d.growth, help="dense block growth rate")
    p.add_argument("--blocks", type=int, default=len(ASF_SIZES), help="number of surround blocks")
    p.add_argument("--eca", action=argparse.BooleanOptionalAction, default=True, help="include channel gating")
    p.add_argument("--plain", action="store_true", help="plain conv blocks instead of surround blocks")


def _net_from_args(args, seed: int = 0) -> SurroundNet:
    if args.checkpoint:
        return load_model(args.checkpoint)
    cfg = NetConfig(channels=args.channels, led_features=args.led_features, rdb_layers=args.rdb_layers,
                    growth=args.growth, use_eca=args.eca, block="plain" if args.plain else "arblock")
    try:
        cfg = cfg.with_blocks(args.blocks)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return SurroundNet(cfg, seed=seed)


def _print_table(header, rows) -> str:
    lines = ["\t".join(header)] + ["\t".join(str(c) for c in row) for row in rows]
    text = "\n".join(lines)
    print(text)
    return text + "\n"


def _inputs(path) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        files = list_images(path)
        if not files:
            raise DataError(f"{path}: no images")
        return files
    if not path.exists():
        raise DataError(f"{path}: no such file or directory")
    return [path]


def enhance_image(net: SurroundNet, img: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        out, _ = net(ad.tensor(img[None]))
    return out.data[0]


# -- commands ----------------------------------------------------------------

def cmd_enhance(args) -> int:
    net = load_model(args.checkpoint)
    out_dir = Path(args.output)
    failures = []
    for path in _inputs(args.input):
        try:
            img = read_image(path)
            write_image(out_dir / path.name, enhance_image(net, img))
            print(f"{path.name}\t{img.shape[2]}x{img.shape[1]}\tok")
        except DataError as exc:
            failures.append(str(exc))
    for msg in failures:
        print(f"error: {msg}", file=sys.stderr)
    return EXIT_DATA if failures else EXIT_OK


def cmd_train(args) -> int:
    file_values = load_config(args.config) if args.config else {}
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(TrainConfig)}
    cfg = build_train_config(file_values, overrides)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(dump_config(cfg))
    result = train(cfg)
    from .plotting import plot_learned_surrounds, plot_loss_curve

    if result.records:
        plot_loss_curve(out_dir / "loss_curve.png", result.records)
    if cfg.net_config().block == "arblock":
        plot_learned_surrounds(out_dir / "surrounds.png", result.net)
    last = result.records[-1] if result.records else None
    rows = [("steps", len(result.records)), ("params", param_count(result.net)),
            ("checkpoint", result.checkpoint)]
    if last:
        rows += [(k, f"{last[k]:.6f}") for k in ("loss", "l_ssim", "l_char", "l_dists", "l_l")]
    _print_table(("key", "value"), rows)
    return EXIT_OK


def _write_manifest(path: Path, rows) -> None:
    lines = ["name\talpha\tbeta\tgamma"] + [f"{n}\t{a:.9g}\t{b:.9g}\t{g:.9g}" for n, a, b, g in rows]
    path.write_text("\n".join(lines) + "\n")


def cmd_synth(args) -> int:
    """Darken normal-light images (or procedural scenes) into a training set."""
    rng = np.random.default_rng(args.seed)
    out = Path(args.output)
    if args.procedural:
        sources = [(f"scene_{i:04d}.png", procedural_scene(rng, args.size, args.size)) for i in range(args.procedural)]
    elif args.input:
        sources = [(p.with_suffix(".png").name, read_image(p)) for p in _inputs(args.input)]
    else:
        raise UsageError("synth needs --input or --procedural")
    manifest = []
    for name, high in sources:
        p = sample_params(rng)
        clean = darken(high, p)
        low = clean
        if args.noise > 0:
            low = np.clip(clean + rng.normal(0.0, args.noise, clean.shape), 0, 1).astype(np.float32)
        write_image(out / "high" / name, high)
        write_image(out / "low" / name, low)
        write_image(out / "led_target" / name, clean)
        manifest.append((name, p.alpha, p.beta, p.gamma))
    _write_manifest(out / "manifest.tsv", manifest)
    _print_table(("name", "alpha", "beta", "gamma"), [(n, f"{a:.6f}", f"{b:.6f}", f"{g:.6f}") for n, a, b, g in manifest])
    return EXIT_OK


def _fit_row(name, low, high, seed):
    params, res = fit_darkening(low, high, seed=seed)
    if not res.success or not np.isfinite(res.cost):
        raise NumericalFailure(f"{name}: darkening fit failed ({res.message})")
    rms = float(np.sqrt(res.cost / min(low.size, FIT_MAX_PIXELS)))
    return params, rms


def cmd_fit(args) -> int:
    header = ("name", "alpha", "beta", "gamma", "gain", "rms")
    if args.data:
        data = load_pairs(args.data)
        led_dir = Path(args.data) / "led_target"
        rows, manifest = [], []
        for name, low, high in zip(data.names, data.low, data.high):
            p, rms = _fit_row(name, low, high, args.seed)
            if not args.dry_run:
                write_image(led_dir / name, darken(high, p))
            manifest.append((name, p.alpha, p.beta, p.gamma))
            rows.append((name, f"{p.alpha:.6f}", f"{p.beta:.6f}", f"{p.gamma:.6f}", f"{p.gain:.6f}", f"{rms:.6f}"))
        if not args.dry_run:
            _write_manifest(Path(args.data) / "manifest.tsv", manifest)
        _print_table(header, rows)
        return EXIT_OK
    if not (args.low and args.high):
        raise UsageError("fit needs --data DIR or both --low and --high")
    low, high = read_image(args.low), read_image(args.high)
    if low.shape != high.shape:
        raise DataError(f"pair shapes differ: {low.shape} vs {high.shape}")
    p, rms = _fit_row(Path(args.low).name, low, high, args.seed)
    _print_table(header, [(Path(args.low).name, f"{p.alpha:.6f}", f"{p.beta:.6f}", f"{p.gamma:.6f}",
                           f"{p.gain:.6f}", f"{rms:.6f}")])
    return EXIT_OK


def cmd_eval(args) -> int:
    """Per-image and mean PSNR/SSIM, sorted by filename."""
    if args.checkpoint:
        if not args.data:
            raise UsageError("--checkpoint needs --data DIR with low/ and high/")
        data = load_pairs(args.data)
        net = load_model(args.checkpoint)
        pairs = [(n, enhance_image(net, lo), hi) for n, lo, hi in zip(data.names, data.low, data.high)]
    else:
        if not (args.pred and args.target):
            raise UsageError("eval needs --pred and --target directories, or --checkpoint with --data")
        preds = {p.name: p for p in _inputs(args.pred)}
        targets = {p.name: p for p in _inputs(args.target)}
        missing = sorted(set(preds) ^ set(targets))
        if missing:
            raise DataError(f"prediction and target sets differ in {missing[:5]}")
        pairs = []
        for name in sorted(preds):
            a, b = read_image(preds[name]), read_image(targets[name])
            if a.shape != b.shape:
                raise DataError(f"{name}: shapes differ {a.shape} vs {b.shape}")
            pairs.append((name, a, b))
    names, ps, ss = [], [], []
    for name, pred, target in pairs:
        names.append(name)
        ps.append(psnr(pred, target))
        ss.append(ssim_index(pred, target))
    rows = [(n, f"{p:.4f}", f"{s:.4f}") for n, p, s in zip(names, ps, ss)]
    rows.append(("mean", f"{np.mean(ps):.4f}", f"{np.mean(ss):.4f}"))
    table = _print_table(("name", "psnr", "ssim"), rows)
    if args.report:
        from .plotting import plot_eval_scores

        report = Path(args.report)
        report.mkdir(parents=True, exist_ok=True)
        (report / "eval.tsv").write_text(table)
        plot_eval_scores(report / "eval.png", names, ps, ss)
    return EXIT_OK


def cmd_ssr(args) -> int:
    """Classical single- and multi-scale Retinex baselines."""
    img = read_image(args.input)
    sigmas = args.sigma or [15.0, 80.0, 250.0]
    outputs, rows = [], []
    with ad.no_grad():
        for s in sigmas:
            k = gaussian_half_size(s)
            r = ssr(img, gaussian_kernel(s, k)).data
            outputs.append((f"SSR sigma={s:g}", r))
            rows.append(("ssr", f"{s:g}", k, f"{r.mean():.6f}", f"{r.std():.6f}"))
        if args.scales:
            scales = [float(v) for v in args.scales.split(",")]
            r = msr(img, default_msr_kernels(scales)).data
            outputs.append(("MSR " + ",".join(f"{v:g}" for v in scales), r))
            rows.append(("msr", ",".join(f"{v:g}" for v in scales), "-", f"{r.mean():.6f}", f"{r.std():.6f}"))
    _print_table(("method", "sigma", "half_size", "mean", "std"), rows)
    if args.output:
        from .plotting import plot_kernel_profiles, plot_ssr_sweep

        out = Path(args.output)
        stem = Path(args.input).stem
        for label, r in outputs:
            tag = label.split()[0].lower() + "_" + label.split("=")[-1].split()[-1].replace(",", "-")
            write_image(out / f"{stem}_{tag}.png", stretch(r))
        plot_ssr_sweep(out / f"{stem}_sweep.png", img, outputs)
        plot_kernel_profiles(out / "kernel_profiles.png")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    """Finite-difference check of the full training loss through the network."""
    net = _net_from_args(args, args.seed)
    rng = np.random.default_rng(args.seed)
    size = args.size
    if size < 2 * max(net.config.asf_sizes) - 1:
        raise UsageError(f"--size must be at least {2 * max(net.config.asf_sizes) - 1}")
    low = ad.tensor(rng.uniform(0.0, 0.4, (1, 3, size, size)))
    high = ad.tensor(rng.uniform(0.0, 1.0, (1, 3, size, size)))
    led = ad.tensor(rng.uniform(0.0, 0.4, (1, 3, size, size)))

    def loss(img, *_params):
        out, led_out = net(img, clamp=False)
        return total_loss(out, high, led_out, led).l_t

    named = net.named_parameters()
    report = gradient_check(loss, [low] + [p for _, p in named], eps=args.eps, tol=args.tol,
                            n_samples=args.samples, seed=args.seed)
    _print_table(("checked", "max_rel_err", "tol", "passed"),
                 [(report.n_checked, f"{report.max_rel_err:.3e}", f"{report.tol:g}", report.passed)])
    if not report.passed:
        raise NumericalFailure(f"gradient check failed: max relative error {report.max_rel_err:.3e}")
    return EXIT_OK


def cmd_params(args) -> int:
    net = _net_from_args(args)
    rows = list(param_breakdown(net).items()) + [("total", param_count(net))]
    _print_table(("module", "params"), rows)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="surroundnet", description="Low-light enhancement with learned surround Retinex.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeat for debug)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("enhance", help="enhance images with a trained checkpoint")
    p.add_argument("--input", required=True, help="image file or directory of images")
    p.add_argument("--checkpoint", required=True, help="model checkpoint (.srnd)")
    p.add_argument("--output", required=True, help="output directory; filenames are kept")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; inference is deterministic")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("train", help="train a network")
    p.add_argument("--config", help="key = value file; flags override its values")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="make a darkened training set")
    p.add_argument("--input", help="directory of normal-light images")
    p.add_argument("--procedural", type=int, default=0, metavar="N", help="generate N procedural scenes instead")
    p.add_argument("--size", type=int, default=96, help="side of procedural scenes in pixels")
    p.add_argument("--noise", type=float, default=0.0, help="std of additive Gaussian noise on low images")
    p.add_argument("--output", required=True, help="output directory (low/, high/, led_target/, manifest.tsv)")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit darkening parameters to real pairs")
    p.add_argument("--low", help="dark image of a single pair")
    p.add_argument("--high", help="normal-light image of a single pair")
    p.add_argument("--data", help="dataset directory; writes led_target/ and manifest.tsv")
    p.add_argument("--dry-run", action="store_true", help="with --data, print the fits without writing files")
    p.add_argument("--seed", type=int, default=0, help="seed for pixel subsampling")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="PSNR/SSIM table")
    p.add_argument("--pred", help="directory of enhanced images")
    p.add_argument("--target", help="directory of reference images")
    p.add_argument("--checkpoint", help="enhance --data low/ with this checkpoint and compare to high/")
    p.add_argument("--data", help="dataset directory used with --checkpoint")
    p.add_argument("--report", help="directory for eval.tsv and eval.png")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; evaluation is deterministic")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ssr", help="single/multi-scale Retinex baselines")
    p.add_argument("--input", required=True, help="image file")
    p.add_argument("--sigma", type=float, action="append", help="SSR Gaussian scale; repeat for a sweep")
    p.add_argument("--scales", help="comma-separated scales for one equal-weight MSR output")
    p.add_argument("--output", help="directory for stretched outputs and figures")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; the baseline is deterministic")
    p.set_defaults(func=cmd_ssr)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    _add_net_flags(p)
    p.add_argument("--size", type=int, default=32, help="side of the random test image")
    p.add_argument("--samples", type=int, default=100, help="coordinates checked, sampled across the input and all weights")
    p.add_argument("--tol", type=float, default=1e-3, help="relative error tolerance")
    p.add_argument("--eps", type=float, default=1e-7,
                   help="central-difference step; small, so it rarely straddles a ReLU kink")
    p.add_argument("--seed", type=int, default=0, help="seed for weights, data and sampling")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="parameter counts per module")
    _add_net_flags(p)
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, SingularKernelError, KeyError, ShapeError, OSError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalFailure, TrainingDiverged, DomainError, FloatingPointError) as exc:
        print(f"error: numerical: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
