import dataclasses

import numpy as np
import pytest

from surroundnet.checkpoint import save_model
from surroundnet.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, build_parser, main
from surroundnet.data import read_image, write_image
from surroundnet.model import DESK_CONFIG, SurroundNet
from surroundnet.synth import DarkeningParams, darken, lol_style_pair, procedural_scene
from surroundnet.train import TrainConfig

TINY_NET = ["--channels", "4", "--led-features", "4", "--rdb-layers", "2", "--growth", "2", "--blocks", "2"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def rows(out):
    return [line.split("\t") for line in out.strip().splitlines()]


@pytest.fixture
def pair_dir(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(2):
        low, high, _ = lol_style_pair(rng, 24, 24)
        write_image(tmp_path / "data" / "low" / f"{i}.png", low)
        write_image(tmp_path / "data" / "high" / f"{i}.png", high)
    return tmp_path / "data"


@pytest.fixture
def checkpoint(tmp_path):
    path = tmp_path / "m.srnd"
    save_model(path, SurroundNet(DESK_CONFIG.with_blocks(2), seed=0))
    return path


# -- help and usage --------------------------------------------------------

SUBCOMMANDS = ["enhance", "train", "synth", "fit", "eval", "ssr", "gradcheck", "params"]


@pytest.mark.parametrize("command", SUBCOMMANDS)
def test_every_flag_has_help(command):
    sub = build_parser()._subparsers._group_actions[0].choices[command]
    for action in sub._actions:
        if action.option_strings and action.dest != "help":
            assert action.help, f"{command} {action.option_strings} lacks help"


def test_train_help_lists_every_config_key(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for f in dataclasses.fields(TrainConfig):
        assert "--" + f.name.replace("_", "-") in text


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["params", "--bogus"])
    assert exc.value.code == EXIT_USAGE


def test_missing_command_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == EXIT_USAGE


# -- params ----------------------------------------------------------------

def test_params_default_total(capsys):
    code, out, _ = run(capsys, "params")
    assert code == EXIT_OK
    table = dict(rows(out)[1:])
    assert int(table["total"]) == 144_748 < 150_000
    assert sum(int(v) for k, v in table.items() if k != "total") == 144_748


def test_params_from_checkpoint(capsys, checkpoint):
    code, out, _ = run(capsys, "params", "--checkpoint", checkpoint)
    net = SurroundNet(DESK_CONFIG.with_blocks(2))
    assert code == EXIT_OK and dict(rows(out)[1:])["total"] == str(sum(p.data.size for p in net.parameters()))


def test_params_bad_blocks(capsys):
    code, _, err = run(capsys, "params", "--blocks", "9")
    assert code == EXIT_USAGE and "error: usage" in err


# -- enhance ---------------------------------------------------------------

def test_enhance_with_zero_weights_is_black(capsys, tmp_path, pair_dir):
    # surround parameters keep their initial value; all-zero ones have no normalisable kernel
    net = SurroundNet(DESK_CONFIG, seed=0)
    for name, p in net.named_parameters():
        if not name.endswith(".asf"):
            p.data[...] = 0
    save_model(tmp_path / "zero.srnd", net)
    code, out, _ = run(capsys, "enhance", "--input", pair_dir / "low", "--checkpoint", tmp_path / "zero.srnd",
                       "--output", tmp_path / "out")
    assert code == EXIT_OK
    assert [r[0] for r in rows(out)] == ["0.png", "1.png"]
    for name in ("0.png", "1.png"):
        img = read_image(tmp_path / "out" / name)
        assert img.shape == (3, 24, 24) and np.all(img == 0)


def test_enhance_all_zero_checkpoint_is_data_error(capsys, tmp_path, pair_dir):
    net = SurroundNet(DESK_CONFIG, seed=0)
    for p in net.parameters():
        p.data[...] = 0
    save_model(tmp_path / "zero.srnd", net)
    code, _, err = run(capsys, "enhance", "--input", pair_dir / "low", "--checkpoint", tmp_path / "zero.srnd",
                       "--output", tmp_path / "out")
    assert code == EXIT_DATA and "all zero" in err


def test_enhance_reports_bad_files_and_continues(capsys, tmp_path, pair_dir, checkpoint):
    (pair_dir / "low" / "broken.png").write_bytes(b"junk")
    code, out, err = run(capsys, "enhance", "--input", pair_dir / "low", "--checkpoint", checkpoint,
                         "--output", tmp_path / "out")
    assert code == EXIT_DATA
    assert "broken.png" in err
    assert (tmp_path / "out" / "0.png").exists() and (tmp_path / "out" / "1.png").exists()


def test_enhance_missing_checkpoint(capsys, tmp_path, pair_dir):
    code, _, err = run(capsys, "enhance", "--input", pair_dir / "low", "--checkpoint", tmp_path / "no.srnd",
                       "--output", tmp_path / "out")
    assert code == EXIT_DATA and err.startswith("error: data")


# -- eval ------------------------------------------------------------------

def test_eval_identical_dirs(capsys, tmp_path, pair_dir):
    code, out, _ = run(capsys, "eval", "--pred", pair_dir / "high", "--target", pair_dir / "high",
                       "--report", tmp_path / "rep")
    assert code == EXIT_OK
    table = rows(out)
    assert table[0] == ["name", "psnr", "ssim"]
    assert table[-1] == ["mean", "100.0000", "1.0000"]
    assert (tmp_path / "rep" / "eval.tsv").read_text() == out
    assert (tmp_path / "rep" / "eval.png").stat().st_size > 0


def test_eval_mismatched_sets(capsys, tmp_path, pair_dir):
    (pair_dir / "high" / "1.png").unlink()
    code, _, _ = run(capsys, "eval", "--pred", pair_dir / "low", "--target", pair_dir / "high")
    assert code == EXIT_DATA


def test_eval_with_checkpoint(capsys, pair_dir, checkpoint):
    code, out, _ = run(capsys, "eval", "--checkpoint", checkpoint, "--data", pair_dir)
    assert code == EXIT_OK and len(rows(out)) == 4


def test_eval_needs_inputs(capsys):
    code, _, _ = run(capsys, "eval")
    assert code == EXIT_USAGE


# -- synth and fit ---------------------------------------------------------

def test_synth_procedural(capsys, tmp_path):
    code, out, _ = run(capsys, "synth", "--procedural", 3, "--size", 32, "--output", tmp_path / "s", "--seed", 4)
    assert code == EXIT_OK
    for sub in ("low", "high", "led_target"):
        assert len(list((tmp_path / "s" / sub).glob("*.png"))) == 3
    manifest = rows((tmp_path / "s" / "manifest.tsv").read_text())
    assert manifest[0] == ["name", "alpha", "beta", "gamma"] and len(manifest) == 4
    # the same seed reproduces the same set
    run(capsys, "synth", "--procedural", 3, "--size", 32, "--output", tmp_path / "t", "--seed", 4)
    assert (tmp_path / "t" / "manifest.tsv").read_text() == (tmp_path / "s" / "manifest.tsv").read_text()


def test_synth_needs_a_source(capsys, tmp_path):
    code, _, _ = run(capsys, "synth", "--output", tmp_path / "s")
    assert code == EXIT_USAGE


def test_fit_self_darkened_pair(capsys, tmp_path):
    high = procedural_scene(np.random.default_rng(1), 64, 64)
    truth = DarkeningParams(0.95, 0.7, 2.5)
    write_image(tmp_path / "high.png", high)
    write_image(tmp_path / "low.png", darken(high, truth))
    code, out, _ = run(capsys, "fit", "--low", tmp_path / "low.png", "--high", tmp_path / "high.png")
    assert code == EXIT_OK
    header, row = rows(out)
    got = dict(zip(header, row))
    assert float(got["gamma"]) == pytest.approx(2.5, abs=0.05)
    assert float(got["gain"]) == pytest.approx(truth.gain, rel=0.02)
    assert float(got["rms"]) < 0.005


def test_fit_dataset_writes_targets(capsys, pair_dir):
    code, out, _ = run(capsys, "fit", "--data", pair_dir)
    assert code == EXIT_OK and len(rows(out)) == 3
    assert len(list((pair_dir / "led_target").glob("*.png"))) == 2


def test_fit_dry_run_writes_nothing(capsys, pair_dir):
    code, _, _ = run(capsys, "fit", "--data", pair_dir, "--dry-run")
    assert code == EXIT_OK and not (pair_dir / "led_target").exists()


def test_fit_needs_pair(capsys, tmp_path):
    code, _, _ = run(capsys, "fit", "--low", tmp_path / "a.png")
    assert code == EXIT_USAGE


# -- train -----------------------------------------------------------------

def test_train_writes_run_directory(capsys, tmp_path, pair_dir):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"data_dir = {pair_dir}\nsteps = 5\nbatch_size = 4\n")
    code, out, _ = run(capsys, "train", "--config", cfg, "--out-dir", tmp_path / "run", "--patch-size", 16,
                       "--steps", 2, *TINY_NET)
    assert code == EXIT_OK
    table = dict(rows(out)[1:])
    assert table["steps"] == "2"
    run_dir = tmp_path / "run"
    for name in ("config.txt", "metrics.log", "checkpoint.srnd", "checkpoint.srnd.optim", "loss_curve.png",
                 "surrounds.png"):
        assert (run_dir / name).exists(), name
    assert "steps = 2" in (run_dir / "config.txt").read_text()


def test_train_bad_config_key(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("nonsense = 1\n")
    code, _, err = run(capsys, "train", "--config", cfg)
    assert code == EXIT_USAGE and "nonsense" in err


def test_train_nan_input_is_numeric_failure(capsys, tmp_path, pair_dir, monkeypatch):
    import importlib

    train_mod = importlib.import_module("surroundnet.train")

    real = train_mod.sample_batch

    def poisoned(*a, **kw):
        batch = real(*a, **kw)
        batch.low[...] = np.nan
        return batch

    monkeypatch.setattr(train_mod, "sample_batch", poisoned)
    code, _, err = run(capsys, "train", "--data-dir", pair_dir, "--out-dir", tmp_path / "run", "--patch-size", 16,
                       "--steps", 1, *TINY_NET)
    assert code == EXIT_NUMERIC and "non-finite" in err


# -- ssr and gradcheck -----------------------------------------------------

def test_ssr_sweep_outputs(capsys, tmp_path):
    write_image(tmp_path / "img.png", procedural_scene(np.random.default_rng(2), 48, 48))
    code, out, _ = run(capsys, "ssr", "--input", tmp_path / "img.png", "--sigma", 2, "--sigma", 8,
                       "--scales", "2,8", "--output", tmp_path / "o")
    assert code == EXIT_OK
    assert [r[0] for r in rows(out)[1:]] == ["ssr", "ssr", "msr"]
    assert len(list((tmp_path / "o").glob("img_*.png"))) == 4  # three outputs and the sweep figure
    assert (tmp_path / "o" / "kernel_profiles.png").exists()


def test_gradcheck_passes_on_small_net(capsys):
    code, out, _ = run(capsys, "gradcheck", *TINY_NET, "--samples", 30)
    assert code == EXIT_OK and rows(out)[1][-1] == "True"


def test_gradcheck_failure_exit_code(capsys):
    # an absurd tolerance cannot be met, so the command must report a numerical failure
    code, _, err = run(capsys, "gradcheck", *TINY_NET, "--samples", 10, "--tol", 1e-15)
    assert code == EXIT_NUMERIC and "gradient check failed" in err
