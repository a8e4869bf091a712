import logging

import numpy as np
import pytest
from PIL import Image
from scipy.stats import chi2

from surroundnet.data import (DataError, PairedDataset, load_pairs, read_image, sample_batch, sample_windows,
                              to_uint8, write_image)


def make_dataset(sizes, seed=0):
    rng = np.random.default_rng(seed)
    imgs = [rng.uniform(0, 1, (3, h, w)).astype(np.float32) for h, w in sizes]
    names = [f"{i}.png" for i in range(len(sizes))]
    return PairedDataset(names, imgs, [i * 2 for i in imgs], [i * 3 for i in imgs])


def test_write_read_round_trip(tmp_path):
    img = np.random.default_rng(0).uniform(0, 1, (3, 7, 9)).astype(np.float32)
    write_image(tmp_path / "a.png", img)
    back = read_image(tmp_path / "a.png")
    assert back.shape == (3, 7, 9)
    np.testing.assert_array_equal(back, to_uint8(img).transpose(2, 0, 1) / np.float32(255))


def test_to_uint8_rounds_and_clamps():
    out = to_uint8(np.array([-0.2, 0.0, 0.5, 1 / 255 * 0.49, 1.3]).reshape(1, 1, 5).repeat(3, axis=0))
    assert out[0, :, 0].tolist() == [0, 0, 128, 0, 255]


def test_grayscale_is_expanded(tmp_path):
    Image.fromarray(np.full((4, 5), 200, np.uint8), mode="L").save(tmp_path / "g.png")
    img = read_image(tmp_path / "g.png")
    assert img.shape == (3, 4, 5) and np.all(img == np.float32(200 / 255))


def test_sixteen_bit_rejected(tmp_path):
    Image.fromarray(np.full((4, 4), 1000, np.uint16)).save(tmp_path / "d.png")
    with pytest.raises(DataError):
        read_image(tmp_path / "d.png")


def test_unreadable_file(tmp_path):
    (tmp_path / "x.png").write_bytes(b"not an image")
    with pytest.raises(DataError):
        read_image(tmp_path / "x.png")


def test_load_pairs_layout(tmp_path):
    img = np.zeros((3, 4, 4), np.float32)
    for sub in ("low", "high"):
        write_image(tmp_path / sub / "a.png", img)
        write_image(tmp_path / sub / "b.png", img)
    data = load_pairs(tmp_path)
    assert data.names == ["a.png", "b.png"] and not data.led
    write_image(tmp_path / "high" / "c.png", img)
    with pytest.raises(DataError):
        load_pairs(tmp_path)


def test_load_pairs_requires_led_when_asked(tmp_path):
    img = np.zeros((3, 4, 4), np.float32)
    for sub in ("low", "high"):
        write_image(tmp_path / sub / "a.png", img)
    with pytest.raises(DataError):
        load_pairs(tmp_path, require_led=True)


def test_mismatched_pair_shapes():
    with pytest.raises(DataError):
        PairedDataset(["a"], [np.zeros((3, 4, 4))], [np.zeros((3, 4, 5))])


def test_undersized_images_are_skipped_with_warning(caplog):
    data = make_dataset([(40, 40), (20, 50), (32, 32)])
    with caplog.at_level(logging.WARNING):
        kept = data.drop_smaller_than(32)
    assert kept.names == ["0.png", "2.png"]
    assert "1.png" in caplog.text


def test_same_seed_and_step_same_batch():
    data = make_dataset([(40, 40), (50, 45)])
    a, b = sample_batch(data, 3, 17, 4, 32), sample_batch(data, 3, 17, 4, 32)
    np.testing.assert_array_equal(a.low, b.low)
    assert a.windows == b.windows
    assert sample_batch(data, 3, 18, 4, 32).windows != a.windows


def test_crops_share_one_window():
    data = make_dataset([(40, 44)])
    batch = sample_batch(data, 0, 0, 6, 32)
    np.testing.assert_array_equal(batch.high, batch.low * 2)
    np.testing.assert_array_equal(batch.led, batch.low * 3)
    for k, (i, t, l) in enumerate(batch.windows):
        np.testing.assert_array_equal(batch.low[k], data.low[i][:, t:t + 32, l:l + 32])


def test_windows_uniform_over_valid_offsets():
    rng = np.random.default_rng(12345)
    h, w, p = 20, 21, 16  # 5 x 6 valid offsets
    wins = sample_windows([(h, w)], rng, 10_000, p)
    counts = np.zeros((h - p + 1, w - p + 1))
    for _, t, l in wins:
        counts[t, l] += 1
    expected = 10_000 / counts.size
    stat = float(((counts - expected) ** 2 / expected).sum())
    assert chi2.sf(stat, counts.size - 1) > 0.01
