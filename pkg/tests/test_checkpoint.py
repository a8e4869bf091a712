import struct

import numpy as np
import pytest

from surroundnet import autodiff as ad
from surroundnet.checkpoint import (CheckpointError, load_model, load_tensors, optimizer_path, save_model,
                                    save_tensors)
from surroundnet.model import DESK_CONFIG, SurroundNet, param_count


def test_round_trip_preserves_names_order_and_values(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"b.weight": rng.normal(size=(2, 3, 1, 4)).astype(np.float32),
               "a": np.float32([1.5]), "scalar": np.array(2.0, np.float32)}
    save_tensors(tmp_path / "t.srnd", tensors)
    back = load_tensors(tmp_path / "t.srnd")
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        np.testing.assert_array_equal(back[k], tensors[k])


def test_byte_layout(tmp_path):
    save_tensors(tmp_path / "t.srnd", {"ab": np.float32([[1.0, 2.0]])})
    raw = (tmp_path / "t.srnd").read_bytes()
    expected = (b"SRND" + bytes([1]) + struct.pack("<I", 1) + struct.pack("<H", 2) + b"ab"
                + bytes([2]) + struct.pack("<II", 1, 2) + struct.pack("<ff", 1.0, 2.0))
    assert raw == expected


@pytest.mark.parametrize("mutate", [
    lambda raw: b"XXXX" + raw[4:],
    lambda raw: raw[:4] + bytes([2]) + raw[5:],
    lambda raw: raw[:-3],
    lambda raw: raw + b"\0",
])
def test_corrupt_files_rejected(tmp_path, mutate):
    path = tmp_path / "t.srnd"
    save_tensors(path, {"w": np.ones((3, 3), np.float32)})
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(CheckpointError):
        load_tensors(path)


def test_model_round_trip_is_bitwise(tmp_path):
    net = SurroundNet(DESK_CONFIG, seed=5)
    save_model(tmp_path / "m.srnd", net)
    clone = load_model(tmp_path / "m.srnd")
    assert param_count(clone) == param_count(net)
    img = ad.tensor(np.random.default_rng(1).uniform(0, 1, (1, 3, 32, 32)))
    with ad.no_grad():
        a, la = net(img)
        b, lb = clone(img)
    assert np.array_equal(a.data, b.data) and np.array_equal(la.data, lb.data)


def test_optimizer_sibling_path(tmp_path):
    assert optimizer_path(tmp_path / "run" / "c.srnd").name == "c.srnd.optim"


def test_save_is_atomic(tmp_path):
    path = tmp_path / "t.srnd"
    save_tensors(path, {"w": np.ones(2, np.float32)})
    assert not (tmp_path / "t.srnd.tmp").exists()
