import numpy as np
import pytest

from surroundnet import autodiff as ad
from surroundnet.autodiff import DomainError, gradient_check
from surroundnet.model import (ASF_SIZES, DESK_CONFIG, ECA, LED, RDB, ARBlock, NetConfig, SurroundNet,
                               config_from_state, param_breakdown, param_count)


def zero_params(named):
    for _, p in named:
        p.data = np.zeros_like(p.data)


def conv_params(cin, cout, k):
    return cin * cout * k * k + cout


def expected_count(cfg: NetConfig) -> int:
    """Independent tally of the architecture's trainable scalars."""
    f, g, n_layers, c = cfg.led_features, cfg.growth, cfg.rdb_layers, cfg.channels
    rdb = sum(conv_params(f + i * g, g, 3) for i in range(n_layers)) + conv_params(f + n_layers * g, f, 1)
    led = conv_params(3, f, 5) + 2 * rdb + conv_params(f, 3, 5)
    if cfg.block == "arblock":
        blocks = sum(k + 3 * conv_params(c, c, 3) + conv_params(2 * c, c, 1) for k in cfg.asf_sizes)
    else:
        blocks = cfg.num_blocks * 3 * conv_params(c, c, 3)
    eca = 2 * cfg.eca_kernel if cfg.use_eca else 0
    return led + conv_params(3, c, 3) + blocks + eca + conv_params((cfg.num_blocks + 1) * c, 3, 3)


def test_default_param_count():
    net = SurroundNet()
    assert param_count(net) == expected_count(NetConfig()) == 144_748
    assert param_count(net) < 150_000


def test_breakdown_sums_to_total():
    net = SurroundNet()
    parts = param_breakdown(net)
    assert sum(parts.values()) == param_count(net)
    assert parts["eca"] == 18
    assert parts["led"] == 20_179


def test_asf_parameters_total_36():
    net = SurroundNet()
    asf = [p.size for name, p in net.named_parameters() if name.endswith(".asf")]
    assert asf == list(ASF_SIZES) and sum(asf) == 36


@pytest.mark.parametrize("cfg", [
    NetConfig(use_eca=False),
    NetConfig().with_blocks(1),
    NetConfig().with_blocks(3),
    NetConfig(block="plain"),
    DESK_CONFIG,
])
def test_ablation_counts(cfg):
    assert param_count(SurroundNet(cfg)) == expected_count(cfg)


def test_eca_adds_exactly_18():
    assert param_count(SurroundNet(NetConfig())) - param_count(SurroundNet(NetConfig(use_eca=False))) == 18


@pytest.mark.parametrize("h,w", [(32, 32), (33, 47), (40, 29)])
def test_output_shape_preserved(h, w):
    net = SurroundNet(DESK_CONFIG)
    img = ad.tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, h, w)))
    with ad.no_grad():
        out, led = net(img)
    assert out.shape == led.shape == (1, 3, h, w)
    assert out.data.min() >= 0 and out.data.max() <= 1


def test_led_zero_weights_is_identity():
    rng = np.random.default_rng(0)
    led = LED(8, 2, 4, rng)
    zero_params(led.named_parameters("led"))
    img = rng.uniform(0, 1, (1, 3, 13, 17)).astype(np.float32)
    np.testing.assert_array_equal(led(ad.tensor(img)).data, img)


def test_rdb_zero_weights_is_identity():
    rng = np.random.default_rng(0)
    rdb = RDB(6, 3, 4, rng)
    zero_params(rdb.named_parameters("r"))
    x = rng.normal(size=(2, 6, 5, 5)).astype(np.float32)
    np.testing.assert_array_equal(rdb(ad.tensor(x)).data, x)


def test_rdb_gradient_through_dense_concatenation():
    rng = np.random.default_rng(1)
    rdb = RDB(4, 3, 3, rng)
    x = ad.tensor(rng.normal(size=(1, 4, 6, 6)), requires_grad=True)
    g = ad.tensor(rng.normal(size=(1, 4, 6, 6)))
    params = [p for _, p in rdb.named_parameters("r")]
    rep = gradient_check(lambda *_: ad.sum(rdb(x) * g), [x] + params, n_samples=150, eps=1e-7)
    assert rep.passed, rep


def test_arblock_zero_fusion_gives_zeros():
    rng = np.random.default_rng(2)
    block = ARBlock(4, 5, rng)
    zero_params(block.fusion_conv.named_parameters("f"))
    out = block(ad.tensor(rng.uniform(0, 1, (1, 4, 12, 12))))
    assert not np.any(out.data)


def test_arblock_constant_input_has_zero_interior_reflectance():
    block = ARBlock(3, 4, np.random.default_rng(3))
    parts = block.parts(ad.tensor(np.full((1, 3, 16, 16), 0.6)))
    np.testing.assert_allclose(parts["refl"].data[:, :, 3:-3, 3:-3], 0.0, atol=1e-6)


def test_arblock_decomposition_identity():
    rng = np.random.default_rng(4)
    block = ARBlock(3, 7, rng)
    parts = block.parts(ad.tensor(rng.uniform(0, 2, (2, 3, 15, 15))))
    log64 = parts["illum"].data.astype(np.float64) + parts["refl"].data.astype(np.float64)
    # refl is computed as log - illum in float32, so the sum is exact up to that single rounding
    np.testing.assert_allclose(log64, parts["log"].data, rtol=0, atol=np.spacing(np.float32(2.0)))


def test_arblock_rejects_negative_features():
    block = ARBlock(2, 3, np.random.default_rng(0))
    with pytest.raises(DomainError):
        block(ad.tensor(-np.ones((1, 2, 8, 8))))


def test_eca_zero_kernels_halve_features():
    rng = np.random.default_rng(5)
    eca = ECA(9, rng)
    zero_params(eca.named_parameters("e"))
    feat = rng.uniform(0, 1, (2, 12, 5, 6)).astype(np.float32)
    assert np.all(eca.gates(ad.tensor(feat)).data == 0.5)
    np.testing.assert_array_equal(eca(ad.tensor(feat)).data, 0.5 * feat)


def test_eca_gradient():
    rng = np.random.default_rng(6)
    eca = ECA(9, rng)
    x = ad.tensor(rng.uniform(0, 1, (2, 12, 4, 4)), requires_grad=True)
    g = ad.tensor(rng.normal(size=(2, 12, 4, 4)))
    rep = gradient_check(lambda *_: ad.sum(eca(x) * g), [x, eca.conv_a, eca.conv_b], n_samples=120)
    assert rep.passed, rep


def test_full_network_gradient():
    net = SurroundNet(DESK_CONFIG, seed=3)
    rng = np.random.default_rng(7)
    img = ad.tensor(rng.uniform(0, 0.5, (1, 3, 32, 32)))
    g = ad.tensor(rng.normal(size=(1, 3, 32, 32)))

    def loss(*_):
        out, led = net(img, clamp=False)
        return ad.mean(out * g) + ad.mean(led * led)

    # a step of 1e-3 straddles ReLU kinks somewhere among ~10^4 pre-activations;
    # the double-precision difference side allows a much smaller step
    rep = gradient_check(loss, [img] + net.parameters(), n_samples=150, eps=1e-7)
    assert rep.passed, rep


def test_state_dict_round_trip():
    net = SurroundNet(NetConfig(block="plain", use_eca=False).with_blocks(2), seed=4)
    clone = SurroundNet.from_state_dict(net.state_dict())
    assert clone.config == net.config
    img = ad.tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 32, 32)))
    with ad.no_grad():
        np.testing.assert_array_equal(net(img)[0].data, clone(img)[0].data)


def test_config_from_state_recovers_widths():
    cfg = NetConfig(channels=6, led_features=5, rdb_layers=2, growth=3).with_blocks(3)
    assert config_from_state(SurroundNet(cfg).state_dict()) == cfg


def test_load_state_dict_rejects_mismatch():
    net = SurroundNet(DESK_CONFIG)
    state = dict(net.state_dict())
    state.pop("eca.conv_a")
    with pytest.raises(KeyError):
        net.load_state_dict(state)


def test_seeded_init_is_deterministic():
    a, b = SurroundNet(DESK_CONFIG, seed=11), SurroundNet(DESK_CONFIG, seed=11)
    for (_, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(p.data, q.data)
