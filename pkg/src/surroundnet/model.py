"""SurroundNet: denoiser, shallow features, parallel Retinex blocks, channel gating.

Data flow for an (N, 3, H, W) image in [0, 1]::

    led_out  = LED(img)                         # denoised dark image
    s        = relu(shallow(led_out))           # C channels
    b_i      = block_i(s)            i = 1..n   # parallel branches
    fused    = ECA(concat(s, b_1, ..., b_n))    # (n + 1) C channels
    enhanced = clamp(out(fused), 0, 1)

All convolutions run at stride 1 with "same" padding, so spatial size is
preserved.  No normalization layers are used.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .retinex import apply_separable, build_asf_1d, init_asf

ASF_SIZES = (3, 7, 11, 15)


@dataclass(frozen=True)
class NetConfig:
    channels: int = 32
    led_features: int = 16
    rdb_layers: int = 4
    growth: int = 8
    asf_sizes: tuple = ASF_SIZES
    use_eca: bool = True
    eca_kernel: int = 9
    block: str = "arblock"  # or "plain": three 3x3 conv+ReLU per branch

    def __post_init__(self):
        if self.block not in ("arblock", "plain"):
            raise ValueError(f"block must be 'arblock' or 'plain', got {self.block!r}")
        if not 1 <= len(self.asf_sizes):
            raise ValueError("at least one block is required")
        if min(self.channels, self.led_features, self.rdb_layers, self.growth) < 1:
            raise ValueError("widths must be positive")

    @property
    def num_blocks(self) -> int:
        return len(self.asf_sizes)

    @property
    def receptive_field(self) -> int:
        return 2 * max(self.asf_sizes) - 1

    def with_blocks(self, n: int) -> "NetConfig":
        """Ablation: keep the first ``n`` blocks of the default size ladder."""
        if not 1 <= n <= len(ASF_SIZES):
            raise ValueError(f"block count must be in 1..{len(ASF_SIZES)}, got {n}")
        return replace(self, asf_sizes=ASF_SIZES[:n])


DESK_CONFIG = NetConfig(channels=8, led_features=8, rdb_layers=3, growth=4)


class Conv2d:
    """Conv layer with uniform(+-1/sqrt(fan_in)) initialization."""

    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator,
                 dilation: int = 1, bias: bool = True):
        bound = 1.0 / np.sqrt(cin * kernel * kernel)
        self.weight = ad.tensor(rng.uniform(-bound, bound, (cout, cin, kernel, kernel)), requires_grad=True)
        self.bias = ad.tensor(rng.uniform(-bound, bound, cout), requires_grad=True) if bias else None
        self.dilation = dilation
        self.padding = dilation * (kernel - 1) // 2

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, padding=self.padding, dilation=self.dilation)

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias


class RDB:
    """Residual dense block: dense 3x3 layers, 1x1 local fusion, local residual."""

    def __init__(self, features: int, layers: int, growth: int, rng: np.random.Generator):
        self.features = features
        self.layers = [Conv2d(features + i * growth, growth, 3, rng) for i in range(layers)]
        self.fusion = Conv2d(features + layers * growth, features, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.features:
            raise ad.ShapeError("rdb", x.shape, (None, self.features))
        feats = [x]
        for conv in self.layers:
            feats.append(ad.relu(conv(ad.concat(feats, axis=1))))
        return self.fusion(ad.concat(feats, axis=1)) + x

    def named_parameters(self, prefix: str):
        for i, conv in enumerate(self.layers):
            yield from conv.named_parameters(f"{prefix}.layers.{i}")
        yield from self.fusion.named_parameters(f"{prefix}.fusion")


class LED:
    """Low-exposure denoiser: 5x5 head, two RDBs, 5x5 tail, global residual."""

    def __init__(self, features: int, layers: int, growth: int, rng: np.random.Generator):
        self.head = Conv2d(3, features, 5, rng)
        self.rdb1 = RDB(features, layers, growth, rng)
        self.rdb2 = RDB(features, layers, growth, rng)
        self.tail = Conv2d(features, 3, 5, rng)

    def __call__(self, img: Tensor) -> Tensor:
        return self.tail(self.rdb2(self.rdb1(ad.relu(self.head(img))))) + img

    def named_parameters(self, prefix: str):
        yield from self.head.named_parameters(f"{prefix}.head")
        yield from self.rdb1.named_parameters(f"{prefix}.rdb1")
        yield from self.rdb2.named_parameters(f"{prefix}.rdb2")
        yield from self.tail.named_parameters(f"{prefix}.tail")


class ARBlock:
    """Retinex split in feature space with a learned surround."""

    def __init__(self, channels: int, asf_size: int, rng: np.random.Generator):
        self.asf = init_asf(asf_size)
        self.illum_conv = Conv2d(channels, channels, 3, rng)
        self.refl_conv1 = Conv2d(channels, channels, 3, rng, dilation=2)
        self.refl_conv2 = Conv2d(channels, channels, 3, rng, dilation=2)
        self.fusion_conv = Conv2d(2 * channels, channels, 1, rng)

    def parts(self, feat: Tensor) -> dict[str, Tensor]:
        """Intermediate maps: log input, illumination, reflectance, both enhanced maps, output."""
        if np.any(feat.data < 0):
            raise ad.DomainError("ARBlock input must be non-negative")
        x_log = ad.log1p(feat)
        illum = apply_separable(x_log, build_asf_1d(self.asf))
        refl = x_log - illum
        ei = ad.relu(self.illum_conv(illum))
        er = ad.relu(self.refl_conv2(ad.relu(self.refl_conv1(refl))))
        nl = self.fusion_conv(ad.concat([ei, er], axis=1))
        return {"log": x_log, "illum": illum, "refl": refl, "ei": ei, "er": er, "out": nl}

    def __call__(self, feat: Tensor) -> Tensor:
        return self.parts(feat)["out"]

    def named_parameters(self, prefix: str):
        yield f"{prefix}.asf", self.asf
        yield from self.illum_conv.named_parameters(f"{prefix}.illum_conv")
        yield from self.refl_conv1.named_parameters(f"{prefix}.refl_conv1")
        yield from self.refl_conv2.named_parameters(f"{prefix}.refl_conv2")
        yield from self.fusion_conv.named_parameters(f"{prefix}.fusion_conv")


class PlainBlock:
    """Ablation stand-in for an ARBlock: three 3x3 conv + ReLU."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.convs = [Conv2d(channels, channels, 3, rng) for _ in range(3)]

    def __call__(self, feat: Tensor) -> Tensor:
        for conv in self.convs:
            feat = ad.relu(conv(feat))
        return feat

    def named_parameters(self, prefix: str):
        for i, conv in enumerate(self.convs):
            yield from conv.named_parameters(f"{prefix}.convs.{i}")


class ECA:
    """Channel gating: sigmoid of two bias-free 1-D convolutions over pooled channels."""

    def __init__(self, kernel: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(kernel)
        self.conv_a = ad.tensor(rng.uniform(-bound, bound, kernel), requires_grad=True)
        self.conv_b = ad.tensor(rng.uniform(-bound, bound, kernel), requires_grad=True)

    def gates(self, feat: Tensor) -> Tensor:
        g = ad.global_avg_pool(feat)
        return ad.sigmoid(ad.conv1d(ad.conv1d(g, self.conv_a), self.conv_b))

    def __call__(self, feat: Tensor) -> Tensor:
        n, c = feat.shape[:2]
        w = ad.reshape(self.gates(feat), (n, c, 1, 1))
        return feat * ad.broadcast_to(w, feat.shape)

    def named_parameters(self, prefix: str):
        yield f"{prefix}.conv_a", self.conv_a
        yield f"{prefix}.conv_b", self.conv_b


class SurroundNet:
    def __init__(self, config: NetConfig = NetConfig(), seed: int = 0):
        rng = np.random.default_rng(seed)
        c = config.channels
        self.config = config
        self.led = LED(config.led_features, config.rdb_layers, config.growth, rng)
        self.shallow = Conv2d(3, c, 3, rng)
        if config.block == "arblock":
            self.blocks = [ARBlock(c, k, rng) for k in config.asf_sizes]
        else:
            self.blocks = [PlainBlock(c, rng) for _ in config.asf_sizes]
        self.eca = ECA(config.eca_kernel, rng) if config.use_eca else None
        self.out = Conv2d((config.num_blocks + 1) * c, 3, 3, rng)

    def __call__(self, img: Tensor, clamp: bool = True) -> tuple[Tensor, Tensor]:
        """Return ``(enhanced, led_out)``; pass ``clamp=False`` for training losses."""
        if img.ndim != 4 or img.shape[1] != 3:
            raise ad.ShapeError("surroundnet input", img.shape, ("N", 3, "H", "W"))
        led_out = self.led(img)
        s = ad.relu(self.shallow(led_out))
        fused = ad.concat([s] + [block(s) for block in self.blocks], axis=1)
        if self.eca is not None:
            fused = self.eca(fused)
        enhanced = self.out(fused)
        if clamp:
            enhanced = ad.clamp(enhanced, 0.0, 1.0)
        return enhanced, led_out

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        items = list(self.led.named_parameters("led"))
        items += self.shallow.named_parameters("shallow")
        for i, block in enumerate(self.blocks):
            items += block.named_parameters(f"blocks.{i}")
        if self.eca is not None:
            items += self.eca.named_parameters("eca")
        items += self.out.named_parameters("out")
        return items

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ad.ShapeError(f"load {name}", arr.shape, p.shape)
            p.data = arr.astype(p.dtype, copy=True)

    @classmethod
    def from_state_dict(cls, state: dict[str, np.ndarray]) -> "SurroundNet":
        net = cls(config_from_state(state))
        net.load_state_dict(state)
        return net


def config_from_state(state: dict[str, np.ndarray]) -> NetConfig:
    """Recover the architecture from parameter names and shapes."""
    try:
        channels = state["shallow.weight"].shape[0]
        led_features = state["led.head.weight"].shape[0]
        growth = state["led.rdb1.layers.0.weight"].shape[0]
    except KeyError as exc:
        raise KeyError(f"not a SurroundNet state: missing {exc}") from None
    rdb_layers = len({k.split(".")[3] for k in state if k.startswith("led.rdb1.layers.")})
    block_ids = sorted({int(k.split(".")[1]) for k in state if k.startswith("blocks.")})
    plain = any(".convs." in k for k in state if k.startswith("blocks."))
    if plain:
        sizes = ASF_SIZES[:len(block_ids)] if len(block_ids) <= len(ASF_SIZES) else (3,) * len(block_ids)
    else:
        sizes = tuple(int(state[f"blocks.{i}.asf"].shape[0]) for i in block_ids)
    use_eca = "eca.conv_a" in state
    eca_kernel = int(state["eca.conv_a"].shape[0]) if use_eca else 9
    return NetConfig(channels=channels, led_features=led_features, rdb_layers=rdb_layers,
                     growth=growth, asf_sizes=sizes, use_eca=use_eca, eca_kernel=eca_kernel,
                     block="plain" if plain else "arblock")


def param_count(net) -> int:
    """Number of trainable scalars, biases and ASF vectors included."""
    return int(sum(p.size for _, p in net.named_parameters()))


def param_breakdown(net: SurroundNet) -> dict[str, int]:
    """Parameter counts per top-level component (led, shallow, blocks.i, eca, out)."""
    out: dict[str, int] = {}
    for name, p in net.named_parameters():
        parts = name.split(".")
        key = ".".join(parts[:2]) if parts[0] == "blocks" else parts[0]
        out[key] = out.get(key, 0) + p.size
    return out
