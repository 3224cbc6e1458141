"""Generator / critic builders for 1-channel and 64-channel epochs.

Layer widths follow the published tables at ``width_scale=1`` and shrink
proportionally (rounded up to a multiple of 4) for desk-scale runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np

from . import tensor as T
from .layers import (
    InitScheme,
    Kind,
    Layer,
    LayerConfig,
    WeightInit,
    build_layer,
    deconv_kernel_size,
)
from .tensor import ShapeError, Tensor

LATENT_DIM = 120
NOISE_SIGMA = 0.05
# kernel for untied deconvolution: stride + 1 leaves uneven overlap (checkerboard-prone)
PLAIN_DECONV_KERNEL = 3


class Variant(str, Enum):
    GEN_1CH = "Gen1ch"
    DISC_1CH = "Disc1ch"
    GEN_64CH = "Gen64ch"
    DISC_64CH = "Disc64ch"
    CC_GEN = "CCGen"
    CC_SHARED_TRUNK = "CCSharedTrunk"
    CC_DISC_BRANCH = "CCDiscBranch"
    CC_CLASS_BRANCH = "CCClassBranch"


class Scheme(str, Enum):
    DC_DC = "DC_DC"
    BC_BC = "BC_BC"
    NN_NN = "NN_NN"
    BC_DCBL = "BC_DCBL"
    DCBL_BC = "DCBL_BC"
    DCBL_DCBL = "DCBL_DCBL"

    @classmethod
    def parse(cls, text: str) -> "Scheme":
        key = text.strip().upper().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(
                f"unknown upsampling scheme {text!r}; choose from "
                + ", ".join(s.value.lower().replace("_", "-") for s in cls)
            ) from None

    @property
    def steps(self) -> tuple[str, str]:
        a, b = self.value.split("_")
        return a, b

    @property
    def label(self) -> str:
        return self.value.replace("_", "-")


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant = Variant.GEN_1CH
    width_scale: float = 1.0
    latent_dim: int = LATENT_DIM
    num_classes: int = 2
    upsample_scheme: Scheme = Scheme.BC_DCBL
    channels: int = 1  # EEG channels for the CC variants; implied by the others

    def __post_init__(self):
        if not (0 < self.width_scale <= 1):
            raise ValueError(f"width_scale must be in (0, 1], got {self.width_scale}")
        if self.latent_dim < 1 or self.num_classes < 2:
            raise ValueError("latent_dim must be >= 1 and num_classes >= 2")
        if self.eeg_channels not in (1, 64):
            raise ValueError(f"channels must be 1 or 64, got {self.eeg_channels}")

    @property
    def eeg_channels(self) -> int:
        if self.variant in (Variant.GEN_1CH, Variant.DISC_1CH):
            return 1
        if self.variant in (Variant.GEN_64CH, Variant.DISC_64CH):
            return 64
        return self.channels

    @property
    def class_conditioned(self) -> bool:
        return self.variant.value.startswith("CC")

    @property
    def sample_shape(self) -> tuple[int, int, int]:
        return (1, 1, 64) if self.eeg_channels == 1 else (1, 64, 64)

    def to_config(self) -> dict[str, str]:
        return {
            "variant": self.variant.value,
            "width_scale": repr(self.width_scale),
            "latent_dim": str(self.latent_dim),
            "num_classes": str(self.num_classes),
            "upsample_scheme": self.upsample_scheme.value,
            "channels": str(self.channels),
        }

    @classmethod
    def from_config(cls, cfg: dict[str, str]) -> "ModelSpec":
        known = {"variant", "width_scale", "latent_dim", "num_classes", "upsample_scheme", "channels"}
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown model-spec keys: {sorted(unknown)}")
        return cls(
            variant=Variant(cfg.get("variant", Variant.GEN_1CH.value)),
            width_scale=float(cfg.get("width_scale", 1.0)),
            latent_dim=int(cfg.get("latent_dim", LATENT_DIM)),
            num_classes=int(cfg.get("num_classes", 2)),
            upsample_scheme=Scheme.parse(cfg.get("upsample_scheme", "BC_DCBL")),
            channels=int(cfg.get("channels", 1)),
        )


def scaled(n: int, width_scale: float) -> int:
    if width_scale == 1:
        return n
    return max(4, 4 * math.ceil(n * width_scale / 4))


class ModelParams:
    """Named parameter tensors with disjoint named partitions."""

    def __init__(self):
        self.trainable: dict[str, Tensor] = {}
        self.buffers: dict[str, Tensor] = {}
        self.partitions: dict[str, list[str]] = {}

    def add_layers(self, partition: str, layers: Iterable[Layer]) -> None:
        names = self.partitions.setdefault(partition, [])
        for layer in layers:
            for key, t in layer.params.items():
                name = f"{layer.cfg.name}.{key}"
                if name in self.trainable:
                    raise ValueError(f"duplicate parameter {name}")
                self.trainable[name] = t
                names.append(name)
            for key, t in layer.buffers.items():
                self.buffers[f"{layer.cfg.name}.{key}"] = t

    def partition(self, name: str) -> dict[str, Tensor]:
        return {k: self.trainable[k] for k in self.partitions[name]}

    def count_trainable(self) -> int:
        return sum(t.size for t in self.trainable.values())

    def count_buffers(self) -> int:
        return sum(t.size for t in self.buffers.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: t.data.copy() for k, t in self.trainable.items()}
        out.update({k: t.data.copy() for k, t in self.buffers.items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = set(self.trainable) | set(self.buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))[:3]
            extra = sorted(set(state) - expected)[:3]
            raise ValueError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, value in state.items():
            t = self.trainable.get(name) or self.buffers[name]
            if tuple(value.shape) != t.shape:
                raise ValueError(f"{name}: shape {tuple(value.shape)} != {t.shape}")
            t.data = np.asarray(value, dtype=np.float64).copy()

    def zero_grad(self) -> None:
        for t in self.trainable.values():
            t.grad = None


class Stack:
    """Layers applied in order, built by shape propagation from ``in_shape``."""

    def __init__(self, configs: list[LayerConfig], in_shape: tuple[int, ...], rng):
        self.configs = configs
        self.layers: list[Layer] = []
        shape = tuple(in_shape)
        for cfg in configs:
            layer = build_layer(cfg, shape, rng)
            self.layers.append(layer)
            shape = layer.out_shape
        self.in_shape = tuple(in_shape)
        self.out_shape = shape

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(layer.cfg.kind.value, layer.out_shape) for layer in self.layers]

    def __call__(self, x: Tensor, train: bool, rng=None, labels=None) -> Tensor:
        if x.shape[1:] != self.in_shape:
            raise ShapeError("input", x.shape[1:], self.in_shape)
        for layer in self.layers:
            if layer.cfg.kind is Kind.CLASS_EMBEDDING:
                x = layer(x, train, rng, labels=labels)
            else:
                x = layer(x, train, rng)
        return x


# ------------------------------------------------------------------ layer lists


def _named(configs: list[LayerConfig], prefix: str) -> list[LayerConfig]:
    counts: dict[str, int] = {}
    out = []
    for cfg in configs:
        base = cfg.kind.value.lower()
        counts[base] = counts.get(base, 0) + 1
        out.append(cfg.with_name(f"{prefix}.{base}{counts[base]}"))
    return out


def _upsample_block(step: str, out_ch: int, in_ch: int, two_d: bool) -> list[LayerConfig]:
    stride = (2, 2) if two_d else (1, 2)
    if step in ("BC", "NN"):
        kind = Kind.UPSAMPLE_BICUBIC if step == "BC" else Kind.UPSAMPLE_NEAREST
        rows = [LayerConfig(kind, factor=stride)]
        if out_ch != in_ch:
            rows.append(LayerConfig(Kind.CONV2D, units=out_ch))
        return rows
    if step == "DCBL":
        k = tuple(deconv_kernel_size(s) for s in stride)
        pad = tuple((s - s % 2) // 2 for s in stride)
        return [
            LayerConfig(
                Kind.TRANSPOSED_CONV2D,
                units=out_ch,
                kernel=k,
                stride=stride,
                padding=pad,
                init=WeightInit(InitScheme.BILINEAR_DECONV),
            )
        ]
    if step == "DC":
        k = tuple(PLAIN_DECONV_KERNEL if s > 1 else 1 for s in stride)
        # (n-1)*2 - 2 + 3 + 1 = 2n
        pad = tuple(1 if s > 1 else 0 for s in stride)
        opad = tuple(1 if s > 1 else 0 for s in stride)
        return [
            LayerConfig(
                Kind.TRANSPOSED_CONV2D,
                units=out_ch,
                kernel=k,
                stride=stride,
                padding=pad,
                output_padding=opad,
            )
        ]
    raise ValueError(f"unknown upsampling step {step!r}")


def generator_configs(spec: ModelSpec) -> list[LayerConfig]:
    w = spec.width_scale
    two_d = spec.eeg_channels == 64
    c128, c64, fc1 = scaled(128, w), scaled(64, w), scaled(1024, w)
    grid = (18, 18) if two_d else (1, 16)
    kernel = (3, 3) if two_d else (1, 3)
    pad = (1, 1) if two_d else (0, 1)
    step1, step2 = spec.upsample_scheme.steps

    rows: list[LayerConfig] = []
    if spec.class_conditioned:
        rows.append(LayerConfig(Kind.CLASS_EMBEDDING, num_classes=spec.num_classes))
    rows += [
        LayerConfig(Kind.DENSE, units=fc1),
        LayerConfig(Kind.LEAKY_RELU),
        LayerConfig(Kind.DENSE, units=grid[0] * grid[1] * c128),
        LayerConfig(Kind.BATCH_NORM),
        LayerConfig(Kind.LEAKY_RELU),
        LayerConfig(Kind.RESHAPE, target=(c128, *grid)),
    ]
    rows += _upsample_block(step1, c128, c128, two_d)
    rows += [
        LayerConfig(Kind.BATCH_NORM),
        LayerConfig(Kind.LEAKY_RELU),
        LayerConfig(Kind.CONV2D, units=c64, kernel=kernel, padding=pad),
        LayerConfig(Kind.BATCH_NORM),
        LayerConfig(Kind.LEAKY_RELU),
    ]
    rows += _upsample_block(step2, c128, c64, two_d)
    if two_d:
        rows.append(LayerConfig(Kind.CENTER_CROP, target=(64, 64)))
    rows += [
        LayerConfig(Kind.BATCH_NORM),
        LayerConfig(Kind.LEAKY_RELU),
        LayerConfig(Kind.CONV2D, units=1, kernel=kernel, padding=pad),
    ]
    if two_d or spec.class_conditioned:
        rows.append(LayerConfig(Kind.ZERO_MEAN_NORMALIZE))
    return _named(rows, "gen")


def trunk_configs(spec: ModelSpec, prefix: str) -> list[LayerConfig]:
    w = spec.width_scale
    two_d = spec.eeg_channels == 64
    c64, c128, fc1 = scaled(64, w), scaled(128, w), scaled(1024, w)
    kernel = (3, 3) if two_d else (1, 3)
    pad = (1, 1) if two_d else (0, 1)
    down = (2, 2) if two_d else (1, 2)
    flat = c128 * (16 * 16 if two_d else 16)
    rows = [
        LayerConfig(Kind.GAUSSIAN_NOISE, sigma=NOISE_SIGMA),
        LayerConfig(Kind.CONV2D, units=c64, kernel=kernel, padding=pad),
        LayerConfig(Kind.LEAKY_RELU),
        LayerConfig(Kind.CONV2D, units=c128, kernel=kernel, stride=down, padding=pad),
        LayerConfig(Kind.LEAKY_RELU),
        LayerConfig(Kind.CONV2D, units=c128, kernel=kernel, stride=down, padding=pad),
        LayerConfig(Kind.LEAKY_RELU),
        LayerConfig(Kind.RESHAPE, target=(flat,)),
        LayerConfig(Kind.DENSE, units=fc1),
        LayerConfig(Kind.LEAKY_RELU),
    ]
    return _named(rows, prefix)


# ------------------------------------------------------------------ networks


def _rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


class Generator:
    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        self.stack = Stack(generator_configs(spec), (spec.latent_dim,), rng)
        self.params = ModelParams()
        self.params.add_layers("G", self.stack.layers)

    @property
    def configs(self) -> list[LayerConfig]:
        return self.stack.configs

    def __call__(self, z: Tensor, labels=None, train: bool = True, rng=None) -> Tensor:
        if self.spec.class_conditioned:
            if labels is None:
                raise ValueError("class-conditioned generator needs labels")
        elif labels is not None:
            raise ValueError("labels given to an unconditioned generator")
        return self.stack(z, train, rng, labels=labels)

    def sample(self, n: int, rng: np.random.Generator, labels=None, train: bool = False,
               batch_size: int = 256) -> np.ndarray:
        out = []
        with T.no_grad():
            for start in range(0, n, batch_size):
                b = min(batch_size, n - start)
                z = Tensor(rng.standard_normal((b, self.spec.latent_dim)))
                lab = None if labels is None else np.asarray(labels)[start : start + b]
                out.append(self(z, lab, train=train, rng=rng).data)
        return np.concatenate(out, axis=0)


class Critic:
    """Scores samples; the final dense layer has identity activation."""

    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        configs = trunk_configs(spec, "disc") + _named([LayerConfig(Kind.DENSE, units=1)], "disc.out")
        self.stack = Stack(configs, spec.sample_shape, rng)
        self.params = ModelParams()
        self.params.add_layers("D", self.stack.layers)

    @property
    def configs(self) -> list[LayerConfig]:
        return self.stack.configs

    def __call__(self, x: Tensor, train: bool = True, rng=None) -> Tensor:
        return self.stack(x, train, rng)


class CCCritic:
    """Shared trunk S with a critic branch D and a classifier branch C.

    The trunk output for the most recent input is cached, so asking for both
    the score and the class logits of one batch runs the trunk once.
    """

    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        self.trunk = Stack(trunk_configs(spec, "shared"), spec.sample_shape, rng)
        feat = self.trunk.out_shape
        self.d_head = Stack(_named([LayerConfig(Kind.DENSE, units=1)], "dbranch"), feat, rng)
        self.c_head = Stack(
            _named([LayerConfig(Kind.SOFTMAX_HEAD, units=spec.num_classes)], "cbranch"), feat, rng
        )
        self.params = ModelParams()
        self.params.add_layers("S", self.trunk.layers)
        self.params.add_layers("D", self.d_head.layers)
        self.params.add_layers("C", self.c_head.layers)
        self.trunk_evals = 0
        self._cache: tuple | None = None

    @property
    def configs(self) -> list[LayerConfig]:
        return self.trunk.configs + self.d_head.configs + self.c_head.configs

    def _trunk_key(self):
        return tuple(t.data for t in self.params.partition("S").values())

    def features(self, x: Tensor, train: bool = True, rng=None) -> Tensor:
        key = self._trunk_key()
        if self._cache is not None:
            cx, ctrain, ckey, feat = self._cache
            if cx is x and ctrain == train and all(a is b for a, b in zip(ckey, key)):
                return feat
        feat = self.trunk(x, train, rng)
        self.trunk_evals += 1
        self._cache = (x, train, key, feat)
        return feat

    def clear_cache(self) -> None:
        self._cache = None

    def disc_forward(self, x: Tensor, train: bool = True, rng=None) -> Tensor:
        return self.d_head(self.features(x, train, rng), train, rng)

    def class_forward(self, x: Tensor, train: bool = True, rng=None) -> Tensor:
        return self.c_head(self.features(x, train, rng), train, rng)

    def __call__(self, x: Tensor, train: bool = True, rng=None) -> Tensor:
        return self.disc_forward(x, train, rng)


def build_generator(spec: ModelSpec, seed=0) -> Generator:
    if spec.variant not in (Variant.GEN_1CH, Variant.GEN_64CH, Variant.CC_GEN):
        raise ValueError(f"{spec.variant.value} is not a generator variant")
    return Generator(spec, _rng(seed))


def build_discriminator(spec: ModelSpec, seed=0) -> Critic:
    if spec.variant not in (Variant.DISC_1CH, Variant.DISC_64CH):
        raise ValueError(f"{spec.variant.value} is not a discriminator variant")
    return Critic(spec, _rng(seed))


def build_cc_model(spec: ModelSpec, seed=0) -> CCCritic:
    if spec.variant not in (Variant.CC_SHARED_TRUNK, Variant.CC_DISC_BRANCH, Variant.CC_CLASS_BRANCH):
        raise ValueError(f"{spec.variant.value} is not a discriminator/classifier variant")
    return CCCritic(spec, _rng(seed))


@dataclass
class ModelPair:
    """Generator plus matching critic, built from one spec."""

    generator: Generator
    critic: Critic | CCCritic
    spec: ModelSpec = field(repr=False, default=None)  # generator-side spec


def build_pair(
    width_scale: float,
    scheme: Scheme = Scheme.BC_DCBL,
    channels: int = 1,
    class_conditioned: bool = False,
    num_classes: int = 2,
    latent_dim: int = LATENT_DIM,
    seed: int = 0,
) -> ModelPair:
    rng = np.random.default_rng(seed)
    common = dict(width_scale=width_scale, latent_dim=latent_dim, num_classes=num_classes,
                  upsample_scheme=scheme, channels=channels)
    if class_conditioned:
        gspec = ModelSpec(variant=Variant.CC_GEN, **common)
        critic = CCCritic(ModelSpec(variant=Variant.CC_SHARED_TRUNK, **common), rng)
    else:
        gvar = Variant.GEN_1CH if channels == 1 else Variant.GEN_64CH
        dvar = Variant.DISC_1CH if channels == 1 else Variant.DISC_64CH
        gspec = ModelSpec(variant=gvar, **common)
        critic = Critic(ModelSpec(variant=dvar, **common), rng)
    return ModelPair(Generator(gspec, rng), critic, gspec)
