"""Layer vocabulary for the generator and critic stacks.

Functional ops come first; :class:`LayerConfig` plus :func:`build_layer`
turn a declarative row into a callable holding its own parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from . import tensor as T
from .conv import conv2d, transposed_conv2d
from .tensor import ShapeError, Tensor

LEAKY_SLOPE = 0.2
BN_MOMENTUM = 0.99
BN_EPS = 1e-5
CUBIC_A = -0.5


# ------------------------------------------------------------ upsampling math


def deconv_kernel_size(stride: int) -> int:
    """Kernel size that makes a strided deconvolution interpolate linearly."""
    if int(stride) != stride or stride < 1:
        raise ValueError(f"stride must be a positive integer, got {stride}")
    return 2 * stride - stride % 2


def bilinear_init_weights(stride: int) -> np.ndarray:
    """Triangular 1-D kernel: weight ``1 - |d| / stride`` at offset d from the centre."""
    size = deconv_kernel_size(stride)
    center = (size - 1) / 2.0
    offsets = np.abs(np.arange(size) - center)
    return 1.0 - offsets / stride


def bilinear_deconv_kernel(
    in_channels: int, out_channels: int, stride: Sequence[int]
) -> np.ndarray:
    """[C_in, C_out, kh, kw] kernel; output channel o interpolates input channel o % C_in."""
    kh = bilinear_init_weights(stride[0])
    kw = bilinear_init_weights(stride[1])
    k2 = np.outer(kh, kw)
    w = np.zeros((in_channels, out_channels) + k2.shape)
    for o in range(out_channels):
        w[o % in_channels, o] = k2
    return w


def cubic_weight(d: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    d = np.abs(d)
    near = ((a + 2) * d - (a + 3)) * d * d + 1
    far = ((a * d - 5 * a) * d + 8 * a) * d - 4 * a
    return np.where(d <= 1, near, np.where(d < 2, far, 0.0))


def interpolation_matrix(n: int, factor: int, method: str) -> np.ndarray:
    """(n*factor, n) matrix for half-pixel-aligned interpolation with edge clamping."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"upsampling factor must be an integer >= 1, got {factor}")
    out = np.arange(n * factor)
    m = np.zeros((n * factor, n))
    if method == "nearest":
        m[out, out // factor] = 1.0
        return m
    if method != "bicubic":
        raise ValueError(f"unknown interpolation method {method!r}")
    src = (out + 0.5) / factor - 0.5
    base = np.floor(src).astype(int)
    frac = src - base
    for tap in range(-1, 3):
        w = cubic_weight(frac - tap)
        idx = np.clip(base + tap, 0, n - 1)
        np.add.at(m, (out, idx), w)
    return m


def upsample_interpolate(
    x: Tensor, factor, method: str, axes: Sequence[int] = (-1,)
) -> Tensor:
    factors = factor if isinstance(factor, (tuple, list)) else (factor,) * len(axes)
    for ax, f in zip(axes, factors):
        if f == 1:
            continue
        x = T.linear_along_axis(x, interpolation_matrix(x.shape[ax], f, method), ax)
    return x


# ------------------------------------------------------------ functional layers


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    mask = np.where(x.data > 0, 1.0, slope)
    return T.mul(x, Tensor(mask))


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias along axis 1."""
    shape = [1] * x.ndim
    shape[1] = b.shape[0]
    return T.add(x, T.expand(T.reshape(b, shape), x.shape))


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = T.matmul(x, w)
    return y if b is None else add_channel_bias(y, b)


def gaussian_noise(
    x: Tensor, sigma: float, train: bool, rng: np.random.Generator | None
) -> Tensor:
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    if not train or sigma == 0:
        return x
    return T.add(x, Tensor(rng.normal(0.0, sigma, size=x.shape)))


def center_crop(x: Tensor, target_h: int, target_w: int) -> Tensor:
    h, w = x.shape[-2:]
    if target_h > h or target_w > w:
        raise ShapeError("center_crop (target larger than input)", x.shape, (target_h, target_w))
    if (target_h, target_w) == (h, w):
        return x
    return T.crop(x, ((h - target_h) // 2, (w - target_w) // 2), (target_h, target_w))


def zero_mean_normalize(x: Tensor) -> Tensor:
    """Remove each sample's mean (all axes but the batch axis)."""
    axes = tuple(range(1, x.ndim))
    return T.sub(x, T.expand(T.reduce_mean(x, axes, keepdims=True), x.shape))


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    train: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Normalise over every axis except 1; updates the running buffers in train mode."""
    axes = (0,) + tuple(range(2, x.ndim))
    stat_shape = [1] * x.ndim
    stat_shape[1] = x.shape[1]
    if train:
        if x.shape[0] < 2:
            raise ValueError("batch_norm needs a batch of at least 2 in train mode")
        mean = T.reduce_mean(x, axes, keepdims=True)
        centered = T.sub(x, T.expand(mean, x.shape))
        var = T.reduce_mean(T.mul(centered, centered), axes, keepdims=True)
        running_mean.data = momentum * running_mean.data + (1 - momentum) * mean.data.reshape(-1)
        running_var.data = momentum * running_var.data + (1 - momentum) * var.data.reshape(-1)
        inv = T.div(Tensor(1.0), T.sqrt(T.add(var, Tensor(eps))))
        xhat = T.mul(centered, T.expand(inv, x.shape))
    else:
        mean = running_mean.data.reshape(stat_shape)
        inv = 1.0 / np.sqrt(running_var.data.reshape(stat_shape) + eps)
        xhat = T.mul(T.sub(x, Tensor(np.broadcast_to(mean, x.shape))),
                     Tensor(np.broadcast_to(inv, x.shape)))
    g = T.expand(T.reshape(gamma, stat_shape), x.shape)
    b = T.expand(T.reshape(beta, stat_shape), x.shape)
    return T.add(T.mul(xhat, g), b)


def class_embedding(labels: np.ndarray, table: Tensor) -> Tensor:
    return T.take_rows(table, labels)


def log_softmax(logits: Tensor) -> Tensor:
    if logits.ndim != 2:
        raise ShapeError("log_softmax", logits.shape)
    shift = Tensor(logits.data.max(axis=1, keepdims=True) * np.ones_like(logits.data))
    z = T.sub(logits, shift)
    lse = T.log(T.reduce_sum(T.exp(z), 1, keepdims=True))
    return T.sub(z, T.expand(lse, logits.shape))


def softmax(logits: Tensor) -> Tensor:
    return T.exp(log_softmax(logits))


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("softmax_cross_entropy", logits.shape, labels.shape)
    n_cls = logits.shape[1]
    if labels.min() < 0 or labels.max() >= n_cls:
        raise ValueError(f"label out of range for {n_cls} classes")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(labels.size), labels.astype(int)] = 1.0
    picked = T.reduce_sum(T.mul(log_softmax(logits), Tensor(onehot)))
    return T.scalar_mul(picked, -1.0 / labels.size)


# ------------------------------------------------------------ declarative rows


class Kind(str, Enum):
    DENSE = "Dense"
    CONV2D = "Conv2d"
    TRANSPOSED_CONV2D = "TransposedConv2d"
    UPSAMPLE_NEAREST = "UpsampleNearest"
    UPSAMPLE_BICUBIC = "UpsampleBicubic"
    BATCH_NORM = "BatchNorm"
    LEAKY_RELU = "LeakyReLU"
    GAUSSIAN_NOISE = "GaussianNoise"
    RESHAPE = "Reshape"
    CENTER_CROP = "CenterCrop"
    ZERO_MEAN_NORMALIZE = "ZeroMeanNormalize"
    CLASS_EMBEDDING = "ClassEmbedding"
    SOFTMAX_HEAD = "SoftmaxHead"


class InitScheme(str, Enum):
    BILINEAR_DECONV = "BilinearDeconv"
    UNIFORM_SMALL = "UniformSmall"
    ZEROS = "Zeros"


@dataclass(frozen=True)
class WeightInit:
    scheme: InitScheme = InitScheme.UNIFORM_SMALL
    scale: float | None = None  # None: glorot limit sqrt(6 / (fan_in + fan_out))


@dataclass(frozen=True)
class LayerConfig:
    kind: Kind
    units: int = 0  # Dense / SoftmaxHead outputs, conv output channels
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    output_padding: tuple[int, int] = (0, 0)
    factor: tuple[int, int] = (1, 1)
    slope: float = LEAKY_SLOPE
    sigma: float = 0.0
    target: tuple[int, ...] = ()  # Reshape shape (sans batch) or CenterCrop (h, w)
    num_classes: int = 0
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS
    init: WeightInit = field(default_factory=WeightInit)
    name: str = ""

    def with_name(self, name: str) -> "LayerConfig":
        return replace(self, name=name)


def validate(cfg: LayerConfig) -> None:
    if cfg.init.scheme is InitScheme.BILINEAR_DECONV:
        if cfg.kind is not Kind.TRANSPOSED_CONV2D:
            raise ValueError(f"{cfg.name}: bilinear init only applies to TransposedConv2d")
        for k, s in zip(cfg.kernel, cfg.stride):
            if k != deconv_kernel_size(s):
                raise ValueError(
                    f"{cfg.name}: bilinear init needs kernel {deconv_kernel_size(s)} "
                    f"for stride {s}, got {k}"
                )
    if cfg.kind is Kind.GAUSSIAN_NOISE and cfg.sigma < 0:
        raise ValueError(f"{cfg.name}: noise sigma must be >= 0")
    if cfg.kind in (Kind.DENSE, Kind.SOFTMAX_HEAD, Kind.CONV2D, Kind.TRANSPOSED_CONV2D):
        if cfg.units < 1:
            raise ValueError(f"{cfg.name}: units must be >= 1")


def _glorot(rng, shape, fan_in, fan_out, init: WeightInit) -> np.ndarray:
    if init.scheme is InitScheme.ZEROS:
        return np.zeros(shape)
    s = init.scale if init.scale is not None else math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


class Layer:
    """A built layer: parameters, buffers, shape rule and forward."""

    cfg: LayerConfig

    def __init__(self, cfg: LayerConfig, in_shape: tuple[int, ...]):
        self.cfg = cfg
        self.in_shape = in_shape
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, Tensor] = {}

    @property
    def out_shape(self) -> tuple[int, ...]:
        return self.in_shape

    def __call__(self, x: Tensor, train: bool, rng=None) -> Tensor:
        raise NotImplementedError

    def _param(self, key: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True, name=f"{self.cfg.name}.{key}")
        self.params[key] = t
        return t

    def _buffer(self, key: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, name=f"{self.cfg.name}.{key}")
        self.buffers[key] = t
        return t


class DenseLayer(Layer):
    def __init__(self, cfg, in_shape, rng):
        super().__init__(cfg, in_shape)
        if len(in_shape) != 1:
            raise ShapeError(f"{cfg.name}: dense expects flat input", in_shape)
        fan_in = in_shape[0]
        self.w = self._param("W", _glorot(rng, (fan_in, cfg.units), fan_in, cfg.units, cfg.init))
        self.b = self._param("b", np.zeros(cfg.units))

    @property
    def out_shape(self):
        return (self.cfg.units,)

    def __call__(self, x, train, rng=None):
        return dense(x, self.w, self.b)


class Conv2dLayer(Layer):
    def __init__(self, cfg, in_shape, rng):
        super().__init__(cfg, in_shape)
        c = in_shape[0]
        kh, kw = cfg.kernel
        fan_in, fan_out = c * kh * kw, cfg.units * kh * kw
        self.k = self._param("K", _glorot(rng, (cfg.units, c, kh, kw), fan_in, fan_out, cfg.init))
        self.b = self._param("b", np.zeros(cfg.units))

    @property
    def out_shape(self):
        _, h, w = self.in_shape
        (kh, kw), (sh, sw), (ph, pw) = self.cfg.kernel, self.cfg.stride, self.cfg.padding
        return (self.cfg.units, (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1)

    def __call__(self, x, train, rng=None):
        y = conv2d(x, self.k, self.cfg.stride, self.cfg.padding)
        return add_channel_bias(y, self.b)


class TransposedConv2dLayer(Layer):
    def __init__(self, cfg, in_shape, rng):
        super().__init__(cfg, in_shape)
        c = in_shape[0]
        kh, kw = cfg.kernel
        if cfg.init.scheme is InitScheme.BILINEAR_DECONV:
            w = bilinear_deconv_kernel(c, cfg.units, cfg.stride)
        else:
            w = _glorot(rng, (c, cfg.units, kh, kw), c * kh * kw, cfg.units * kh * kw, cfg.init)
        self.k = self._param("K", w)
        self.b = self._param("b", np.zeros(cfg.units))

    @property
    def out_shape(self):
        _, h, w = self.in_shape
        cfg = self.cfg
        dims = [
            (n - 1) * s - 2 * p + k + op
            for n, s, p, k, op in zip((h, w), cfg.stride, cfg.padding, cfg.kernel, cfg.output_padding)
        ]
        return (cfg.units, *dims)

    def __call__(self, x, train, rng=None):
        cfg = self.cfg
        y = transposed_conv2d(x, self.k, cfg.stride, cfg.padding, cfg.output_padding)
        return add_channel_bias(y, self.b)


class UpsampleLayer(Layer):
    def __init__(self, cfg, in_shape, rng=None):
        super().__init__(cfg, in_shape)
        self.method = "nearest" if cfg.kind is Kind.UPSAMPLE_NEAREST else "bicubic"

    @property
    def out_shape(self):
        c, h, w = self.in_shape
        return (c, h * self.cfg.factor[0], w * self.cfg.factor[1])

    def __call__(self, x, train, rng=None):
        return upsample_interpolate(x, self.cfg.factor, self.method, axes=(2, 3))


class BatchNormLayer(Layer):
    def __init__(self, cfg, in_shape, rng=None):
        super().__init__(cfg, in_shape)
        c = in_shape[0]
        self.gamma = self._param("gamma", np.ones(c))
        self.beta = self._param("beta", np.zeros(c))
        self.mean = self._buffer("running_mean", np.zeros(c))
        self.var = self._buffer("running_var", np.ones(c))

    def __call__(self, x, train, rng=None):
        cfg = self.cfg
        return batch_norm(x, self.gamma, self.beta, self.mean, self.var, train, cfg.momentum, cfg.eps)


class LeakyReLULayer(Layer):
    def __call__(self, x, train, rng=None):
        return leaky_relu(x, self.cfg.slope)


class GaussianNoiseLayer(Layer):
    def __call__(self, x, train, rng=None):
        return gaussian_noise(x, self.cfg.sigma, train, rng)


class ReshapeLayer(Layer):
    def __init__(self, cfg, in_shape, rng=None):
        super().__init__(cfg, in_shape)
        if int(np.prod(cfg.target)) != int(np.prod(in_shape)):
            raise ShapeError(f"{cfg.name}: reshape", in_shape, cfg.target)

    @property
    def out_shape(self):
        return tuple(self.cfg.target)

    def __call__(self, x, train, rng=None):
        return T.reshape(x, (x.shape[0],) + tuple(self.cfg.target))


class CenterCropLayer(Layer):
    @property
    def out_shape(self):
        return (self.in_shape[0],) + tuple(self.cfg.target)

    def __call__(self, x, train, rng=None):
        return center_crop(x, *self.cfg.target)


class ZeroMeanLayer(Layer):
    def __call__(self, x, train, rng=None):
        return zero_mean_normalize(x)


class ClassEmbeddingLayer(Layer):
    """Looks up a learned vector per label and multiplies it into the latent."""

    def __init__(self, cfg, in_shape, rng):
        super().__init__(cfg, in_shape)
        dim = in_shape[0]
        self.table = self._param(
            "table", _glorot(rng, (cfg.num_classes, dim), cfg.num_classes, dim, cfg.init)
        )

    def __call__(self, x, train, rng=None, labels=None):
        if labels is None:
            raise ValueError(f"{self.cfg.name}: class-conditioned layer needs labels")
        labels = np.asarray(labels)
        if labels.shape != (x.shape[0],):
            raise ShapeError(f"{self.cfg.name}: labels", x.shape, labels.shape)
        if labels.min() < 0 or labels.max() >= self.cfg.num_classes:
            raise ValueError(f"label out of range for {self.cfg.num_classes} classes")
        return T.mul(x, class_embedding(labels, self.table))


_BUILDERS = {
    Kind.DENSE: DenseLayer,
    Kind.SOFTMAX_HEAD: DenseLayer,
    Kind.CONV2D: Conv2dLayer,
    Kind.TRANSPOSED_CONV2D: TransposedConv2dLayer,
    Kind.UPSAMPLE_NEAREST: UpsampleLayer,
    Kind.UPSAMPLE_BICUBIC: UpsampleLayer,
    Kind.BATCH_NORM: BatchNormLayer,
    Kind.LEAKY_RELU: LeakyReLULayer,
    Kind.GAUSSIAN_NOISE: GaussianNoiseLayer,
    Kind.RESHAPE: ReshapeLayer,
    Kind.CENTER_CROP: CenterCropLayer,
    Kind.ZERO_MEAN_NORMALIZE: ZeroMeanLayer,
    Kind.CLASS_EMBEDDING: ClassEmbeddingLayer,
}


def build_layer(cfg: LayerConfig, in_shape: tuple[int, ...], rng: np.random.Generator) -> Layer:
    validate(cfg)
    cls = _BUILDERS[cfg.kind]
    if cls in (DenseLayer, Conv2dLayer, TransposedConv2dLayer, ClassEmbeddingLayer):
        return cls(cfg, tuple(in_shape), rng)
    return cls(cfg, tuple(in_shape))
