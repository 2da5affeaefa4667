"""Generator autoencoder and classifier CNNs with hand-written backprop.

The generator maps a dynamic image to the next one through a stack of
strided 5x5 convolutions mirrored by transposed convolutions. Classifiers
are a conv stack, global average pooling and an affine head.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Dict, List, Tuple, Union

import numpy as np

from . import numerics as nx
from .errors import InvalidConfigError, InvalidShapeError

Shape3 = Tuple[int, int, int]


@dataclass(frozen=True)
class GeneratorConfig:
    input_shape: Shape3 = (1, 32, 32)
    stage_feature_maps: Tuple[int, ...] = (16, 32)
    kernel: int = 5
    stride: int = 2
    pad: int = 2
    encoder_activation: str = "leaky_relu"
    decoder_activation: str = "relu"
    final_activation: str = "linear"
    slope: float = 0.2

    @classmethod
    def full_scale(cls, input_shape: Shape3 = (3, 240, 320)) -> "GeneratorConfig":
        return cls(input_shape=input_shape, stage_feature_maps=(64, 128, 256, 512))

    def encoder_sizes(self) -> List[Tuple[int, int]]:
        """Spatial size entering each encoder stage plus the bottleneck size."""
        _, h, w = self.input_shape
        sizes = [(h, w)]
        for _ in self.stage_feature_maps:
            h = nx.conv_output_size(h, self.kernel, self.stride, self.pad)
            w = nx.conv_output_size(w, self.kernel, self.stride, self.pad)
            sizes.append((h, w))
        return sizes

    def out_adjusts(self) -> List[int]:
        """Per-decoder-stage ``out_adjust`` that inverts the matching encoder stage."""
        sizes = self.encoder_sizes()
        adjusts = []
        for (h_in, _), (h_out, _) in zip(sizes[:-1], sizes[1:]):
            adjusts.append(h_in - nx.transpose_output_size(h_out, self.kernel, self.stride,
                                                           self.pad, 0))
        return adjusts[::-1]

    def validate(self) -> None:
        c, h, w = self.input_shape
        if min(c, h, w) < 1 or not self.stage_feature_maps:
            raise InvalidConfigError(f"bad generator config {self}")
        factor = self.stride ** len(self.stage_feature_maps)
        if h % factor or w % factor:
            raise InvalidConfigError(f"input {h}x{w} not divisible by {factor} "
                                     f"({len(self.stage_feature_maps)} stride-{self.stride} stages)")
        for kind in (self.encoder_activation, self.decoder_activation, self.final_activation):
            if kind not in nx.ACTIVATIONS:
                raise InvalidConfigError(f"unknown activation {kind!r}")
        sizes = self.encoder_sizes()
        for adj, (h_in, w_in), (h_out, w_out) in zip(self.out_adjusts()[::-1], sizes[:-1], sizes[1:]):
            wh = nx.transpose_output_size(w_out, self.kernel, self.stride, self.pad, adj)
            if not 0 <= adj < self.stride or wh != w_in:
                raise InvalidConfigError(f"decoder cannot mirror encoder stage {h_in}x{w_in} -> "
                                         f"{h_out}x{w_out}")


@dataclass(frozen=True)
class ClassifierConfig:
    input_shape: Shape3 = (1, 32, 32)
    conv_channels: Tuple[int, ...] = (8, 16)
    n_classes: int = 6
    kernel: int = 5
    stride: int = 2
    pad: int = 2
    activation: str = "relu"
    standardize: bool = False

    def validate(self) -> None:
        if self.n_classes < 2:
            raise InvalidConfigError("a classifier needs at least two classes")
        if not self.conv_channels:
            raise InvalidConfigError("a classifier needs at least one conv stage")
        if self.activation not in nx.ACTIVATIONS:
            raise InvalidConfigError(f"unknown activation {self.activation!r}")


ModelConfig = Union[GeneratorConfig, ClassifierConfig]


@dataclass
class ModelParams:
    tensors: Dict[str, np.ndarray]
    config: ModelConfig

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def with_tensors(self, tensors: Dict[str, np.ndarray]) -> "ModelParams":
        return ModelParams(dict(tensors), self.config)

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()}, self.config)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.tensors[name], dtype="<f8").tobytes())
        return h.hexdigest()


# --------------------------------------------------------------------------
# generator


def init_generator(config: GeneratorConfig, seed: int = 0) -> ModelParams:
    config.validate()
    rng = np.random.default_rng(seed)
    k = config.kernel
    chans = [config.input_shape[0], *config.stage_feature_maps]
    tensors = {}
    for i, (cin, cout) in enumerate(zip(chans[:-1], chans[1:])):
        tensors[f"enc{i}.kernels"] = rng.normal(0.0, np.sqrt(2.0 / (cin * k * k)), (cout, cin, k, k))
        tensors[f"enc{i}.bias"] = np.zeros(cout)
    rev = chans[::-1]
    for i, (cin, cout) in enumerate(zip(rev[:-1], rev[1:])):
        fan_in = cin * k * k / config.stride ** 2
        tensors[f"dec{i}.kernels"] = rng.normal(0.0, np.sqrt(1.0 / fan_in), (cin, cout, k, k))
        tensors[f"dec{i}.bias"] = np.zeros(cout)
    return ModelParams(tensors, config)


def _check_input(x: np.ndarray, shape: Shape3) -> None:
    if x.shape[-3:] != tuple(shape) or x.ndim not in (3, 4):
        raise InvalidShapeError(f"input shape {x.shape} does not match model input {shape}")


def generator_forward(params: ModelParams, D, return_cache: bool = False):
    cfg: GeneratorConfig = params.config
    x = nx.as_tensor(D)
    _check_input(x, cfg.input_shape)
    t = params.tensors
    n_stages = len(cfg.stage_feature_maps)
    cache = []
    for i in range(n_stages):
        z = nx.conv2d_forward(x, t[f"enc{i}.kernels"], t[f"enc{i}.bias"], cfg.stride, cfg.pad)
        cache.append((x, z))
        x = nx.activation_forward(z, cfg.encoder_activation, cfg.slope)
    for i, adj in enumerate(cfg.out_adjusts()):
        z = nx.conv2d_transpose_forward(x, t[f"dec{i}.kernels"], t[f"dec{i}.bias"],
                                        cfg.stride, cfg.pad, adj)
        cache.append((x, z))
        kind = cfg.final_activation if i == n_stages - 1 else cfg.decoder_activation
        x = nx.activation_forward(z, kind, cfg.slope)
    return (x, cache) if return_cache else x


def generator_backward(params: ModelParams, cache, upstream) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Backprop ``upstream`` (grad w.r.t. the generator output) to input and params."""
    cfg: GeneratorConfig = params.config
    t = params.tensors
    n_stages = len(cfg.stage_feature_maps)
    grads = {}
    g = nx.as_tensor(upstream)
    adjusts = cfg.out_adjusts()
    for i in reversed(range(n_stages)):
        x, z = cache[n_stages + i]
        kind = cfg.final_activation if i == n_stages - 1 else cfg.decoder_activation
        g = nx.activation_backward(z, kind, g, cfg.slope)
        lg = nx.conv2d_transpose_backward(x, t[f"dec{i}.kernels"], cfg.stride, cfg.pad,
                                          adjusts[i], g)
        grads[f"dec{i}.kernels"] = lg.param_grads["kernels"]
        grads[f"dec{i}.bias"] = lg.param_grads["bias"]
        g = lg.input_grad
    for i in reversed(range(n_stages)):
        x, z = cache[i]
        g = nx.activation_backward(z, cfg.encoder_activation, g, cfg.slope)
        lg = nx.conv2d_backward(x, t[f"enc{i}.kernels"], cfg.stride, cfg.pad, g)
        grads[f"enc{i}.kernels"] = lg.param_grads["kernels"]
        grads[f"enc{i}.bias"] = lg.param_grads["bias"]
        g = lg.input_grad
    return g, grads


# --------------------------------------------------------------------------
# classifiers


def init_classifier(config: ClassifierConfig, seed: int = 0) -> ModelParams:
    config.validate()
    rng = np.random.default_rng(seed)
    k = config.kernel
    chans = [config.input_shape[0], *config.conv_channels]
    tensors = {}
    for i, (cin, cout) in enumerate(zip(chans[:-1], chans[1:])):
        tensors[f"conv{i}.kernels"] = rng.normal(0.0, np.sqrt(2.0 / (cin * k * k)), (cout, cin, k, k))
        tensors[f"conv{i}.bias"] = np.zeros(cout)
    tensors["head.W"] = rng.normal(0.0, np.sqrt(1.0 / chans[-1]), (config.n_classes, chans[-1]))
    tensors["head.b"] = np.zeros(config.n_classes)
    return ModelParams(tensors, config)


def standardize_dynamic_image(D) -> np.ndarray:
    """Zero-mean, unit-std version of one image (or each image of a batch)."""
    z, _ = _standardize(nx.as_tensor(D))
    return z


def _standardize(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    axes = tuple(range(x.ndim - 3, x.ndim))
    mu = x.mean(axis=axes, keepdims=True)
    s = np.maximum(x.std(axis=axes, keepdims=True), 1e-6)
    return (x - mu) / s, s


def _standardize_backward(z: np.ndarray, s: np.ndarray, g: np.ndarray) -> np.ndarray:
    axes = tuple(range(z.ndim - 3, z.ndim))
    clamped = s <= 1e-6
    proj = np.where(clamped, 0.0, (g * z).mean(axis=axes, keepdims=True))
    return (g - g.mean(axis=axes, keepdims=True) - z * proj) / s


def classifier_logits(params: ModelParams, image, return_cache: bool = False):
    cfg: ClassifierConfig = params.config
    x = nx.as_tensor(image)
    _check_input(x, cfg.input_shape)
    t = params.tensors
    cache = {"std": None, "conv": []}
    if cfg.standardize:
        x, s = _standardize(x)
        cache["std"] = (x, s)
    for i in range(len(cfg.conv_channels)):
        z = nx.conv2d_forward(x, t[f"conv{i}.kernels"], t[f"conv{i}.bias"], cfg.stride, cfg.pad)
        cache["conv"].append((x, z))
        x = nx.activation_forward(z, cfg.activation)
    cache["pooled_hw"] = x.shape[-2:]
    pooled = x.mean(axis=(-2, -1))
    cache["pooled"] = pooled
    logits = nx.dense_forward(pooled, t["head.W"], t["head.b"])
    return (logits, cache) if return_cache else logits


def classifier_forward(params: ModelParams, image) -> np.ndarray:
    """Class probabilities for one image ``(C, H, W)`` or a batch."""
    return nx.softmax(classifier_logits(params, image))


def classifier_backward(params: ModelParams, cache, dlogits) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    cfg: ClassifierConfig = params.config
    t = params.tensors
    lg = nx.dense_backward(cache["pooled"], t["head.W"], dlogits)
    grads = {"head.W": lg.param_grads["W"], "head.b": lg.param_grads["b"]}
    h, w = cache["pooled_hw"]
    g = np.broadcast_to(lg.input_grad[..., None, None] / (h * w),
                        lg.input_grad.shape + (h, w)).copy()
    for i in reversed(range(len(cfg.conv_channels))):
        x, z = cache["conv"][i]
        g = nx.activation_backward(z, cfg.activation, g)
        cg = nx.conv2d_backward(x, t[f"conv{i}.kernels"], cfg.stride, cfg.pad, g)
        grads[f"conv{i}.kernels"] = cg.param_grads["kernels"]
        grads[f"conv{i}.bias"] = cg.param_grads["bias"]
        g = cg.input_grad
    if cache["std"] is not None:
        z, s = cache["std"]
        g = _standardize_backward(z, s, g)
    return g, grads


def predict(probs) -> np.ndarray:
    """Argmax over the last axis; ``np.argmax`` already breaks ties low."""
    return np.argmax(probs, axis=-1)
