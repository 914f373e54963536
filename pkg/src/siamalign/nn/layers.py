"""Layer specifications and stateful layer objects built from them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .functional import ShapeError

LAYER_KINDS = ("conv", "maxpool", "relu", "batchnorm", "flatten", "dense", "sigmoid")


@dataclass(frozen=True)
class LayerSpec:
    """One row of an architecture: a layer kind plus its options."""

    kind: str
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, **{k: (list(v) if isinstance(v, tuple) else v) for k, v in self.options.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        kind = d.pop("kind")
        return cls(kind, {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


def conv(out_channels: int, kernel=3, stride: int = 1, padding: str = "same") -> LayerSpec:
    if isinstance(kernel, int):
        kernel = (kernel, kernel)
    return LayerSpec("conv", {"out_channels": int(out_channels), "kernel": tuple(kernel), "stride": stride, "padding": padding})


def maxpool(size: int = 2, stride: int = 2) -> LayerSpec:
    return LayerSpec("maxpool", {"size": size, "stride": stride})


def relu() -> LayerSpec:
    return LayerSpec("relu")


def sigmoid() -> LayerSpec:
    return LayerSpec("sigmoid")


def batchnorm(eps: float = 1e-5, momentum: float = 0.9) -> LayerSpec:
    return LayerSpec("batchnorm", {"eps": eps, "momentum": momentum})


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def dense(out_features: int) -> LayerSpec:
    return LayerSpec("dense", {"out_features": int(out_features)})


class Layer:
    """Base layer. ``params`` are trained, ``buffers`` are running statistics."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a recorded forward pass")
        cache, self._cache = self._cache, None
        return cache


class Conv2D(Layer):
    def __init__(self, in_shape, out_channels, kernel, stride, padding, rng, dtype):
        super().__init__()
        if len(in_shape) != 3:
            raise ShapeError(f"conv needs an HxWxC input, got {in_shape}")
        kh, kw = kernel
        c_in = in_shape[2]
        fan_in = kh * kw * c_in
        bound = np.sqrt(6.0 / fan_in)
        self.params["weight"] = rng.uniform(-bound, bound, size=(kh, kw, c_in, out_channels)).astype(dtype)
        self.params["bias"] = np.zeros(out_channels, dtype=dtype)
        self.stride, self.padding = stride, padding
        h, w = in_shape[:2]
        if padding == "same":
            ho, wo = (h - 1) // stride + 1, (w - 1) // stride + 1
        else:
            ho, wo = (h - kh) // stride + 1, (w - kw) // stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv kernel {kernel} does not fit input {in_shape}")
        self.out_shape = (ho, wo, out_channels)

    def forward(self, x, train=False):
        out, self._cache = F.conv2d_forward(x, self.params["weight"], self.params["bias"], self.padding, self.stride)
        return out

    def backward(self, dout):
        dx, dw, db = F.conv2d_backward(dout, self._take_cache())
        self.grads["weight"], self.grads["bias"] = dw, db
        return dx


class MaxPool2D(Layer):
    def __init__(self, in_shape, size, stride):
        super().__init__()
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool needs an HxWxC input, got {in_shape}")
        if size != stride:
            raise ValueError("only non-overlapping pooling (size == stride) is supported")
        self.size = size
        h, w, c = in_shape
        self.out_shape = (-(-h // size), -(-w // size), c)

    def forward(self, x, train=False):
        out, self._cache = F.maxpool_forward(x, self.size, self.size)
        return out

    def backward(self, dout):
        return F.maxpool_backward(dout, self._take_cache())


class ReLU(Layer):
    def __init__(self, in_shape):
        super().__init__()
        self.out_shape = tuple(in_shape)

    def forward(self, x, train=False):
        out, self._cache = F.relu_forward(x)
        return out

    def backward(self, dout):
        return F.relu_backward(dout, self._take_cache())


class Sigmoid(Layer):
    def __init__(self, in_shape):
        super().__init__()
        self.out_shape = tuple(in_shape)

    def forward(self, x, train=False):
        out, self._cache = F.sigmoid_forward(x)
        return out

    def backward(self, dout):
        return F.sigmoid_backward(dout, self._take_cache())


class BatchNorm(Layer):
    def __init__(self, in_shape, eps, momentum, dtype):
        super().__init__()
        c = in_shape[-1]
        self.params["gamma"] = np.ones(c, dtype=dtype)
        self.params["beta"] = np.zeros(c, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(c, dtype=dtype)
        self.buffers["running_var"] = np.ones(c, dtype=dtype)
        self.eps, self.momentum = eps, momentum
        self.out_shape = tuple(in_shape)

    def forward(self, x, train=False):
        out, self._cache = F.batchnorm_forward(
            x,
            self.params["gamma"],
            self.params["beta"],
            self.buffers["running_mean"],
            self.buffers["running_var"],
            mode="train" if train else "eval",
            eps=self.eps,
            momentum=self.momentum,
        )
        return out

    def backward(self, dout):
        dx, dg, db = F.batchnorm_backward(dout, self._take_cache())
        self.grads["gamma"], self.grads["beta"] = dg, db
        return dx


class Flatten(Layer):
    def __init__(self, in_shape):
        super().__init__()
        self.out_shape = (int(np.prod(in_shape)),)

    def forward(self, x, train=False):
        out, self._cache = F.flatten_forward(x)
        return out

    def backward(self, dout):
        return F.flatten_backward(dout, self._take_cache())


class Dense(Layer):
    def __init__(self, in_shape, out_features, rng, dtype):
        super().__init__()
        if len(in_shape) != 1:
            raise ShapeError(f"dense needs a flat input, got {in_shape}; add a flatten layer")
        fan_in = in_shape[0]
        bound = np.sqrt(6.0 / fan_in)
        self.params["weight"] = rng.uniform(-bound, bound, size=(out_features, fan_in)).astype(dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)
        self.out_shape = (out_features,)

    def forward(self, x, train=False):
        out, self._cache = F.dense_forward(x, self.params["weight"], self.params["bias"])
        return out

    def backward(self, dout):
        dx, dw, db = F.dense_backward(dout, self._take_cache())
        self.grads["weight"], self.grads["bias"] = dw, db
        return dx


def build_layer(spec: LayerSpec, in_shape, rng, dtype) -> Layer:
    o = spec.options
    if spec.kind == "conv":
        return Conv2D(in_shape, o["out_channels"], tuple(o["kernel"]), o.get("stride", 1), o.get("padding", "same"), rng, dtype)
    if spec.kind == "maxpool":
        return MaxPool2D(in_shape, o.get("size", 2), o.get("stride", 2))
    if spec.kind == "relu":
        return ReLU(in_shape)
    if spec.kind == "sigmoid":
        return Sigmoid(in_shape)
    if spec.kind == "batchnorm":
        return BatchNorm(in_shape, o.get("eps", 1e-5), o.get("momentum", 0.9), dtype)
    if spec.kind == "flatten":
        return Flatten(in_shape)
    if spec.kind == "dense":
        return Dense(in_shape, o["out_features"], rng, dtype)
    raise ValueError(f"unknown layer kind {spec.kind!r}")


def infer_shapes(specs, input_shape) -> list[tuple]:
    """Output shape after each spec, without allocating real weights."""
    shapes = []
    shape = tuple(input_shape)
    for spec in specs:
        o = spec.options
        if spec.kind == "conv":
            if len(shape) != 3:
                raise ShapeError(f"conv needs an HxWxC input, got {shape}")
            kh, kw = o["kernel"]
            s = o.get("stride", 1)
            h, w = shape[:2]
            if o.get("padding", "same") == "same":
                shape = ((h - 1) // s + 1, (w - 1) // s + 1, o["out_channels"])
            else:
                shape = ((h - kh) // s + 1, (w - kw) // s + 1, o["out_channels"])
            if min(shape) < 1:
                raise ShapeError(f"conv kernel {o['kernel']} does not fit input")
        elif spec.kind == "maxpool":
            if len(shape) != 3:
                raise ShapeError(f"maxpool needs an HxWxC input, got {shape}")
            size = o.get("size", 2)
            shape = (-(-shape[0] // size), -(-shape[1] // size), shape[2])
        elif spec.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif spec.kind == "dense":
            if len(shape) != 1:
                raise ShapeError(f"dense needs a flat input, got {shape}; add a flatten layer")
            shape = (o["out_features"],)
        shapes.append(shape)
    return shapes
