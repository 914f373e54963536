"""Minimal NHWC convolutional network engine with reverse-mode gradients."""

from .checkpoint import (
    CheckpointCorruptError,
    CheckpointError,
    CheckpointVersionError,
    FingerprintMismatchError,
    load_checkpoint,
    save_checkpoint,
)
from .functional import (
    ShapeError,
    batchnorm_forward,
    conv2d_forward,
    dense_forward,
    maxpool_forward,
)
from .layers import LayerSpec, batchnorm, conv, dense, flatten, infer_shapes, maxpool, relu, sigmoid
from .model import Sequential, architecture_fingerprint
from .optim import SGD, sgd_step

__all__ = [
    "LayerSpec",
    "Sequential",
    "SGD",
    "ShapeError",
    "architecture_fingerprint",
    "batchnorm",
    "batchnorm_forward",
    "conv",
    "conv2d_forward",
    "dense",
    "dense_forward",
    "flatten",
    "infer_shapes",
    "maxpool",
    "maxpool_forward",
    "relu",
    "sgd_step",
    "sigmoid",
    "load_checkpoint",
    "save_checkpoint",
    "CheckpointError",
    "CheckpointCorruptError",
    "CheckpointVersionError",
    "FingerprintMismatchError",
]
