"""Minimal float64 neural-network substrate: layers, gradients, Adam."""

from .layers import (
    ACTIVATIONS,
    Activation,
    AvgPool2D,
    BatchNorm,
    ConfigError,
    Conv2D,
    Deconv2D,
    Dense,
    Dropout,
    Layer,
    NonFiniteError,
    Param,
    Sequential,
    ShapeError,
    StateError,
    activation_forward,
    avgpool2d,
    batchnorm_forward,
    conv2d_forward,
    deconv2d_forward,
    dense_forward,
    dropout_forward,
    glorot_uniform,
    softmax,
)
from .optim import Adam, AdamState, adam_step, poly_lr

__all__ = [
    "ACTIVATIONS", "Activation", "Adam", "AdamState", "AvgPool2D", "BatchNorm",
    "ConfigError", "Conv2D", "Deconv2D", "Dense", "Dropout", "Layer", "NonFiniteError",
    "Param", "Sequential", "ShapeError", "StateError", "activation_forward", "adam_step",
    "avgpool2d", "batchnorm_forward", "conv2d_forward", "deconv2d_forward", "dense_forward",
    "dropout_forward", "glorot_uniform", "poly_lr", "softmax",
]
