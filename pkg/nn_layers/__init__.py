"""
Module des couches neuronales: normalisations, pooling, linéaire et attention non locale.
"""
from nn_layers.module import Module, Param
from nn_layers.layers import (
    IBN,
    BatchNorm,
    Conv2d,
    InstanceNorm,
    Linear,
    NonLocalBlock,
    NormState,
    Pooling,
    batch_norm,
    ibn,
    instance_norm,
    linear,
    non_local,
    pool,
)
