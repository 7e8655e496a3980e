"""Minimal differentiable core: layers, networks, He init, Adam, gradcheck."""

from ndcb.nn.adam import AdamState, adam_step
from ndcb.nn.layers import (
    CenterCrop2d,
    ConcatSkip,
    Conv2d,
    Dense,
    Flatten,
    L2Normalize,
    LeakyReLU,
    PassContext,
    ReflectPad2d,
    SaveSkip,
    Sigmoid,
    Upsample2x,
)
from ndcb.nn.network import Network, ParamSet, Tape

__all__ = [
    "AdamState",
    "adam_step",
    "CenterCrop2d",
    "ConcatSkip",
    "Conv2d",
    "Dense",
    "Flatten",
    "L2Normalize",
    "LeakyReLU",
    "Network",
    "ParamSet",
    "PassContext",
    "ReflectPad2d",
    "SaveSkip",
    "Sigmoid",
    "Tape",
    "Upsample2x",
]
