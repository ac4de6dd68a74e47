"""Minimal neural toolkit: hand-rolled autodiff, transformer layers,
parameter store, optimizer, and checkpoint I/O."""

from . import autodiff
from .autodiff import Tensor, backward, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import AttnMask, attention, block_forward, multi_head, positional_encoding
from .optim import AdamState, adam_step
from .params import ConfigError, NetConfig, ParamStore, ParamTensor

__all__ = [
    "AdamState",
    "AttnMask",
    "ConfigError",
    "NetConfig",
    "ParamStore",
    "ParamTensor",
    "Tensor",
    "adam_step",
    "attention",
    "autodiff",
    "backward",
    "block_forward",
    "load_checkpoint",
    "multi_head",
    "no_grad",
    "positional_encoding",
    "save_checkpoint",
]
