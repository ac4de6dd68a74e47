"""Transformer building blocks: positional encoding, masked attention,
multi-head wrappers, and the pre-norm residual block."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .params import ConfigError, ParamStore


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Sinusoidal position table: (t, 2i) -> sin, (t, 2i+1) -> cos."""
    if length < 1:
        raise ConfigError("length must be >= 1")
    if d_model % 2 != 0:
        raise ConfigError("d_model must be even for sinusoidal encoding")
    t = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d_model // 2, dtype=np.float64)[None, :]
    angle = t / np.power(10000.0, 2.0 * i / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


@dataclass(frozen=True)
class AttnMask:
    """Boolean (L_q, L_k) mask; True marks a blocked key."""

    blocked: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.blocked, dtype=bool)
        if arr.ndim != 2:
            raise ConfigError("mask must be 2-D")
        object.__setattr__(self, "blocked", arr)

    @staticmethod
    def causal(length: int) -> "AttnMask":
        return AttnMask(np.triu(np.ones((length, length), dtype=bool), k=1))


def _blocked(mask) -> np.ndarray | None:
    if mask is None:
        return None
    return mask.blocked if isinstance(mask, AttnMask) else np.asarray(mask, dtype=bool)


def attention(q, k, v, mask=None) -> Tensor:
    """Softmax(q kᵀ / sqrt(d_k)) v with optional blocking mask."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d_k = q.shape[-1]
    scores = ad.scale(ad.matmul(q, ad.transpose_last(k)), 1.0 / math.sqrt(d_k))
    weights = ad.masked_softmax(scores, _blocked(mask))
    return ad.matmul(weights, v)


@dataclass
class AttnParams:
    heads: list  # [(wq, wk, wv)] Tensors
    wo: Tensor
    bo: Tensor


@dataclass
class BlockParams:
    ln1_g: Tensor
    ln1_b: Tensor
    attn: AttnParams
    ln2_g: Tensor
    ln2_b: Tensor
    ff1_w: Tensor
    ff1_b: Tensor
    ff2_w: Tensor
    ff2_b: Tensor


def attn_params(store: ParamStore, name: str, n_heads: int) -> AttnParams:
    heads = [
        (store.leaf(f"{name}.h{h}.wq"), store.leaf(f"{name}.h{h}.wk"), store.leaf(f"{name}.h{h}.wv"))
        for h in range(n_heads)
    ]
    return AttnParams(heads, store.leaf(f"{name}.out.w"), store.leaf(f"{name}.out.b"))


def block_params(store: ParamStore, name: str, n_heads: int) -> BlockParams:
    return BlockParams(
        store.leaf(f"{name}.ln1.g"),
        store.leaf(f"{name}.ln1.b"),
        attn_params(store, f"{name}.attn", n_heads),
        store.leaf(f"{name}.ln2.g"),
        store.leaf(f"{name}.ln2.b"),
        store.leaf(f"{name}.ff1.w"),
        store.leaf(f"{name}.ff1.b"),
        store.leaf(f"{name}.ff2.w"),
        store.leaf(f"{name}.ff2.b"),
    )


def multi_head_kv(q_src: Tensor, kv_src: Tensor, params: AttnParams, mask=None) -> Tensor:
    """Multi-head attention with separate query and key/value sources.

    The per-head projection matrices are stacked into one matmul per stream;
    heads are then separated on a dedicated axis.
    """
    q_src, kv_src = as_tensor(q_src), as_tensor(kv_src)
    squeeze = q_src.data.ndim == 2
    if squeeze:
        q_src = ad.reshape(q_src, (1,) + q_src.data.shape)
        kv_src = ad.reshape(kv_src, (1,) + kv_src.data.shape)
    n_heads = len(params.heads)
    d_k = params.heads[0][0].data.shape[1]
    wq = ad.concat_last([h[0] for h in params.heads])
    wk = ad.concat_last([h[1] for h in params.heads])
    wv = ad.concat_last([h[2] for h in params.heads])

    def heads(src, w):
        t = ad.matmul(src, w)
        b, length = t.data.shape[0], t.data.shape[1]
        return ad.swap_axes(ad.reshape(t, (b, length, n_heads, d_k)), -3, -2)

    q, k, v = heads(q_src, wq), heads(kv_src, wk), heads(kv_src, wv)
    scores = ad.scale(ad.matmul(q, ad.transpose_last(k)), 1.0 / math.sqrt(d_k))
    weights = ad.masked_softmax(scores, _blocked(mask))
    out = ad.swap_axes(ad.matmul(weights, v), -3, -2)
    b, length = out.data.shape[0], out.data.shape[1]
    out = ad.reshape(out, (b, length, n_heads * d_k))
    out = ad.affine(out, params.wo, params.bo)
    if squeeze:
        out = ad.reshape(out, out.data.shape[1:])
    return out


def multi_head(x, params: AttnParams, mask=None) -> Tensor:
    """Self-attention over ``x`` with per-head projections and a joint output map."""
    x = as_tensor(x)
    return multi_head_kv(x, x, params, mask)


def feed_forward(x: Tensor, p: BlockParams) -> Tensor:
    return ad.affine(ad.tanh(ad.affine(x, p.ff1_w, p.ff1_b)), p.ff2_w, p.ff2_b)


def block_forward(x, params: BlockParams, mask=None, drop=(None, None)) -> Tensor:
    """Pre-norm residual block: x + MH(LN(x)), then + FF(LN(.)).

    ``drop`` holds optional pre-scaled dropout masks for the two sublayer
    outputs (None outside training).
    """
    x = as_tensor(x)
    a = multi_head(ad.layer_norm(x, params.ln1_g, params.ln1_b), params.attn, mask)
    if drop[0] is not None:
        a = ad.mul_const(a, drop[0])
    x = ad.add(x, a)
    f = feed_forward(ad.layer_norm(x, params.ln2_g, params.ln2_b), params)
    if drop[1] is not None:
        f = ad.mul_const(f, drop[1])
    return ad.add(x, f)


def cross_block_forward(x: Tensor, mem: Tensor, params: BlockParams, mask=None, drop=(None, None)) -> Tensor:
    """Pre-norm cross-attention block: queries from ``x``, keys/values from ``mem``."""
    xn = ad.layer_norm(x, params.ln1_g, params.ln1_b)
    a = multi_head_kv(xn, mem, params.attn, mask)
    if drop[0] is not None:
        a = ad.mul_const(a, drop[0])
    x = ad.add(x, a)
    f = feed_forward(ad.layer_norm(x, params.ln2_g, params.ln2_b), params)
    if drop[1] is not None:
        f = ad.mul_const(f, drop[1])
    return ad.add(x, f)
