"""Dual-branch trajectory estimator: past encoder p(Z|X), future encoder
q(Z|X,Y) with future-past cross attention, and a causal-masked decoder that
emits per-step Gaussian-mixture parameters.

One BranchModel handles one data regime: the Robot branch consumes
position+velocity windows, the Human branch additionally consumes the
interaction force channel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import Branch, StateSample, sample_matrix
from ..nn import autodiff as ad
from ..nn.autodiff import Tensor, no_grad
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from ..nn.layers import (
    AttnMask,
    block_forward,
    block_params,
    cross_block_forward,
    positional_encoding,
)
from ..nn.params import ConfigError, NetConfig, ParamStore, init_affine, init_block, init_conv, init_layernorm
from .loss import LOG_VAR_MAX, LOG_VAR_MIN, GaussianParams, GmmSequence

STATE_DIM = 6  # position + velocity
_LOG_2PI = float(np.log(2.0 * np.pi))
CONV_KERNEL = 3


def branch_input_dim(branch: Branch) -> int:
    return 9 if Branch(branch) is Branch.HUMAN else 6


@dataclass
class Normalization:
    """Per-corpus channel statistics applied to inputs and targets.

    With ``center`` set, target positions are expressed relative to the
    window's current position before scaling, so the decoder regresses
    displacements; inputs stay absolute.  Emitted predictions are always
    mapped back to absolute coordinates.
    """

    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray
    center: bool = True

    @staticmethod
    def identity(d_in: int) -> "Normalization":
        return Normalization(np.zeros(d_in), np.ones(d_in), np.zeros(STATE_DIM),
                             np.ones(STATE_DIM), center=False)

    @staticmethod
    def anchor_of(x: np.ndarray) -> np.ndarray:
        """Current (last observed) position of a window batch: (..., 3)."""
        return x[..., -1, 0:3]

    def _centered(self, y: np.ndarray, anchor) -> np.ndarray:
        if not self.center:
            return y
        y = y.copy()
        y[..., 0:3] -= np.expand_dims(np.asarray(anchor, dtype=np.float64), -2)
        return y

    @staticmethod
    def fit(x: np.ndarray, y: np.ndarray, center: bool = True) -> "Normalization":
        norm = Normalization(np.zeros(x.shape[-1]), np.ones(x.shape[-1]),
                             np.zeros(STATE_DIM), np.ones(STATE_DIM), center=center)
        flat_x = x.reshape(-1, x.shape[-1])
        flat_y = norm._centered(y, Normalization.anchor_of(x)).reshape(-1, y.shape[-1])
        norm.in_mean = flat_x.mean(axis=0)
        norm.in_std = np.maximum(flat_x.std(axis=0), 1e-8)
        norm.out_mean = flat_y.mean(axis=0)
        norm.out_std = np.maximum(flat_y.std(axis=0), 1e-8)
        return norm

    def norm_in(self, x: np.ndarray) -> np.ndarray:
        return (x - self.in_mean) / self.in_std

    def norm_out(self, y: np.ndarray, anchor) -> np.ndarray:
        return (self._centered(y, anchor) - self.out_mean) / self.out_std

    def denorm_out(self, y: np.ndarray, anchor) -> np.ndarray:
        out = y * self.out_std + self.out_mean
        if self.center:
            out[..., 0:3] += np.expand_dims(np.asarray(anchor, dtype=np.float64), -2)
        return out

    def to_dict(self) -> dict:
        return {
            "in_mean": self.in_mean.tolist(),
            "in_std": self.in_std.tolist(),
            "out_mean": self.out_mean.tolist(),
            "out_std": self.out_std.tolist(),
            "center": self.center,
        }

    @staticmethod
    def from_dict(d: dict) -> "Normalization":
        return Normalization(
            *(np.asarray(d[k], dtype=np.float64) for k in ("in_mean", "in_std", "out_mean", "out_std")),
            center=bool(d.get("center", False)),
        )


class _Ctx:
    """Per-pass context: dropout draws during training, inert at evaluation."""

    def __init__(self, rng: Optional[np.random.Generator] = None, dropout: float = 0.0):
        self.rng = rng
        self.p = dropout if rng is not None else 0.0

    def drop(self, shape):
        if self.p <= 0.0:
            return None
        keep = (self.rng.random(shape) >= self.p).astype(np.float64)
        return keep / (1.0 - self.p)


_EVAL_CTX = _Ctx()


@dataclass
class BranchModel:
    branch: Branch
    config: NetConfig
    store: ParamStore
    norm: Normalization
    l_obs: int = 8
    l_fut: int = 12

    @property
    def input_dim(self) -> int:
        return branch_input_dim(self.branch)

    @staticmethod
    def build(branch, config: NetConfig, seed: int, l_obs: int = 8, l_fut: int = 12) -> "BranchModel":
        branch = Branch(branch)
        rng = np.random.default_rng(seed)
        store = ParamStore()
        d_in = branch_input_dim(branch)
        cfg = config
        init_affine(store, rng, "embed", d_in, cfg.d_model)
        init_affine(store, rng, "fut_embed", STATE_DIM, cfg.d_model)
        init_conv(store, rng, "conv", CONV_KERNEL, d_in, cfg.d_model)
        for i in range(cfg.n_layers):
            init_block(store, rng, f"past.b{i}", cfg)
        init_layernorm(store, "past.lnf", cfg.d_model)
        init_affine(store, rng, "past.head1", cfg.d_model, cfg.d_model)
        init_affine(store, rng, "past.head2", cfg.d_model, 2 * cfg.d_z)
        for i in range(cfg.n_layers):
            init_block(store, rng, f"fut.b{i}", cfg)
        init_block(store, rng, "fut.cross", cfg)
        init_layernorm(store, "fut.lnf", cfg.d_model)
        init_affine(store, rng, "fut.head1", cfg.d_model, cfg.d_model)
        init_affine(store, rng, "fut.head2", cfg.d_model, 2 * cfg.d_z)
        init_affine(store, rng, "dec.in", 2 * cfg.d_model + cfg.d_z, cfg.d_model)
        for i in range(cfg.n_layers):
            init_block(store, rng, f"dec.b{i}", cfg)
        init_layernorm(store, "dec.lnf", cfg.d_model)
        init_affine(store, rng, "dec.gmm", cfg.d_model, cfg.n_mix * (1 + 2 * STATE_DIM))
        return BranchModel(branch=branch, config=cfg, store=store, norm=Normalization.identity(d_in),
                           l_obs=l_obs, l_fut=l_fut)


# ------------------------------------------------------------ graph builders

def _check_past(model: BranchModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (model.l_obs, model.input_dim):
        raise ConfigError(
            f"past window shape {x.shape[1:]} != ({model.l_obs}, {model.input_dim}) for {model.branch.value} branch"
        )
    return x


def _embed_sequence(store: ParamStore, name: str, x: np.ndarray, d_model: int, ctx: _Ctx) -> Tensor:
    h = ad.affine(Tensor(x), store.leaf(f"{name}.w"), store.leaf(f"{name}.b"))
    h = ad.add_const(h, positional_encoding(x.shape[-2], d_model))
    mask = ctx.drop(h.shape)
    return h if mask is None else ad.mul_const(h, mask)


def _run_blocks(model: BranchModel, prefix: str, h: Tensor, mask, ctx: _Ctx) -> Tensor:
    cfg = model.config
    for i in range(cfg.n_layers):
        bp = block_params(model.store, f"{prefix}.b{i}", cfg.n_heads)
        h = block_forward(h, bp, mask, drop=(ctx.drop(h.shape), ctx.drop(h.shape)))
    return h


def _final_norm(model: BranchModel, prefix: str, h: Tensor) -> Tensor:
    return ad.layer_norm(h, model.store.leaf(f"{prefix}.lnf.g"), model.store.leaf(f"{prefix}.lnf.b"))


def _gauss_head(model: BranchModel, prefix: str, h_last: Tensor):
    s = model.store
    d_z = model.config.d_z
    hid = ad.tanh(ad.affine(h_last, s.leaf(f"{prefix}.head1.w"), s.leaf(f"{prefix}.head1.b")))
    out = ad.affine(hid, s.leaf(f"{prefix}.head2.w"), s.leaf(f"{prefix}.head2.b"))
    mean = ad.slice_last(out, 0, d_z)
    log_var = ad.clamp(ad.slice_last(out, d_z, 2 * d_z), LOG_VAR_MIN, LOG_VAR_MAX)
    return mean, log_var


def past_trunk_graph(model: BranchModel, xn: np.ndarray, ctx: _Ctx = _EVAL_CTX) -> Tensor:
    h = _embed_sequence(model.store, "embed", xn, model.config.d_model, ctx)
    h = _run_blocks(model, "past", h, None, ctx)
    return _final_norm(model, "past", h)


def encode_past_graph(model: BranchModel, xn: np.ndarray, ctx: _Ctx = _EVAL_CTX):
    """Returns (mean, log_var, past_features) graph nodes for a (B, L, d) batch."""
    h = past_trunk_graph(model, xn, ctx)
    mean, log_var = _gauss_head(model, "past", ad.take_step(h, -1))
    return mean, log_var, h


def encode_future_graph(model: BranchModel, yn: np.ndarray, h_past: Tensor, ctx: _Ctx = _EVAL_CTX):
    cfg = model.config
    h = _embed_sequence(model.store, "fut_embed", yn, cfg.d_model, ctx)
    h = _run_blocks(model, "fut", h, None, ctx)
    bp = block_params(model.store, "fut.cross", cfg.n_heads)
    h = cross_block_forward(h, h_past, bp, None, drop=(ctx.drop(h.shape), ctx.drop(h.shape)))
    h = _final_norm(model, "fut", h)
    return _gauss_head(model, "fut", ad.take_step(h, -1))


def decode_graph(model: BranchModel, xn: np.ndarray, z: Tensor, ctx: _Ctx = _EVAL_CTX):
    """Mixture parameters (logits, means, log_vars) for a batch of latents.

    Decoder tokens are the future-step positional encodings concatenated with
    the broadcast latent and the last step of a causal temporal convolution
    over the past window; causal masking keeps step t blind to steps > t.
    """
    s = model.store
    cfg = model.config
    batch = xn.shape[0]
    l_fut = model.l_fut
    conv = ad.conv1d_causal(Tensor(xn), s.leaf("conv.w"), s.leaf("conv.b"))
    summary = ad.take_step(conv, -1)
    pe = np.broadcast_to(positional_encoding(l_fut, cfg.d_model), (batch, l_fut, cfg.d_model))
    tokens = ad.concat_last([Tensor(pe.copy()), ad.tile_steps(z, l_fut), ad.tile_steps(summary, l_fut)])
    h = ad.affine(tokens, s.leaf("dec.in.w"), s.leaf("dec.in.b"))
    mask = ctx.drop(h.shape)
    if mask is not None:
        h = ad.mul_const(h, mask)
    h = _run_blocks(model, "dec", h, AttnMask.causal(l_fut), ctx)
    h = _final_norm(model, "dec", h)
    raw = ad.affine(h, s.leaf("dec.gmm.w"), s.leaf("dec.gmm.b"))
    k = cfg.n_mix
    logits = ad.slice_last(raw, 0, k)
    means = ad.reshape(ad.slice_last(raw, k, k + k * STATE_DIM), (batch, l_fut, k, STATE_DIM))
    log_vars = ad.clamp(
        ad.reshape(ad.slice_last(raw, k + k * STATE_DIM, k + 2 * k * STATE_DIM), (batch, l_fut, k, STATE_DIM)),
        LOG_VAR_MIN,
        LOG_VAR_MAX,
    )
    return logits, means, log_vars


def kl_graph(mq: Tensor, lq: Tensor, mp: Tensor, lp: Tensor) -> Tensor:
    """Closed-form diagonal-Gaussian KL(q || p) per batch row."""
    d_z = mq.shape[-1]
    e1 = ad.exp(ad.sub(lq, lp))
    dm = ad.sub(mq, mp)
    e2 = ad.mul(ad.mul(dm, dm), ad.exp(ad.neg(lp)))
    inner = ad.add(ad.add(e1, e2), ad.sub(lp, lq))
    return ad.scale(ad.add_const(ad.sum_last(inner), -float(d_z)), 0.5)


def gmm_loglik_graph(logits: Tensor, means: Tensor, log_vars: Tensor, yn: np.ndarray) -> Tensor:
    """Per-step mixture log density of the (B, L, 6) targets: (B, L) tensor."""
    logw = ad.sub(logits, ad.logsumexp(logits, keepdims=True))
    y = Tensor(yn[:, :, None, :])
    d = ad.sub(y, means)
    quad = ad.sum_last(ad.mul(ad.mul(d, d), ad.exp(ad.neg(log_vars))))
    comp = ad.scale(ad.add_const(ad.add(quad, ad.sum_last(log_vars)), STATE_DIM * _LOG_2PI), -0.5)
    return ad.logsumexp(ad.add(logw, comp))


def training_graph(model: BranchModel, xn: np.ndarray, yn: np.ndarray, eps: np.ndarray,
                   weights, ctx: _Ctx):
    """Build the per-batch loss graph; returns (loss, kl, recon) scalar nodes.

    ``eps`` is the (B, d_z) standard-normal draw used for the
    reparameterized latent sample from q.
    """
    mp, lp, h_past = encode_past_graph(model, xn, ctx)
    mq, lq = encode_future_graph(model, yn, h_past, ctx)
    z = ad.add(mq, ad.mul_const(ad.exp(ad.scale(lq, 0.5)), eps))
    logits, means, log_vars = decode_graph(model, xn, z, ctx)
    loglik = gmm_loglik_graph(logits, means, log_vars, yn)
    kl = ad.mean_all(kl_graph(mq, lq, mp, lp))
    recon = ad.neg(ad.mean_all(ad.sum_last(loglik)))
    loss = ad.add(ad.scale(kl, weights.kl_weight), ad.scale(recon, weights.recon_weight))
    return loss, kl, recon


# ------------------------------------------------------------- public ops

def encode_past(model: BranchModel, x) -> GaussianParams:
    """Latent prior parameters p(Z|X) for one past window."""
    xn = model.norm.norm_in(_check_past(model, _as_window(x, model)))
    with no_grad():
        mean, log_var, _ = encode_past_graph(model, xn)
    return GaussianParams(mean.data[0], log_var.data[0])


def encode_future(model: BranchModel, x, y) -> GaussianParams:
    """Latent posterior parameters q(Z|X,Y) for one (past, future) pair."""
    xw = _check_past(model, _as_window(x, model))
    xn = model.norm.norm_in(xw)
    yn = np.asarray(y, dtype=np.float64)
    if yn.ndim == 2:
        yn = yn[None]
    if yn.shape[1:] != (model.l_fut, STATE_DIM):
        raise ConfigError(f"future window shape {yn.shape[1:]} != ({model.l_fut}, {STATE_DIM})")
    yn = model.norm.norm_out(yn, Normalization.anchor_of(xw))
    with no_grad():
        _, _, h_past = encode_past_graph(model, xn)
        mean, log_var = encode_future_graph(model, yn, h_past)
    return GaussianParams(mean.data[0], log_var.data[0])


def decode(model: BranchModel, x, z) -> GmmSequence:
    """Mixture sequence p(Y|X,z) for one window and latent, in real units."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("latent z must be finite")
    weights, means, variances = decode_arrays(model, _check_past(model, _as_window(x, model)), z[None])
    return GmmSequence(weights[0], means[0], variances[0])


def decode_arrays(model: BranchModel, x: np.ndarray, z: np.ndarray):
    """Batched decode returning denormalized (weights, means, variances) arrays."""
    x = _check_past(model, x)
    if x.shape[0] == 1 and z.shape[0] > 1:
        x = np.broadcast_to(x, (z.shape[0],) + x.shape[1:])
    xn = model.norm.norm_in(x)
    with no_grad():
        logits, means, log_vars = decode_graph(model, xn, Tensor(z))
    w = np.exp(logits.data - logits.data.max(axis=-1, keepdims=True))
    w /= w.sum(axis=-1, keepdims=True)
    mean_real = means.data * model.norm.out_std + model.norm.out_mean
    if model.norm.center:
        mean_real[..., 0:3] += Normalization.anchor_of(x)[:, None, None, :]
    var_real = np.exp(log_vars.data) * model.norm.out_std**2
    return w, mean_real, np.maximum(var_real, 1e-8)


def _as_window(x, model: BranchModel) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x
    if hasattr(x, "past"):  # WindowPair
        x = x.past
    if len(x) and isinstance(x[0], StateSample):
        return sample_matrix(x, with_force=model.branch is Branch.HUMAN)
    return np.asarray(x, dtype=np.float64)


# ------------------------------------------------------------- persistence

def save_branch(model: BranchModel, path) -> None:
    headers = {
        "NETCFG": {
            **model.config.to_dict(),
            "branch": model.branch.value,
            "d_in": model.input_dim,
            "l_obs": model.l_obs,
            "l_fut": model.l_fut,
        },
        "NORM": model.norm.to_dict(),
    }
    save_checkpoint(path, headers, model.store)


def load_branch(path) -> BranchModel:
    headers, store = load_checkpoint(path)
    net = headers["NETCFG"]
    cfg = NetConfig.from_dict(net)
    model = BranchModel(
        branch=Branch(net["branch"]),
        config=cfg,
        store=store,
        norm=Normalization.from_dict(headers["NORM"]),
        l_obs=int(net["l_obs"]),
        l_fut=int(net["l_fut"]),
    )
    if net.get("d_in") != model.input_dim:
        raise ConfigError(f"checkpoint d_in {net.get('d_in')} inconsistent with branch {model.branch}")
    return model
