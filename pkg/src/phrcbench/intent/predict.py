"""Prediction-time sampling: most-likely decode, best-of-N draws, and the
dual-branch call used by the role allocator."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..core import StateSample, sample_matrix
from ..metrics import metric_ade
from .model import BranchModel, _as_window, _check_past, decode_arrays, encode_past


class StaleWindowError(RuntimeError):
    pass


def _top_component_path(weights: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Per-step highest-weight component mean; ties resolve to the lowest index."""
    idx = np.argmax(weights, axis=-1)
    steps = np.arange(weights.shape[-2])
    if weights.ndim == 2:
        return means[steps, idx]
    return means[np.arange(weights.shape[0])[:, None], steps[None, :], idx]


def sample_most_likely(model: BranchModel, x) -> np.ndarray:
    """Deterministic prediction: decode at the prior mean, then take the
    highest-weight component mean per step.  Returns (l_fut, 6) in real units."""
    xw = _check_past(model, _as_window(x, model))
    prior = encode_past(model, xw[0])
    weights, means, _ = decode_arrays(model, xw, prior.mean[None])
    return _top_component_path(weights[0], means[0])


def sample_best_of_n(model: BranchModel, x, n: int, gt: np.ndarray, seed: int):
    """Draw ``n`` latents from p(Z|X) (the prior mean is always candidate 0),
    decode each, and return ``(best_candidate, ade_mm)`` against ``gt``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    xw = _check_past(model, _as_window(x, model))
    prior = encode_past(model, xw[0])
    rng = np.random.default_rng(seed)
    z = np.repeat(prior.mean[None], n, axis=0)
    if n > 1:
        z[1:] += prior.std * rng.standard_normal((n - 1, z.shape[1]))
    weights, means, _ = decode_arrays(model, xw, z)
    candidates = _top_component_path(weights, means)
    gt = np.asarray(gt, dtype=np.float64)
    ades = np.array([metric_ade(c[:, :3], gt[:, :3]) for c in candidates])
    best = int(np.argmin(ades))
    return candidates[best], float(ades[best])


def predict_dual(robot_model: BranchModel, human_model: BranchModel,
                 past_r: Sequence[StateSample], past_h: Sequence[StateSample]):
    """Most-likely futures (Y_r, Y_h) from both branches at a shared T_now."""
    if hasattr(past_r, "past"):
        past_r = past_r.past
    if hasattr(past_h, "past"):
        past_h = past_h.past
    dt = past_r[1].t - past_r[0].t
    if abs(past_r[-1].t - past_h[-1].t) > dt / 2:
        raise StaleWindowError(
            f"branch windows out of sync: {past_r[-1].t} vs {past_h[-1].t} (dt={dt})"
        )
    y_r = sample_most_likely(robot_model, sample_matrix(past_r, with_force=False))
    y_h = sample_most_likely(human_model, sample_matrix(past_h, with_force=True))
    return y_r, y_h
