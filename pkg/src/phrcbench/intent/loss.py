"""Latent-Gaussian and mixture-output types plus the weighted training loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0
VAR_FLOOR = 1e-8
_LOG_2PI = float(np.log(2.0 * np.pi))


class LossError(ValueError):
    """Non-finite likelihood; ``step`` is the offending future-step index."""

    def __init__(self, msg: str, step: int):
        super().__init__(f"{msg} (future step {step})")
        self.step = step


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """Diagonal Gaussian over the latent code: mean and log variance."""

    mean: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        log_var = np.asarray(self.log_var, dtype=np.float64)
        if mean.shape != log_var.shape:
            raise ValueError("mean and log_var shapes differ")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_var))):
            raise ValueError("Gaussian parameters must be finite")
        if np.any(log_var < LOG_VAR_MIN - 1e-12) or np.any(log_var > LOG_VAR_MAX + 1e-12):
            raise ValueError(f"log_var outside clamp range [{LOG_VAR_MIN}, {LOG_VAR_MAX}]")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_var", log_var)

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)


@dataclass(frozen=True, eq=False)
class GmmSequence:
    """Per-future-step diagonal Gaussian mixture over [pos, vel] states.

    ``weights`` is (L, K) on the simplex, ``means`` and ``variances`` are
    (L, K, 6).
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        v = np.asarray(self.variances, dtype=np.float64)
        if w.ndim != 2 or m.shape != w.shape + (6,) or v.shape != m.shape:
            raise ValueError(f"inconsistent GMM shapes {w.shape}, {m.shape}, {v.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(m)) and np.all(np.isfinite(v))):
            raise ValueError("GMM parameters must be finite")
        if np.max(np.abs(w.sum(axis=-1) - 1.0)) > 1e-9:
            raise ValueError("mixture weights must sum to 1 per step")
        if np.any(w < -1e-12):
            raise ValueError("mixture weights must be nonnegative")
        if np.any(v < VAR_FLOOR):
            raise ValueError(f"variances below floor {VAR_FLOOR}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def n_steps(self) -> int:
        return self.weights.shape[0]

    @property
    def n_mix(self) -> int:
        return self.weights.shape[1]

    def log_likelihood(self, y: np.ndarray) -> np.ndarray:
        """Per-step log density of a (L, 6) target sequence."""
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.n_steps, 6):
            raise ValueError(f"target shape {y.shape} != ({self.n_steps}, 6)")
        d = y[:, None, :] - self.means
        comp = -0.5 * (d * d / self.variances + np.log(self.variances) + _LOG_2PI).sum(axis=-1)
        logw = np.log(np.maximum(self.weights, 1e-300))
        a = logw + comp
        m = a.max(axis=-1)
        return m + np.log(np.exp(a - m[:, None]).sum(axis=-1))

    def top_component_means(self) -> np.ndarray:
        """Per-step mean of the highest-weight component (ties -> lowest index)."""
        idx = np.argmax(self.weights, axis=-1)
        return self.means[np.arange(self.n_steps), idx]


@dataclass(frozen=True)
class LossWeights:
    kl_weight: float = 1.0
    recon_weight: float = 1.0

    def __post_init__(self):
        if self.kl_weight < 0 or self.recon_weight < 0:
            raise ValueError("loss weights must be nonnegative")


def kl_gaussian(q: GaussianParams, p: GaussianParams) -> float:
    """Closed-form KL(q || p) for diagonal Gaussians."""
    lq, lp = q.log_var, p.log_var
    val = 0.5 * np.sum(np.exp(lq - lp) + (q.mean - p.mean) ** 2 * np.exp(-lp) - 1.0 + lp - lq)
    return float(val)


def elbo_loss(p: GaussianParams, q: GaussianParams, gmm: GmmSequence,
              y: np.ndarray, w: LossWeights) -> float:
    """Weighted negative evidence lower bound for one window:
    ``kl_weight * KL(q||p) - recon_weight * sum_t log p(y_t | gmm_t)``."""
    ll = gmm.log_likelihood(y)
    bad = np.flatnonzero(~np.isfinite(ll))
    if bad.size:
        raise LossError("non-finite log-likelihood", step=int(bad[0]))
    return w.kl_weight * kl_gaussian(q, p) - w.recon_weight * float(ll.sum())
