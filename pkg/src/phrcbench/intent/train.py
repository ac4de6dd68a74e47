"""Training loop: reparameterized-sampling stochastic optimization of the
weighted negative ELBO with adaptive-moment updates."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..core import Branch, Trajectory, slice_windows, window_arrays
from ..nn import backward
from ..nn.optim import AdamState, adam_step
from .loss import LossWeights
from .model import BranchModel, Normalization, _Ctx, save_branch, training_graph


@dataclass
class EpochStats:
    epoch: int
    loss: float
    kl: float
    recon: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    skipped_steps: int = 0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "kl", "recon"])
            for e in self.epochs:
                writer.writerow([e.epoch, repr(e.loss), repr(e.kl), repr(e.recon)])


def corpus_windows(trajs: Sequence[Trajectory], l_obs: int, l_fut: int, stride: int = 1):
    """Stack every training window of a corpus into (X, Y) arrays."""
    xs, ys = [], []
    for traj in trajs:
        for w in slice_windows(traj, l_obs, l_fut, stride):
            x, y = window_arrays(w, traj.branch)
            xs.append(x)
            ys.append(y)
    if not xs:
        return (np.zeros((0, l_obs, 0)), np.zeros((0, l_fut, 6)))
    return np.stack(xs), np.stack(ys)


def train(model: BranchModel, corpus: Sequence[Trajectory], *, epochs: int, batch: int,
          lr: float, weights: LossWeights = LossWeights(), seed: int = 0, stride: int = 1,
          checkpoint_path=None, report_path=None, fit_norm: bool = True) -> TrainReport:
    """Optimize ``model`` in place on the corpus windows; returns per-epoch stats.

    The corpus branch must match the model branch; an empty window set is an
    error.  A non-finite loss aborts with the epoch/batch index; non-finite
    gradients skip the step and are counted in the report.
    """
    for traj in corpus:
        if Branch(traj.branch) is not model.branch:
            raise ValueError(f"corpus branch {traj.branch} != model branch {model.branch}")
    x, y = corpus_windows(corpus, model.l_obs, model.l_fut, stride)
    return train_windows(model, x, y, epochs=epochs, batch=batch, lr=lr, weights=weights,
                         seed=seed, checkpoint_path=checkpoint_path, report_path=report_path,
                         fit_norm=fit_norm)


def train_windows(model: BranchModel, x: np.ndarray, y: np.ndarray, *, epochs: int, batch: int,
                  lr: float, weights: LossWeights = LossWeights(), seed: int = 0,
                  checkpoint_path=None, report_path=None, fit_norm: bool = True) -> TrainReport:
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty corpus: no training windows")
    if x.shape[2] != model.input_dim:
        raise ValueError(f"window dim {x.shape[2]} != model input dim {model.input_dim}")
    if fit_norm:
        model.norm = Normalization.fit(x, y)
    xn = model.norm.norm_in(x)
    yn = model.norm.norm_out(y, Normalization.anchor_of(x))

    rng = np.random.default_rng(seed)
    adam = AdamState()
    report = TrainReport()
    d_z = model.config.d_z
    params = list(model.store)

    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(3)
        batches = 0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            ctx = _Ctx(rng, model.config.dropout)
            eps = rng.standard_normal((len(idx), d_z))
            model.store.zero_grads()
            loss, kl, recon = training_graph(model, xn[idx], yn[idx], eps, weights, ctx)
            if not np.isfinite(loss.data):
                raise RuntimeError(f"non-finite loss at epoch {epoch}, batch {batches}")
            backward(loss)
            model.store.collect_grads()
            if not adam_step(params, adam, lr):
                report.skipped_steps += 1
            sums += (loss.item(), kl.item(), recon.item())
            batches += 1
        report.epochs.append(EpochStats(epoch, *(sums / batches)))

    if checkpoint_path is not None:
        save_branch(model, checkpoint_path)
    if report_path is not None:
        report.write_csv(report_path)
    return report
