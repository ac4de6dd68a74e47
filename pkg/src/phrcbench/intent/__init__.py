"""Dual-branch trajectory-intent estimator built on the nn toolkit."""

from .loss import GaussianParams, GmmSequence, LossError, LossWeights, elbo_loss, kl_gaussian
from .model import BranchModel, Normalization, decode, encode_future, encode_past, load_branch, save_branch
from .predict import StaleWindowError, predict_dual, sample_best_of_n, sample_most_likely
from .train import TrainReport, corpus_windows, train, train_windows

__all__ = [
    "BranchModel",
    "GaussianParams",
    "GmmSequence",
    "LossError",
    "LossWeights",
    "Normalization",
    "StaleWindowError",
    "TrainReport",
    "corpus_windows",
    "decode",
    "elbo_loss",
    "encode_future",
    "encode_past",
    "kl_gaussian",
    "load_branch",
    "predict_dual",
    "sample_best_of_n",
    "sample_most_likely",
    "save_branch",
    "train",
    "train_windows",
]
