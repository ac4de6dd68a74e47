"""Displacement-error and collaboration metrics.

ADE/FDE are reported in millimetres over predicted positions.  The
collaboration metrics follow the force log of an episode:

* theta: mean angle between robot and human force over guided ticks (deg),
* i_asst: mean projection of the robot force onto the human force direction,
* mu: fraction of guided ticks with theta < 90 deg,
* work: human mechanical work, sum of f_h . dx over the whole episode.

"Guided" ticks are those with ||f_h|| above ``f_eps``; when the robot force
is exactly zero on a guided tick the angle is defined as 90 deg (neutral).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

F_EPS = 0.5  # N, guided-phase inclusion threshold


def metric_ade(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean L2 position error over the future horizon, in mm."""
    pred = np.asarray(pred, dtype=np.float64)[:, :3]
    gt = np.asarray(gt, dtype=np.float64)[:, :3]
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=1).mean() * 1000.0)


def metric_fde(pred: np.ndarray, gt: np.ndarray) -> float:
    """L2 position error at the final step, in mm."""
    pred = np.asarray(pred, dtype=np.float64)[:, :3]
    gt = np.asarray(gt, dtype=np.float64)[:, :3]
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred[-1] - gt[-1]) * 1000.0)


@dataclass(frozen=True)
class PhrcMetrics:
    theta_deg: Optional[float]
    i_asst: Optional[float]
    mu: Optional[float]
    work: float
    guided_ticks: int

    def to_dict(self) -> dict:
        return {
            "theta_deg": self.theta_deg,
            "i_asst": self.i_asst,
            "mu": self.mu,
            "work": self.work,
            "guided_ticks": self.guided_ticks,
        }


def metric_phrc(x: np.ndarray, f_h: np.ndarray, f_r: np.ndarray,
                guided_only: bool = True, f_eps: float = F_EPS) -> PhrcMetrics:
    """Collaboration metrics over an episode log.

    ``x``, ``f_h``, ``f_r`` are (N, 3) position and force series.  With
    ``guided_only`` the angle metrics use only guided ticks; work always
    integrates over the full episode.
    """
    x = np.asarray(x, dtype=np.float64)
    f_h = np.asarray(f_h, dtype=np.float64)
    f_r = np.asarray(f_r, dtype=np.float64)
    if not (x.shape == f_h.shape == f_r.shape):
        raise ValueError("x, f_h, f_r must share shape")

    nh = np.linalg.norm(f_h, axis=1)
    included = nh > f_eps if guided_only else np.ones(len(x), dtype=bool)
    work = float(np.sum(f_h[:-1] * np.diff(x, axis=0)))

    n_inc = int(included.sum())
    if n_inc == 0:
        return PhrcMetrics(None, None, None, work, 0)

    fh_i, fr_i, nh_i = f_h[included], f_r[included], nh[included]
    nr_i = np.linalg.norm(fr_i, axis=1)
    dots = np.sum(fh_i * fr_i, axis=1)
    cos = np.zeros(n_inc)
    ok = nr_i > 0
    cos[ok] = np.clip(dots[ok] / (nr_i[ok] * nh_i[ok]), -1.0, 1.0)
    theta = np.degrees(np.arccos(cos))
    i_asst = dots / nh_i
    return PhrcMetrics(
        theta_deg=float(theta.mean()),
        i_asst=float(i_asst.mean()),
        mu=float(np.mean(theta < 90.0)),
        work=work,
        guided_ticks=n_inc,
    )
