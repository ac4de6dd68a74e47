"""Cooperative-game role allocation.

Builds the admittance state space, blends the two players' tracking/effort
weights by the force-driven role coefficient kappa, composes the shared
reference trajectory, solves the continuous algebraic Riccati equation, and
emits the optimal control effort.

With the translational reduction the state is [pos(3), vel(3)], so A, B, Q,
R are all 6x6 and the effort vector stacks [f_h(3), f_r(3)].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.linalg

STATE_DIM = 6
EFFORT_DIM = 6
ARE_RESIDUAL_TOL = 1e-9
ARE_ACCEPT_TOL = 1e-6
ARE_MAX_ITER = 100
SYM_TOL = 1e-12


class AllocatorError(ValueError):
    pass


def _diag3(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape == (3,):
        arr = np.diag(arr)
    if arr.shape != (3, 3):
        raise AllocatorError(f"{name} must be a 3-vector of diagonals or a 3x3 matrix")
    if np.any(arr != np.diag(np.diag(arr))):
        raise AllocatorError(f"{name} must be diagonal")
    return arr


def _check_symmetric(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if np.max(np.abs(m - m.T)) > SYM_TOL:
        raise AllocatorError(f"{name} must be symmetric within {SYM_TOL}")
    return m


def _min_eig(m: np.ndarray) -> float:
    return float(np.min(np.linalg.eigvalsh(0.5 * (m + m.T))))


@dataclass(frozen=True, eq=False)
class ImpedanceParams:
    """Desired inertia / damping / stiffness of the admittance model."""

    m: np.ndarray
    d: np.ndarray
    k: np.ndarray

    def __post_init__(self):
        for name in ("m", "d", "k"):
            arr = _diag3(getattr(self, name), name.upper())
            if np.any(np.diag(arr) <= 0):
                raise AllocatorError(f"{name.upper()} must have strictly positive diagonal")
            object.__setattr__(self, name, arr)

    @property
    def m_inv(self) -> np.ndarray:
        return np.diag(1.0 / np.diag(self.m))


@dataclass(frozen=True, eq=False)
class CostWeights:
    """Tracking-error weights (6x6 PSD) and effort weights (3x3 PD) per player."""

    q_hh: np.ndarray
    q_hr: np.ndarray
    q_rh: np.ndarray
    q_rr: np.ndarray
    r_h: np.ndarray
    r_r: np.ndarray

    def __post_init__(self):
        for name in ("q_hh", "q_hr", "q_rh", "q_rr"):
            m = _check_symmetric(getattr(self, name), name)
            if m.shape != (STATE_DIM, STATE_DIM):
                raise AllocatorError(f"{name} must be {STATE_DIM}x{STATE_DIM}")
            if _min_eig(m) < -1e-10:
                raise AllocatorError(f"{name} must be positive semidefinite")
            object.__setattr__(self, name, m)
        for name in ("r_h", "r_r"):
            m = _check_symmetric(getattr(self, name), name)
            if m.shape != (3, 3):
                raise AllocatorError(f"{name} must be 3x3")
            if _min_eig(m) <= 0:
                raise AllocatorError(f"{name} must be positive definite")
            object.__setattr__(self, name, m)


@dataclass(frozen=True, eq=False)
class StateSpace:
    """dY/dt = A Y + B u with Y = [pos, vel] and u = [f_h, f_r]."""

    a: np.ndarray
    b: np.ndarray


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    p: np.ndarray
    gain: np.ndarray  # R^-1 B' P, used as u = -gain (Y - Y_ref)
    residual: float


@dataclass(frozen=True, eq=False)
class AllocationState:
    """Role-allocation bookkeeping carried between control ticks."""

    kappa: float
    alpha: float
    y_ref: np.ndarray
    u: np.ndarray
    solution: RiccatiSolution
    kappa_at_solve: float
    solve_count: int
    f_r: np.ndarray
    stale: bool = False


def build_state_space(imp: ImpedanceParams) -> StateSpace:
    """Exact block construction A = [[0, I], [-M^-1 K, -M^-1 D]],
    B = [[0, 0], [M^-1, M^-1]]."""
    m_inv = imp.m_inv
    a = np.zeros((STATE_DIM, STATE_DIM))
    a[0:3, 3:6] = np.eye(3)
    a[3:6, 0:3] = -m_inv @ imp.k
    a[3:6, 3:6] = -m_inv @ imp.d
    b = np.zeros((STATE_DIM, EFFORT_DIM))
    b[3:6, 0:3] = m_inv
    b[3:6, 3:6] = m_inv
    return StateSpace(a, b)


def kappa_from_force(f_h, alpha: float) -> float:
    """Role coefficient 1 / (1 + exp(-alpha ||f_h||)); 0.5 at zero force.

    Kept strictly below 1: where the sigmoid rounds to 1.0 in double
    precision it is capped at the largest representable value under 1.
    """
    if alpha <= 0:
        raise AllocatorError("alpha must be positive")
    norm = float(np.linalg.norm(np.asarray(f_h, dtype=np.float64)))
    kappa = 1.0 / (1.0 + math.exp(-alpha * norm))
    return min(kappa, math.nextafter(1.0, 0.0))


def blend_costs(kappa: float, w: CostWeights):
    """Shared-game weights: Q_k = k (Q_hh + Q_hr) + (1-k)(Q_rh + Q_rr) and
    R_k = blockdiag(k R_h, (1-k) R_r).  Endpoints are rejected (singular R)."""
    if not 0.0 < kappa < 1.0:
        raise AllocatorError(f"kappa={kappa} must lie strictly inside (0, 1)")
    q_k = kappa * (w.q_hh + w.q_hr) + (1.0 - kappa) * (w.q_rh + w.q_rr)
    r_k = np.zeros((EFFORT_DIM, EFFORT_DIM))
    r_k[0:3, 0:3] = kappa * w.r_h
    r_k[3:6, 3:6] = (1.0 - kappa) * w.r_r
    if _min_eig(q_k) < -1e-10:
        raise AllocatorError("blended Q_k is not positive semidefinite")
    return q_k, r_k


def compose_reference(kappa: float, y_h: np.ndarray, y_r: np.ndarray, w: CostWeights) -> np.ndarray:
    """Per-step shared reference Q_k^-1 (Q_h y_h + Q_r y_r) with
    Q_h = k Q_hh + (1-k) Q_hr and Q_r = k Q_rh + (1-k) Q_rr."""
    y_h = np.atleast_2d(np.asarray(y_h, dtype=np.float64))
    y_r = np.atleast_2d(np.asarray(y_r, dtype=np.float64))
    if y_h.shape != y_r.shape or y_h.shape[1] != STATE_DIM:
        raise AllocatorError(f"reference sequences must share shape (L, {STATE_DIM})")
    q_k, _ = blend_costs(kappa, w)
    q_h = kappa * w.q_hh + (1.0 - kappa) * w.q_hr
    q_r = kappa * w.q_rh + (1.0 - kappa) * w.q_rr
    rhs = y_h @ q_h.T + y_r @ q_r.T
    try:
        out = np.linalg.solve(q_k, rhs.T).T
    except np.linalg.LinAlgError as exc:
        raise AllocatorError(f"blended Q_k is singular: {exc}") from exc
    return out


def are_residual(a, b, q, r_inv, p) -> float:
    res = p @ a + a.T @ p + q - p @ b @ r_inv @ b.T @ p
    return float(np.linalg.norm(res, "fro"))


def is_hurwitz(m: np.ndarray, margin: float = 0.0) -> bool:
    return bool(np.all(np.linalg.eigvals(m).real < -margin))


def _check_stabilizable(a: np.ndarray, b: np.ndarray) -> None:
    """PBH test on every eigenvalue with nonnegative real part."""
    n = a.shape[0]
    for lam in np.linalg.eigvals(a):
        if lam.real < 0:
            continue
        test = np.hstack([lam * np.eye(n) - a, b])
        if np.linalg.matrix_rank(test, tol=1e-9) < n:
            raise AllocatorError(f"(A, B) not stabilizable at eigenvalue {lam}")


def _hamiltonian_p(a, b, q, r_inv) -> np.ndarray:
    """Stabilizing solution from the stable invariant subspace of the
    Hamiltonian matrix (dense eigen-decomposition; cold-start fallback)."""
    n = a.shape[0]
    ham = np.block([[a, -b @ r_inv @ b.T], [-q, -a.T]])
    vals, vecs = np.linalg.eig(ham)
    stable = vals.real < 0
    if stable.sum() != n:
        raise AllocatorError(f"Hamiltonian has {int(stable.sum())} stable eigenvalues, expected {n}")
    basis = vecs[:, stable]
    x1, x2 = basis[:n], basis[n:]
    p = np.real(x2 @ np.linalg.inv(x1))
    return 0.5 * (p + p.T)


def solve_are(ss: StateSpace, q_k: np.ndarray, r_k: np.ndarray,
              warm_start: Optional[np.ndarray] = None) -> RiccatiSolution:
    """Stabilizing solution of P A + A' P + Q - P B R^-1 B' P = 0.

    Newton-Kleinman iteration warm-started from a previous P when one is
    supplied and its gain still stabilizes; with an open-loop-stable plant the
    zero gain seeds the cold start, otherwise the Hamiltonian eigenvector
    solution does.
    """
    a, b = ss.a, ss.b
    q_k = _check_symmetric(q_k, "Q_k")
    r_k = _check_symmetric(r_k, "R_k")
    if _min_eig(q_k) < -1e-10:
        raise AllocatorError("Q_k must be positive semidefinite")
    if _min_eig(r_k) <= 0:
        raise AllocatorError("R_k must be positive definite")
    _check_stabilizable(a, b)
    r_inv = np.linalg.inv(r_k)

    gain0 = None
    if warm_start is not None:
        cand = r_inv @ b.T @ warm_start
        if is_hurwitz(a - b @ cand):
            gain0 = cand
    if gain0 is None and is_hurwitz(a):
        gain0 = np.zeros((b.shape[1], a.shape[0]))
    if gain0 is None:
        gain0 = r_inv @ b.T @ _hamiltonian_p(a, b, q_k, r_inv)
        if not is_hurwitz(a - b @ gain0):
            raise AllocatorError("cold-start Hamiltonian gain is not stabilizing")

    gain = gain0
    p = None
    for _ in range(ARE_MAX_ITER):
        a_cl = a - b @ gain
        rhs = -(q_k + gain.T @ r_k @ gain)
        p = scipy.linalg.solve_continuous_lyapunov(a_cl.T, rhs)
        p = 0.5 * (p + p.T)
        gain = r_inv @ b.T @ p
        res = are_residual(a, b, q_k, r_inv, p)
        if res < ARE_RESIDUAL_TOL:
            break
    else:
        raise AllocatorError(f"Riccati iteration did not converge; residual {res:.3e}")

    if not is_hurwitz(a - b @ gain):
        raise AllocatorError("solved gain does not stabilize the closed loop")
    if _min_eig(p) < -1e-9:
        raise AllocatorError("Riccati solution P is not positive semidefinite")
    return RiccatiSolution(p=p, gain=gain, residual=res)


def control_input(sol: RiccatiSolution, y: np.ndarray, y_ref: np.ndarray) -> np.ndarray:
    """Optimal effort u = -gain (Y - Y_ref); rows [f_h_opt, f_r_opt].

    The robot actuates the f_r block; the f_h block is the game's model of
    the human and is only logged.
    """
    return -sol.gain @ (np.asarray(y, dtype=np.float64) - np.asarray(y_ref, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class PredictionPair:
    """Latest dual-branch forecasts, stamped with the tick they were made at."""

    y_h: np.ndarray  # (L_fut, 6)
    y_r: np.ndarray
    tick: int


def allocator_init(imp: ImpedanceParams, w: CostWeights, alpha: float) -> AllocationState:
    """Initial allocation at zero force (kappa = 0.5)."""
    ss = build_state_space(imp)
    q_k, r_k = blend_costs(0.5, w)
    sol = solve_are(ss, q_k, r_k)
    return AllocationState(
        kappa=0.5, alpha=alpha, y_ref=np.zeros(STATE_DIM), u=np.zeros(EFFORT_DIM),
        solution=sol, kappa_at_solve=0.5, solve_count=1, f_r=np.zeros(3),
    )


def allocator_tick(state: AllocationState, f_h_measured: np.ndarray, y: np.ndarray,
                   predictions: PredictionPair, w: CostWeights, imp: ImpedanceParams, *,
                   tick: int, kappa_tol: float = 1e-3, max_age_ticks: int = 2,
                   kappa_override: Optional[float] = None):
    """One role-allocation step.

    Updates kappa from the measured human force, re-blends the game weights,
    re-solves the Riccati equation only when kappa moved more than
    ``kappa_tol`` since the cached solve, composes the shared reference from
    the first step of both forecasts, and returns ``(f_r, new_state)``.
    Stale predictions hold the previous command and raise the stale flag.
    ``kappa_override`` pins the role coefficient (fixed-blend baseline runs).
    """
    if predictions is None or tick - predictions.tick > max_age_ticks:
        return state.f_r, replace(state, stale=True)

    kappa = kappa_from_force(f_h_measured, state.alpha) if kappa_override is None else kappa_override
    sol = state.solution
    kappa_at_solve = state.kappa_at_solve
    solve_count = state.solve_count
    if abs(kappa - kappa_at_solve) > kappa_tol:
        q_k, r_k = blend_costs(kappa, w)
        sol = solve_are(build_state_space(imp), q_k, r_k, warm_start=state.solution.p)
        kappa_at_solve = kappa
        solve_count += 1

    # the control horizon starts now: pick the forecast entry aligned with
    # t + dt, accounting for the age of the current prediction
    step = min(tick - predictions.tick, predictions.y_h.shape[0] - 1)
    y_ref = compose_reference(kappa, predictions.y_h[step], predictions.y_r[step], w)[0]
    u = control_input(sol, y, y_ref)
    f_r = u[3:6]
    new_state = AllocationState(
        kappa=kappa, alpha=state.alpha, y_ref=y_ref, u=u, solution=sol,
        kappa_at_solve=kappa_at_solve, solve_count=solve_count, f_r=f_r, stale=False,
    )
    return f_r, new_state


# ------------------------------------------------------------ configuration

_DEFAULT_Q_DIAG = (1.0, 1.0, 1.0, 0.0001, 0.0001, 0.0001)


@dataclass(frozen=True, eq=False)
class ControllerConfig:
    impedance: ImpedanceParams
    weights: CostWeights
    alpha: float = 0.3
    kappa_tol: float = 1e-3
    control_hz: float = 100.0
    predict_hz: float = 50.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise AllocatorError("alpha must be positive")
        if self.control_hz <= 0 or self.predict_hz <= 0:
            raise AllocatorError("rates must be positive")
        if self.control_hz % self.predict_hz != 0:
            raise AllocatorError("control_hz must be an integer multiple of predict_hz")

    @staticmethod
    def default() -> "ControllerConfig":
        return ControllerConfig(
            impedance=ImpedanceParams(m=[10.0] * 3, d=[100.0] * 3, k=[200.0] * 3),
            weights=CostWeights(
                q_hh=np.diag(_DEFAULT_Q_DIAG),
                q_hr=np.zeros((6, 6)),
                q_rh=np.zeros((6, 6)),
                q_rr=np.diag(_DEFAULT_Q_DIAG),
                r_h=np.diag([0.0005] * 3),
                r_r=np.diag([0.0001] * 3),
            ),
        )

    def to_dict(self) -> dict:
        w = self.weights
        return {
            "M": np.diag(self.impedance.m).tolist(),
            "D": np.diag(self.impedance.d).tolist(),
            "K": np.diag(self.impedance.k).tolist(),
            "Q_hh": np.diag(w.q_hh).tolist(),
            "Q_hr": np.diag(w.q_hr).tolist(),
            "Q_rh": np.diag(w.q_rh).tolist(),
            "Q_rr": np.diag(w.q_rr).tolist(),
            "R_h": np.diag(w.r_h).tolist(),
            "R_r": np.diag(w.r_r).tolist(),
            "alpha": self.alpha,
            "kappa_tol": self.kappa_tol,
            "control_hz": self.control_hz,
            "predict_hz": self.predict_hz,
        }

    @staticmethod
    def from_dict(d: dict) -> "ControllerConfig":
        base = ControllerConfig.default().to_dict()
        unknown = set(d) - set(base)
        if unknown:
            raise AllocatorError(f"unknown controller config keys: {sorted(unknown)}")
        base.update(d)
        return ControllerConfig(
            impedance=ImpedanceParams(m=base["M"], d=base["D"], k=base["K"]),
            weights=CostWeights(
                q_hh=np.diag(base["Q_hh"]),
                q_hr=np.diag(base["Q_hr"]),
                q_rh=np.diag(base["Q_rh"]),
                q_rr=np.diag(base["Q_rr"]),
                r_h=np.diag(base["R_h"]),
                r_r=np.diag(base["R_r"]),
            ),
            alpha=float(base["alpha"]),
            kappa_tol=float(base["kappa_tol"]),
            control_hz=float(base["control_hz"]),
            predict_hz=float(base["predict_hz"]),
        )

    @staticmethod
    def from_json(path) -> "ControllerConfig":
        with open(path) as fh:
            return ControllerConfig.from_dict(json.load(fh))
