"""Smooth task-space paths: quintic (minimum-jerk) segments, straight
point-to-point profiles, and lateral detour arcs around an obstacle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def quintic_coeffs(p0, v0, a0, p1, v1, a1, duration: float) -> np.ndarray:
    """Coefficients (6, dim) of the jerk-minimizing quintic matching the
    boundary position/velocity/acceleration."""
    p0, v0, a0 = (np.asarray(v, dtype=np.float64) for v in (p0, v0, a0))
    p1, v1, a1 = (np.asarray(v, dtype=np.float64) for v in (p1, v1, a1))
    T = float(duration)
    if T <= 0:
        raise ValueError("duration must be positive")
    c = np.zeros((6,) + p0.shape)
    c[0] = p0
    c[1] = v0
    c[2] = a0 / 2.0
    d = p1 - p0
    c[3] = (20.0 * d - (8.0 * v1 + 12.0 * v0) * T - (3.0 * a0 - a1) * T**2) / (2.0 * T**3)
    c[4] = (-30.0 * d + (14.0 * v1 + 16.0 * v0) * T + (3.0 * a0 - 2.0 * a1) * T**2) / (2.0 * T**4)
    c[5] = (12.0 * d - 6.0 * (v1 + v0) * T - (a0 - a1) * T**2) / (2.0 * T**5)
    return c


def quintic_eval(coeffs: np.ndarray, t):
    """Evaluate position and velocity of a quintic at times ``t``."""
    t = np.asarray(t, dtype=np.float64)
    tt = t[..., None] if coeffs.ndim > 1 else t
    pos = sum(coeffs[i] * tt**i for i in range(6))
    vel = sum(i * coeffs[i] * tt ** (i - 1) for i in range(1, 6))
    return pos, vel


def smoothstep5(u):
    """Minimum-jerk 0 -> 1 profile on [0, 1] and its derivative."""
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
    s = u**3 * (10.0 - 15.0 * u + 6.0 * u**2)
    ds = 30.0 * u**2 * (1.0 - u) ** 2
    return s, ds


def _minjerk_fraction(u, duration: float):
    s, ds = smoothstep5(u)
    return s, ds / duration


def _smoothstep5_integral(u):
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
    return 2.5 * u**4 - 3.0 * u**5 + u**6


def _trapezoid_fraction(u, duration: float, ramp_frac: float):
    """Arc-length fraction and its time derivative for a cruise profile with
    smooth speed ramps covering ``ramp_frac`` of the duration at each end."""
    u = np.asarray(u, dtype=np.float64)
    r = ramp_frac
    v_c = 1.0 / (1.0 - r)  # cruise fraction rate per unit time-fraction
    up = np.clip(u / r, 0.0, 1.0)
    dn = np.clip((1.0 - u) / r, 0.0, 1.0)
    s = v_c * r * _smoothstep5_integral(up)
    s = np.where(u > r, v_c * (r / 2.0 + (np.clip(u, r, 1.0 - r) - r)), s)
    s = np.where(u > 1.0 - r, 1.0 - v_c * r * _smoothstep5_integral(dn), s)
    speed = v_c * np.where(u <= r, smoothstep5(up)[0], np.where(u >= 1.0 - r, smoothstep5(dn)[0], 1.0))
    speed = np.where((u < 0.0) | (u > 1.0), 0.0, speed)
    return np.clip(s, 0.0, 1.0), speed / duration


@dataclass(frozen=True)
class StraightPath:
    """Straight line from start to goal with a smooth timing profile.

    ``profile`` is "minjerk" (rest-to-rest quintic timing) or "trapezoid"
    (smooth ramps to a cruise speed; brisk start, still C1).
    """

    start: np.ndarray
    goal: np.ndarray
    duration: float
    profile: str = "minjerk"
    ramp_frac: float = 0.08

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=np.float64))
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=np.float64))
        if self.profile not in ("minjerk", "trapezoid"):
            raise ValueError(f"unknown profile {self.profile!r}")
        if not 0.0 < self.ramp_frac < 0.5:
            raise ValueError("ramp_frac must be in (0, 0.5)")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.goal - self.start))

    @property
    def direction(self) -> np.ndarray:
        d = self.goal - self.start
        n = np.linalg.norm(d)
        return d / n if n > 0 else np.array([1.0, 0.0, 0.0])

    def fraction(self, t):
        """Arc-length fraction s(t) in [0, 1] and its time derivative."""
        u = np.asarray(t, dtype=np.float64) / self.duration
        if self.profile == "minjerk":
            s, ds = smoothstep5(np.clip(u, 0.0, 1.0))
            return s, ds / self.duration
        return _trapezoid_fraction(u, self.duration, self.ramp_frac)

    def eval(self, t):
        s, ds = self.fraction(t)
        delta = self.goal - self.start
        pos = self.start + np.multiply.outer(s, delta)
        vel = np.multiply.outer(ds, delta)
        return pos, vel

    def time_at_fraction(self, frac: float) -> float:
        """Invert the monotone arc-length fraction by bisection."""
        frac = min(max(frac, 0.0), 1.0)
        lo, hi = 0.0, self.duration
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if float(self.fraction(mid)[0]) < frac:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


def bump_profile(t, t_enter: float, t_peak: float, t_exit: float):
    """Smooth 0 -> 1 -> 0 bump over [t_enter, t_exit] peaking at ``t_peak``;
    returns the magnitude and its time derivative."""
    t = np.asarray(t, dtype=np.float64)
    up_span = max(t_peak - t_enter, 1e-9)
    down_span = max(t_exit - t_peak, 1e-9)
    s_up, ds_up = smoothstep5((t - t_enter) / up_span)
    s_dn, ds_dn = smoothstep5((t - t_peak) / down_span)
    return s_up - s_dn, ds_up / up_span - ds_dn / down_span


class FractionInverter:
    """Fast monotone inverse of a path's arc-length fraction via a lookup grid."""

    def __init__(self, path, samples: int = 2048):
        base = path.nominal if hasattr(path, "nominal") else path
        self.t_grid = np.linspace(0.0, base.duration, samples)
        self.f_grid = np.asarray(base.fraction(self.t_grid)[0], dtype=np.float64)

    def __call__(self, frac: float) -> float:
        return float(np.interp(frac, self.f_grid, self.t_grid))


def lateral_unit(direction: np.ndarray) -> np.ndarray:
    """A horizontal-ish unit vector orthogonal to the path direction."""
    up = np.array([0.0, 0.0, 1.0])
    lat = np.cross(up, direction)
    n = np.linalg.norm(lat)
    if n < 1e-9:
        lat, n = np.array([1.0, 0.0, 0.0]), 1.0
    return lat / n


@dataclass(frozen=True)
class DetourPath:
    """Straight nominal path plus a smooth lateral bump clearing an obstacle.

    The bump rises from zero at ``t_enter``, peaks at ``clearance`` abeam the
    obstacle, and settles back to the nominal line at ``t_exit``.
    """

    nominal: StraightPath
    obstacle_center: np.ndarray
    clearance: float
    side: int
    t_enter: float
    t_peak: float
    t_exit: float

    @staticmethod
    def around(nominal: StraightPath, center, radius: float, *, side: int = 1,
               clearance_margin: float = 0.05, lead_in: float = 0.12,
               lead_out: float = 0.08) -> "DetourPath":
        center = np.asarray(center, dtype=np.float64)
        along = float(np.dot(center - nominal.start, nominal.direction))
        length = nominal.length
        f_enter = (along - radius - lead_in) / length
        f_peak = along / length
        f_exit = (along + radius + lead_out) / length
        return DetourPath(
            nominal=nominal,
            obstacle_center=center,
            clearance=radius + clearance_margin,
            side=1 if side >= 0 else -1,
            t_enter=nominal.time_at_fraction(f_enter),
            t_peak=nominal.time_at_fraction(f_peak),
            t_exit=nominal.time_at_fraction(f_exit),
        )

    @property
    def duration(self) -> float:
        return self.nominal.duration

    @property
    def direction(self) -> np.ndarray:
        return self.nominal.direction

    def time_at_fraction(self, frac: float) -> float:
        return self.nominal.time_at_fraction(frac)

    def bump(self, t):
        return bump_profile(t, self.t_enter, self.t_peak, self.t_exit)

    def eval(self, t):
        pos, vel = self.nominal.eval(t)
        beta, dbeta = self.bump(t)
        lat = self.side * lateral_unit(self.nominal.direction) * self.clearance
        pos = pos + np.multiply.outer(beta, lat)
        vel = vel + np.multiply.outer(dbeta, lat)
        return pos, vel
