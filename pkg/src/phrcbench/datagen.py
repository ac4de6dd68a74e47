"""Synthetic corpora for both training regimes.

``gen_multimodal`` builds a desk-scale multimodal trajectory set: families of
trajectories share one minimum-jerk trunk, then branch to one of k goals at a
mid-path bifurcation, so the future is genuinely ambiguous given the past.
Velocities are the analytic profile plus Gaussian noise; positions are
forward-Euler integrals of the noisy velocities, keeping the channels
dynamically consistent.

``gen_phrc`` builds paired demonstration corpora: obstacle-free runs for the
robot branch and human-guided detours with limb forces for the human branch,
both recorded through the admittance plant.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .core import Branch, Label, StateSample, Trajectory
from .paths import StraightPath, bump_profile, lateral_unit, quintic_coeffs, quintic_eval
from .sim import HumanLimb, Obstacle, Scenario, ScriptedHuman


def _integrate(start: np.ndarray, vel: np.ndarray, dt: float) -> np.ndarray:
    pos = np.zeros_like(vel)
    pos[0] = start
    pos[1:] = start + np.cumsum(vel[:-1] * dt, axis=0)
    return pos


def _samples(t: np.ndarray, pos: np.ndarray, vel: np.ndarray, force: Optional[np.ndarray] = None):
    out = []
    for i in range(len(t)):
        f = None if force is None else force[i]
        out.append(StateSample(t=float(t[i]), pos=pos[i], vel=vel[i], force=f))
    return out


def _orthonormal_frame(rng: np.random.Generator, direction: np.ndarray):
    n1 = lateral_unit(direction)
    n2 = np.cross(direction, n1)
    n2 /= np.linalg.norm(n2)
    return n1, n2


def gen_multimodal(n: int, dt: float = 0.05, seed: int = 0, *, per_family: int = 40,
                   k_choices=(2, 3, 4), duration: float = 3.0,
                   noise_std: float = 0.01) -> list:
    """Robot-branch multimodal corpus of ``n`` trajectories.

    Families of ``per_family`` trajectories share start, trunk, and goal
    layout; each trajectory picks one goal uniformly at the bifurcation
    (placed at 0.3..0.7 of the path length).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    n_steps = int(round(duration / dt)) + 1
    t = np.arange(n_steps) * dt
    n_families = math.ceil(n / per_family)
    family_seeds = np.random.SeedSequence(seed).spawn(n_families)
    trajs: list = []
    for fam in range(n_families):
        rng = np.random.default_rng(family_seeds[fam])
        start = rng.uniform(-0.1, 0.1, 3)
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        total_len = rng.uniform(0.4, 0.7)
        split = rng.uniform(0.3, 0.7)
        junction = start + direction * (split * total_len)
        k = int(rng.choice(k_choices))
        n1, n2 = _orthonormal_frame(rng, direction)
        polar = rng.uniform(np.radians(25.0), np.radians(50.0))
        base_azimuth = rng.uniform(0.0, 2.0 * np.pi)
        goals = []
        branch_len = (1.0 - split) * total_len
        for j in range(k):
            az = base_azimuth + 2.0 * np.pi * j / k
            branch_dir = math.cos(polar) * direction + math.sin(polar) * (math.cos(az) * n1 + math.sin(az) * n2)
            goals.append(junction + branch_dir * branch_len)
        t1 = split * duration
        v_mid = direction * (1.5 * total_len / duration)
        trunk = quintic_coeffs(start, np.zeros(3), np.zeros(3), junction, v_mid, np.zeros(3), t1)
        branches = [
            quintic_coeffs(junction, v_mid, np.zeros(3), g, np.zeros(3), np.zeros(3), duration - t1)
            for g in goals
        ]
        for _ in range(min(per_family, n - len(trajs))):
            choice = int(rng.integers(k))
            early = t <= t1
            _, vel_a = quintic_eval(trunk, t[early])
            _, vel_b = quintic_eval(branches[choice], t[~early] - t1)
            vel = np.vstack([vel_a, vel_b])
            if noise_std > 0:
                vel = vel + noise_std * rng.standard_normal(vel.shape)
            pos = _integrate(start, vel, dt)
            trajs.append(Trajectory(branch=Branch.ROBOT, dt=dt,
                                    samples=_samples(t, pos, vel), label=Label.FREE))
        if len(trajs) >= n:
            break
    return trajs


def _plant_rollout(imp, ref_pos: np.ndarray, ref_vel: np.ndarray, dt: float):
    """Record the admittance plant dragged along a reference schedule.

    Demonstration kinematics are plant states, not raw geometric schedules,
    so the closed loop can actually reproduce what the estimator learns.
    """
    m_inv = np.diag(1.0 / np.diag(imp.m))
    x = ref_pos[0].copy()
    v = np.zeros(3)
    pos = np.zeros_like(ref_pos)
    vel = np.zeros_like(ref_vel)
    for k in range(len(ref_pos)):
        pos[k] = x
        vel[k] = v
        acc = m_inv @ (-imp.d @ (v - ref_vel[k]) - imp.k @ (x - ref_pos[k]))
        v = v + dt * acc
        x = x + dt * v
    return pos, vel


def gen_phrc(n_free: int, n_avoid: int, dt: float = 0.01, seed: int = 0, *,
             duration: float = 6.0, rest_head: float = 0.08, rest_tail: float = 0.5,
             noise_std: float = 0.0, limb: Optional[HumanLimb] = None,
             imp=None, f_max: float = 30.0) -> list:
    """Demonstration corpus around the standard workspace.

    Obstacle-free records are straight-with-jitter robot-branch runs with no
    force; avoidance records follow a lateral detour with the limb force of
    the guiding human computed against the nominal path.  Kinematics are the
    admittance plant tracking those schedules.  Every record rests at the
    start pose for ``rest_head`` seconds (one observation window, so a
    fully-at-rest past maps unambiguously to motion onset) and parks at the
    goal for ``rest_tail`` seconds.
    """
    if n_free < 0 or n_avoid < 0:
        raise ValueError("counts must be >= 0")
    if limb is None:
        limb = HumanLimb(d_h=[15.0] * 3, k_h=[150.0] * 3)
    if imp is None:
        from .allocator import ImpedanceParams

        imp = ImpedanceParams(m=[10.0] * 3, d=[100.0] * 3, k=[200.0] * 3)
    rng = np.random.default_rng(seed)
    n_steps = int(round((rest_head + duration + rest_tail) / dt)) + 1
    t = np.arange(n_steps) * dt
    t_path = t - rest_head  # profile clamps to rest outside [0, duration]
    base_start = np.array([0.0, 0.0, 0.2])
    base_goal = np.array([0.6, 0.0, 0.2])

    def jitter():
        d = rng.uniform(-0.02, 0.02, 3)
        d[2] = rng.uniform(-0.005, 0.005)
        return d

    trajs: list = []
    for _ in range(n_free):
        path = StraightPath(base_start + jitter(), base_goal + jitter(), duration, profile="trapezoid")
        ref_pos, ref_vel = path.eval(t_path)
        # gentle lateral/vertical wiggles teach the robot branch to converge
        # back onto the line after a perturbation
        for _ in range(int(rng.integers(0, 3))):
            span = rng.uniform(0.6, 1.4)
            t_mid = rest_head + rng.uniform(span, max(duration - span, span + 1e-6))
            amp = rng.uniform(0.015, 0.045) * (1 if rng.random() < 0.5 else -1)
            axis = lateral_unit(path.direction) if rng.random() < 0.8 else np.array([0.0, 0.0, 1.0])
            beta, dbeta = bump_profile(t, t_mid - span, t_mid, t_mid + span)
            ref_pos = ref_pos + np.multiply.outer(beta * amp, axis)
            ref_vel = ref_vel + np.multiply.outer(dbeta * amp, axis)
        pos, vel = _plant_rollout(imp, ref_pos, ref_vel, dt)
        if noise_std > 0:
            vel = vel + noise_std * rng.standard_normal(vel.shape)
            pos = _integrate(pos[0], vel, dt)
        trajs.append(Trajectory(branch=Branch.ROBOT, dt=dt,
                                samples=_samples(t, pos, vel), label=Label.FREE))

    for _ in range(n_avoid):
        start = base_start + jitter()
        goal = base_goal + jitter()
        frac = rng.uniform(0.35, 0.65)
        height = "High" if rng.random() < 0.5 else "Low"
        side = 1 if rng.random() < 0.5 else -1
        center = start + frac * (goal - start)
        scenario = Scenario(start=start, goal=goal,
                            obstacles=(Obstacle(center=center, radius=None, height=height),),
                            f_max=f_max, duration=duration, limb=limb, detour_side=side,
                            name="demo")
        detour = scenario.human_path()
        pos_d, vel_d = detour.eval(t_path)
        pos, vel = _plant_rollout(imp, pos_d, vel_d, dt)
        if noise_std > 0:
            vel = vel + noise_std * rng.standard_normal(vel.shape)
            pos = _integrate(pos[0], vel, dt)
        # force: the guiding limb's policy applied to the recorded states, so
        # demonstration and deployment force patterns coincide
        guide = ScriptedHuman(scenario)
        force = np.array([guide.force(t[k], pos[k], vel[k]) for k in range(len(t))])
        trajs.append(Trajectory(branch=Branch.HUMAN, dt=dt,
                                samples=_samples(t, pos, vel, force), label=Label.AVOID))
    return trajs


def split_train_test(trajs: list, test_fraction: float, seed: int):
    """Seeded shuffle then split; returns (train, test)."""
    order = np.random.default_rng(seed).permutation(len(trajs))
    n_test = int(round(test_fraction * len(trajs)))
    test_idx = set(order[:n_test].tolist())
    train = [trajs[i] for i in range(len(trajs)) if i not in test_idx]
    test = [trajs[i] for i in range(len(trajs)) if i in test_idx]
    return train, test
