"""Closed-loop collaboration simulator: admittance plant, scripted human limb
with obstacle-triggered intent change, tick-level session core, episode
runner, and log persistence.

Episode log file layout::

    #EPISODE {"scenario": ..., "config": ..., "seed": ..., "metrics": ...}
    t,x,y,z,vx,vy,vz,fhx,fhy,fhz,frx,fry,frz,kappa
    0.0,...
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .allocator import (
    AllocationState,
    ControllerConfig,
    ImpedanceParams,
    PredictionPair,
    allocator_init,
    allocator_tick,
    blend_costs,
    build_state_space,
    solve_are,
)
from .core import Branch, StateSample
from .intent.model import BranchModel
from .intent.predict import predict_dual
from .metrics import PhrcMetrics, metric_phrc
from .paths import DetourPath, FractionInverter, StraightPath

OBSTACLE_RADIUS = {"Low": 0.04, "High": 0.08}


class EpisodeError(RuntimeError):
    pass


def _diag3_pd(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape == (3,):
        arr = np.diag(arr)
    if arr.shape != (3, 3) or np.any(np.diag(arr) <= 0):
        raise ValueError(f"{name} must be positive-definite diagonal 3x3")
    return arr


@dataclass(frozen=True, eq=False)
class HumanLimb:
    """Damping and stiffness of the guiding human limb."""

    d_h: np.ndarray
    k_h: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "d_h", _diag3_pd(self.d_h, "D_h"))
        object.__setattr__(self, "k_h", _diag3_pd(self.k_h, "K_h"))


@dataclass(frozen=True, eq=False)
class Obstacle:
    center: np.ndarray
    radius: float
    height: str = "Low"

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        if self.height not in OBSTACLE_RADIUS:
            raise ValueError(f"height must be one of {sorted(OBSTACLE_RADIUS)}")
        if self.radius is None:
            object.__setattr__(self, "radius", OBSTACLE_RADIUS[self.height])
        if self.radius <= 0:
            raise ValueError("radius must be positive")


@dataclass(frozen=True, eq=False)
class Scenario:
    """Episode setup: endpoints, obstacles, and the scripted human policy."""

    start: np.ndarray
    goal: np.ndarray
    obstacles: tuple = ()
    f_max: float = 30.0
    duration: float = 6.0
    settle_time: float = 1.5
    limb: HumanLimb = field(default_factory=lambda: HumanLimb(d_h=[15.0] * 3, k_h=[150.0] * 3))
    detour_side: int = 1
    trigger_margin: float = 0.10
    clearance_margin: float = 0.05
    disengage_margin: float = 0.05
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=np.float64))
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=np.float64))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.f_max <= 0:
            raise ValueError("f_max must be positive")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        for obs in self.obstacles:
            for point, label in ((self.start, "start"), (self.goal, "goal")):
                if np.linalg.norm(point - obs.center) <= obs.radius:
                    raise ValueError(f"obstacle at {obs.center} contains the {label} point")

    def nominal_path(self) -> StraightPath:
        return StraightPath(self.start, self.goal, self.duration, profile="trapezoid")

    def human_path(self):
        """Parametric desired curve of the human: a detour around the first
        obstacle, or the nominal path when there is nothing to avoid."""
        nominal = self.nominal_path()
        if not self.obstacles:
            return nominal
        obs = self.obstacles[0]
        return DetourPath.around(nominal, obs.center, obs.radius, side=self.detour_side,
                                 clearance_margin=self.clearance_margin)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "start": self.start.tolist(),
            "goal": self.goal.tolist(),
            "obstacles": [
                {"center": o.center.tolist(), "radius": o.radius, "height": o.height}
                for o in self.obstacles
            ],
            "f_max": self.f_max,
            "duration": self.duration,
            "settle_time": self.settle_time,
            "human": {"D_h": np.diag(self.limb.d_h).tolist(), "K_h": np.diag(self.limb.k_h).tolist()},
            "detour_side": self.detour_side,
            "trigger_margin": self.trigger_margin,
            "clearance_margin": self.clearance_margin,
            "disengage_margin": self.disengage_margin,
        }

    @staticmethod
    def from_dict(d: dict) -> "Scenario":
        human = d.get("human", {})
        return Scenario(
            start=d["start"],
            goal=d["goal"],
            obstacles=tuple(
                Obstacle(center=o["center"], radius=o.get("radius"), height=o.get("height", "Low"))
                for o in d.get("obstacles", [])
            ),
            f_max=float(d.get("f_max", 30.0)),
            duration=float(d.get("duration", 6.0)),
            settle_time=float(d.get("settle_time", 1.5)),
            limb=HumanLimb(d_h=human.get("D_h", [15.0] * 3), k_h=human.get("K_h", [150.0] * 3)),
            detour_side=int(d.get("detour_side", 1)),
            trigger_margin=float(d.get("trigger_margin", 0.10)),
            clearance_margin=float(d.get("clearance_margin", 0.05)),
            disengage_margin=float(d.get("disengage_margin", 0.05)),
            name=d.get("name", "scenario"),
        )

    @staticmethod
    def from_json(path) -> "Scenario":
        with open(path) as fh:
            return Scenario.from_dict(json.load(fh))


def make_standard_scenario(seed: int = 0) -> Scenario:
    """The evaluation scenario: one obstacle dropped on the nominal path at a
    seed-randomized station, random height class and detour side."""
    rng = np.random.default_rng(seed)
    start = np.array([0.0, 0.0, 0.2])
    goal = np.array([0.6, 0.0, 0.2])
    frac = rng.uniform(0.4, 0.6)
    height = "High" if rng.random() < 0.5 else "Low"
    side = 1 if rng.random() < 0.5 else -1
    center = start + frac * (goal - start)
    return Scenario(
        start=start,
        goal=goal,
        obstacles=(Obstacle(center=center, radius=OBSTACLE_RADIUS[height], height=height),),
        detour_side=side,
        name=f"standard-{seed}",
    )


def make_free_scenario() -> Scenario:
    return Scenario(start=[0.0, 0.0, 0.2], goal=[0.6, 0.0, 0.2], obstacles=(), name="free")


# ---------------------------------------------------------------- primitives

def human_force(limb: HumanLimb, x, dx, x_des, dx_des, f_max: float, engaged: bool = True) -> np.ndarray:
    """Spring-damper limb pull toward the desired state, norm-clamped to
    ``f_max``; exactly zero while the human is disengaged."""
    if not engaged:
        return np.zeros(3)
    f = limb.k_h @ (np.asarray(x_des) - np.asarray(x)) + limb.d_h @ (np.asarray(dx_des) - np.asarray(dx))
    norm = float(np.linalg.norm(f))
    if norm > f_max:
        f = f * (f_max / norm)
    return f


def plant_step(imp: ImpedanceParams, x, v, f_h, f_r, dt: float, x_ref, v_ref):
    """Semi-implicit Euler step of the admittance plant
    M a = f_h + f_r - D (v - v_ref) - K (x - x_ref)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, v = np.asarray(x, dtype=np.float64), np.asarray(v, dtype=np.float64)
    force = np.asarray(f_h, dtype=np.float64) + np.asarray(f_r, dtype=np.float64)
    with np.errstate(invalid="ignore", over="ignore"):
        acc = imp.m_inv @ (force - imp.d @ (v - np.asarray(v_ref)) - imp.k @ (x - np.asarray(x_ref)))
        v_next = v + dt * acc
        x_next = x + dt * v_next
    if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(v_next))):
        raise EpisodeError("plant state became non-finite")
    return x_next, v_next


# ------------------------------------------------------------------ sessions

@dataclass
class TickRecord:
    t: float
    x: np.ndarray
    v: np.ndarray
    f_h: np.ndarray
    f_r: np.ndarray
    kappa: float
    y_ref: np.ndarray
    stale: bool


class SimSession:
    """One closed-loop run stepped a tick at a time.

    The episode runner drives it with the scripted limb force; the realtime
    bridge drives it with client forces.  Strictly single-threaded.
    """

    def __init__(self, scenario: Scenario, config: ControllerConfig,
                 robot_model: BranchModel, human_model: BranchModel,
                 kappa_override: Optional[float] = None):
        if robot_model.branch is not Branch.ROBOT or human_model.branch is not Branch.HUMAN:
            raise ValueError("models must be (robot, human) branch instances")
        self.scenario = scenario
        self.config = config
        self.robot_model = robot_model
        self.human_model = human_model
        self.kappa_override = kappa_override
        self.dt = 1.0 / config.control_hz
        self.predict_every = int(round(config.control_hz / config.predict_hz))
        self.l_obs = robot_model.l_obs
        self.x = scenario.start.copy()
        self.v = np.zeros(3)
        self.tick = 0
        self.alloc: AllocationState = allocator_init(config.impedance, config.weights, config.alpha)
        if kappa_override is not None:
            self._pin_kappa(kappa_override)
        self.predictions: Optional[PredictionPair] = None
        # held start state seeds the observation window before motion begins
        self.history: list = [
            StateSample(t=(k - self.l_obs + 1) * self.dt, pos=self.x, vel=self.v, force=np.zeros(3))
            for k in range(self.l_obs - 1)
        ]

    def _pin_kappa(self, kappa: float) -> None:
        q_k, r_k = blend_costs(kappa, self.config.weights)
        sol = solve_are(build_state_space(self.config.impedance), q_k, r_k)
        self.alloc = replace(self.alloc, kappa=kappa, kappa_at_solve=kappa, solution=sol,
                             solve_count=self.alloc.solve_count + 1)

    def _window(self):
        return self.history[-self.l_obs:]

    def step(self, f_h: np.ndarray) -> TickRecord:
        f_h = np.asarray(f_h, dtype=np.float64)
        norm = float(np.linalg.norm(f_h))
        if norm > self.scenario.f_max:
            f_h = f_h * (self.scenario.f_max / norm)
        t = self.tick * self.dt
        self.history.append(StateSample(t=t, pos=self.x, vel=self.v, force=f_h))
        if len(self.history) > 4 * self.l_obs:
            del self.history[: -2 * self.l_obs]

        if self.tick % self.predict_every == 0:
            window = self._window()
            y_r, y_h = predict_dual(self.robot_model, self.human_model, window, window)
            self.predictions = PredictionPair(y_h=y_h, y_r=y_r, tick=self.tick)

        f_r, self.alloc = allocator_tick(
            self.alloc, f_h, np.concatenate([self.x, self.v]), self.predictions,
            self.config.weights, self.config.impedance, tick=self.tick,
            kappa_tol=self.config.kappa_tol, max_age_ticks=self.predict_every,
            kappa_override=self.kappa_override,
        )
        y_ref = self.alloc.y_ref
        record = TickRecord(t=t, x=self.x.copy(), v=self.v.copy(), f_h=f_h.copy(),
                            f_r=f_r.copy(), kappa=self.alloc.kappa, y_ref=y_ref.copy(),
                            stale=self.alloc.stale)
        self.x, self.v = plant_step(self.config.impedance, self.x, self.v, f_h, f_r,
                                    self.dt, y_ref[:3], y_ref[3:])
        self.tick += 1
        return record


class ScriptedHuman:
    """Engages when the plant nears the obstacle, pulls toward the detour
    curve, and disengages once safely past.

    The desired state is sampled on the detour at the point just ahead of the
    plant's along-path station, so guidance stays aligned with the plant even
    when the schedule slips.
    """

    LEAD = 0.015  # m of along-path look-ahead

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.path = scenario.human_path()
        self.nominal = scenario.nominal_path()
        self._invert = FractionInverter(self.path)
        self.engaged = False
        self.done = not scenario.obstacles

    def desired(self, x: np.ndarray):
        along = float(np.dot(x - self.nominal.start, self.nominal.direction))
        frac = (along + self.LEAD) / max(self.nominal.length, 1e-9)
        return self.path.eval(self._invert(frac))

    def force(self, t: float, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        sc = self.scenario
        if self.done:
            return np.zeros(3)
        obs = sc.obstacles[0]
        direction = self.nominal.direction
        if not self.engaged:
            if np.linalg.norm(x - obs.center) < obs.radius + sc.trigger_margin:
                self.engaged = True
        else:
            along = float(np.dot(x - obs.center, direction))
            if along > obs.radius + sc.disengage_margin:
                self.engaged = False
                self.done = True
        if not self.engaged:
            return np.zeros(3)
        x_des, v_des = self.desired(x)
        return human_force(sc.limb, x, v, x_des, v_des, sc.f_max, engaged=True)


@dataclass
class EpisodeLog:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    f_h: np.ndarray
    f_r: np.ndarray
    kappa: np.ndarray
    y_ref: np.ndarray
    predictions: list
    scenario: dict
    config: dict
    seed: int
    kappa_override: Optional[float] = None
    failed: bool = False
    fail_tick: Optional[int] = None
    metrics: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def phrc_metrics(self, guided_only: bool = True) -> PhrcMetrics:
        return metric_phrc(self.x, self.f_h, self.f_r, guided_only=guided_only)

    def min_obstacle_clearance(self) -> Optional[float]:
        obstacles = self.scenario.get("obstacles", [])
        if not obstacles:
            return None
        dists = [
            np.min(np.linalg.norm(self.x - np.asarray(o["center"]), axis=1)) - o["radius"]
            for o in obstacles
        ]
        return float(min(dists))


def run_episode(scenario: Scenario, config: ControllerConfig, robot_model: BranchModel,
                human_model: BranchModel, seed: int = 0, kappa_override: Optional[float] = None,
                force_noise_std: float = 0.0) -> EpisodeLog:
    """Run one scripted episode at control rate; deterministic given the seed."""
    rng = np.random.default_rng(seed)
    session = SimSession(scenario, config, robot_model, human_model, kappa_override=kappa_override)
    human = ScriptedHuman(scenario)
    n_ticks = int(round((scenario.duration + scenario.settle_time) * config.control_hz))
    rows: list = []
    predictions: list = []
    failed = False
    fail_tick = None
    for k in range(n_ticks):
        f_h = human.force(k * session.dt, session.x, session.v)
        if force_noise_std > 0:
            f_h = f_h + force_noise_std * rng.standard_normal(3)
        try:
            rec = session.step(f_h)
        except EpisodeError:
            failed = True
            fail_tick = k
            break
        rows.append(rec)
        if session.predictions is not None and session.predictions.tick == k:
            predictions.append((k, session.predictions.y_h.copy(), session.predictions.y_r.copy()))

    log = EpisodeLog(
        t=np.array([r.t for r in rows]),
        x=np.array([r.x for r in rows]).reshape(-1, 3),
        v=np.array([r.v for r in rows]).reshape(-1, 3),
        f_h=np.array([r.f_h for r in rows]).reshape(-1, 3),
        f_r=np.array([r.f_r for r in rows]).reshape(-1, 3),
        kappa=np.array([r.kappa for r in rows]),
        y_ref=np.array([r.y_ref for r in rows]).reshape(-1, 6),
        predictions=predictions,
        scenario=scenario.to_dict(),
        config=config.to_dict(),
        seed=seed,
        kappa_override=kappa_override,
        failed=failed,
        fail_tick=fail_tick,
    )
    if not failed and rows:
        summary = log.phrc_metrics().to_dict()
        clearance = log.min_obstacle_clearance()
        summary["min_obstacle_clearance"] = clearance
        summary["goal_error"] = float(np.linalg.norm(log.x[-1] - scenario.goal))
        summary["solve_count"] = session.alloc.solve_count
        log.metrics = summary
    return log


# ---------------------------------------------------------------- log files

_EPISODE_TAG = "#EPISODE "
_EPISODE_HEADER = "t,x,y,z,vx,vy,vz,fhx,fhy,fhz,frx,fry,frz,kappa"


def _fmt(v: float) -> str:
    return repr(float(v))


def save_episode(log: EpisodeLog, path) -> None:
    head = {
        "scenario": log.scenario,
        "config": log.config,
        "seed": log.seed,
        "kappa_override": log.kappa_override,
        "failed": log.failed,
        "fail_tick": log.fail_tick,
        "metrics": log.metrics,
    }
    lines = [_EPISODE_TAG + json.dumps(head), _EPISODE_HEADER]
    for i in range(len(log.t)):
        cells = [_fmt(log.t[i])]
        cells += [_fmt(v) for v in log.x[i]]
        cells += [_fmt(v) for v in log.v[i]]
        cells += [_fmt(v) for v in log.f_h[i]]
        cells += [_fmt(v) for v in log.f_r[i]]
        cells.append(_fmt(log.kappa[i]))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def load_episode(path) -> EpisodeLog:
    text = Path(path).read_text()
    lines = [ln for ln in text.split("\n") if ln != ""]
    if not lines or not lines[0].startswith(_EPISODE_TAG):
        raise EpisodeError("missing #EPISODE header")
    head = json.loads(lines[0][len(_EPISODE_TAG):])
    if len(lines) < 2 or lines[1] != _EPISODE_HEADER:
        raise EpisodeError("missing episode CSV header row")
    data = np.array([[float(c) for c in ln.split(",")] for ln in lines[2:]])
    data = data.reshape(-1, 14)
    return EpisodeLog(
        t=data[:, 0],
        x=data[:, 1:4],
        v=data[:, 4:7],
        f_h=data[:, 7:10],
        f_r=data[:, 10:13],
        kappa=data[:, 13],
        y_ref=np.zeros((len(data), 6)),
        predictions=[],
        scenario=head["scenario"],
        config=head["config"],
        seed=head["seed"],
        kappa_override=head.get("kappa_override"),
        failed=head.get("failed", False),
        fail_tick=head.get("fail_tick"),
        metrics=head.get("metrics", {}),
    )
