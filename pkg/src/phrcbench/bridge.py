"""Realtime session service: runs the closed-loop simulator per WebSocket
connection so a human client can act as the force-applying partner.

Wire protocol (JSON text frames):

* client -> server: ``{"type":"force","fx":..,"fy":..,"fz":..}``,
  ``{"type":"reset","scenario":"standard"}``, ``{"type":"config","alpha":..}``
* server -> client: ``{"type":"state", ...}`` at ~30 Hz and
  ``{"type":"error","msg":...}`` on bad input.

The most recent client force is held for 0.2 s, then decays exponentially to
zero; a session with no inbound message for 10 s is closed.
"""

from __future__ import annotations

import asyncio
import json
import math
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .allocator import ControllerConfig
from .intent.model import BranchModel
from .sim import SimSession, make_free_scenario, make_standard_scenario

FORCE_HOLD_S = 0.2
FORCE_DECAY_TAU_S = 0.05
LIVENESS_TIMEOUT_S = 10.0
FRAME_EVERY_TICKS = 3


def builtin_scenarios() -> dict:
    return {"standard": make_standard_scenario(0), "free": make_free_scenario()}


class BridgeSession:
    """Per-connection state: simulator, held client force, running metrics."""

    def __init__(self, robot: BranchModel, human: BranchModel, config: ControllerConfig,
                 scenario_name: str = "standard"):
        self.robot = robot
        self.human = human
        self.config = config
        self.scenarios = builtin_scenarios()
        self.force = np.zeros(3)
        self.force_time: Optional[float] = None
        self.reset(scenario_name)

    def reset(self, scenario_name: str) -> None:
        if scenario_name not in self.scenarios:
            raise KeyError(f"unknown scenario {scenario_name!r}")
        self.scenario_name = scenario_name
        self.sim = SimSession(self.scenarios[scenario_name], self.config, self.robot, self.human)
        self.theta_sum = 0.0
        self.iasst_sum = 0.0
        self.guided = 0
        self.assisting = 0
        self.work = 0.0
        self.prev_x: Optional[np.ndarray] = None

    def set_alpha(self, alpha: float) -> None:
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.config = replace(self.config, alpha=alpha)
        self.sim.config = self.config
        self.sim.alloc = replace(self.sim.alloc, alpha=alpha)

    def applied_force(self, now: float) -> np.ndarray:
        """Zero-order hold for 0.2 s, then exponential decay to zero."""
        if self.force_time is None:
            return np.zeros(3)
        age = now - self.force_time
        if age <= FORCE_HOLD_S:
            return self.force
        return self.force * math.exp(-(age - FORCE_HOLD_S) / FORCE_DECAY_TAU_S)

    def tick(self, now: float):
        record = self.sim.step(self.applied_force(now))
        if self.prev_x is not None:
            self.work += float(np.dot(record.f_h, record.x - self.prev_x))
        self.prev_x = record.x
        nh = float(np.linalg.norm(record.f_h))
        if nh > 0.5:
            nr = float(np.linalg.norm(record.f_r))
            dot = float(np.dot(record.f_h, record.f_r))
            cos = dot / (nr * nh) if nr > 0 else 0.0
            theta = math.degrees(math.acos(max(-1.0, min(1.0, cos))))
            self.theta_sum += theta
            self.iasst_sum += dot / nh
            self.guided += 1
            if theta < 90.0:
                self.assisting += 1
        return record

    def frame(self, record) -> dict:
        pred = self.sim.predictions
        return {
            "type": "state",
            "t": record.t,
            "x": record.x.tolist(),
            "v": record.v.tolist(),
            "fh": record.f_h.tolist(),
            "fr": record.f_r.tolist(),
            "kappa": record.kappa,
            "yref": record.y_ref.tolist(),
            "pred_h": pred.y_h[:, :3].tolist() if pred is not None else [],
            "pred_r": pred.y_r[:, :3].tolist() if pred is not None else [],
            "obstacles": self.sim.scenario.to_dict()["obstacles"],
            "goal": self.sim.scenario.goal.tolist(),
            "f_max": self.sim.scenario.f_max,
            "metrics": {
                "theta": self.theta_sum / self.guided if self.guided else None,
                "iasst": self.iasst_sum / self.guided if self.guided else None,
                "mu": self.assisting / self.guided if self.guided else None,
                "work": self.work,
            },
        }


def create_app(robot: BranchModel, human: BranchModel, config: Optional[ControllerConfig] = None,
               static_dir=None) -> FastAPI:
    config = config or ControllerConfig.default()
    app = FastAPI(title="phrcbench bridge")

    @app.get("/healthz")
    async def healthz():
        return {"ok": True}

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        session = BridgeSession(robot, human, config)
        dt = session.sim.dt
        last_msg = time.monotonic()
        closed = asyncio.Event()

        async def receiver():
            nonlocal last_msg
            while True:
                try:
                    raw = await ws.receive_text()
                except WebSocketDisconnect:
                    closed.set()
                    return
                last_msg = time.monotonic()
                try:
                    msg = json.loads(raw)
                    kind = msg["type"]
                    if kind == "force":
                        session.force = np.array(
                            [float(msg["fx"]), float(msg["fy"]), float(msg["fz"])]
                        )
                        session.force_time = time.monotonic()
                    elif kind == "reset":
                        session.reset(msg.get("scenario", "standard"))
                    elif kind == "config":
                        session.set_alpha(float(msg["alpha"]))
                    else:
                        raise ValueError(f"unknown message type {kind!r}")
                except Exception as exc:  # noqa: BLE001 - protocol boundary
                    try:
                        await ws.send_text(json.dumps({"type": "error", "msg": str(exc)}))
                    except Exception:
                        closed.set()
                        return

        recv_task = asyncio.create_task(receiver())
        try:
            next_tick = time.monotonic()
            tick = 0
            while not closed.is_set():
                now = time.monotonic()
                if now - last_msg > LIVENESS_TIMEOUT_S:
                    break
                record = session.tick(now)
                if tick % FRAME_EVERY_TICKS == 0:
                    await ws.send_text(json.dumps(session.frame(record)))
                tick += 1
                next_tick += dt
                delay = next_tick - time.monotonic()
                if delay > 0:
                    await asyncio.sleep(delay)
                else:
                    # fell behind; let queued receives run, then catch up
                    next_tick = time.monotonic()
                    await asyncio.sleep(0)
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            recv_task.cancel()
            try:
                await ws.close()
            except Exception:
                pass

    if static_dir is not None and Path(static_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    return app
