"""Secondary acceptance: a scripted synthetic client drives the bridge wire
protocol end to end.  The primary suite runs fully without this module."""

import json
import time

import pytest
from fastapi.testclient import TestClient

from phrcbench.allocator import ControllerConfig
from phrcbench.bridge import create_app
from phrcbench.core import Branch
from phrcbench.intent.model import BranchModel
from phrcbench.nn.params import NetConfig

SMALL = NetConfig(d_model=16, n_heads=2, n_layers=1, d_ff=32, d_z=4, n_mix=2, dropout=0.0)


def report(name, ok, detail=""):
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def app():
    robot = BranchModel.build(Branch.ROBOT, SMALL, seed=1)
    human = BranchModel.build(Branch.HUMAN, SMALL, seed=2)
    return create_app(robot, human, ControllerConfig.default())


def drain_states(ws, seconds, on_frame=None, send_every=None, send_text=None):
    """Read frames for a wall-clock span, optionally sending a message at a
    fixed cadence; returns the list of state frames."""
    states = []
    end = time.monotonic() + seconds
    next_send = 0.0
    while time.monotonic() < end:
        now = time.monotonic()
        if send_text is not None and send_every is not None and now >= next_send:
            ws.send_text(send_text)
            next_send = now + send_every
        msg = json.loads(ws.receive_text())
        if msg["type"] == "state":
            states.append(msg)
            if on_frame:
                on_frame(msg)
    return states


class TestBridgeScriptedClient:
    def test_rest_drag_framerate_reconnect(self, app):
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as ws:
                rest = drain_states(ws, 1.0, send_every=0.5,
                                    send_text=json.dumps({"type": "force", "fx": 0, "fy": 0, "fz": 0}))
                rest_ok = rest and all(f["kappa"] == 0.5 for f in rest)

                drag = json.dumps({"type": "force", "fx": 10.0, "fy": 0.0, "fz": 0.0})
                dragged = drain_states(ws, 2.0, send_every=0.03, send_text=drag)
                kappa_max = max(f["kappa"] for f in dragged)
                drag_ok = kappa_max > 0.9

                t0 = time.monotonic()
                frames = drain_states(ws, 60.0, send_every=1.0,
                                      send_text=json.dumps({"type": "force", "fx": 0, "fy": 0, "fz": 0}))
                span = time.monotonic() - t0
                rate = len(frames) / span
                rate_ok = rate >= 25.0

            # forced drop: the context exit closed the socket; reconnect
            with client.websocket_connect("/ws") as ws2:
                msg = json.loads(ws2.receive_text())
                reconnect_ok = msg["type"] in ("state", "error")

        report(
            "bridge-scripted-client",
            bool(rest_ok and drag_ok and rate_ok and reconnect_ok),
            f"rest kappa 0.5 over {len(rest)} frames, drag kappa max {kappa_max:.4f}, "
            f"{rate:.1f} frames/s over {span:.0f}s, reconnect ok={reconnect_ok}",
        )
