// Entry point: canvas rendering loop, pointer-force input, HUD readouts.

import { drawGauge, NeedleSmoother } from "./gauge.js";
import { BridgeClient } from "./net.js";
import {
  configMessage,
  dragToForce,
  forceMessage,
  RateLimiter,
  resetMessage,
  type StateFrame,
} from "./protocol.js";
import { defaultViewport, drawScene, pushTrace, type TraceBuffer } from "./scene.js";

const SEND_MIN_INTERVAL_MS = 1000 / 60; // rate cap
const KEEPALIVE_MS = 2000; // idle zero-force heartbeat keeps the session alive

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element ${id}`);
  return node as T;
}

function fmt(v: number | null, digits = 2): string {
  return v === null || Number.isNaN(v) ? "--" : v.toFixed(digits);
}

function main(): void {
  const canvas = el<HTMLCanvasElement>("scene");
  const gaugeCanvas = el<HTMLCanvasElement>("gauge");
  const banner = el<HTMLDivElement>("banner");
  const hud = el<HTMLDivElement>("hud");
  const gainSlider = el<HTMLInputElement>("gain");
  const gainLabel = el<HTMLSpanElement>("gain-label");
  const alphaInput = el<HTMLInputElement>("alpha");
  const ctx = canvas.getContext("2d")!;
  const gctx = gaugeCanvas.getContext("2d")!;
  const vp = defaultViewport(canvas.width, canvas.height);

  let latest: StateFrame | null = null;
  let dragging = false;
  let dragStart: [number, number] | null = null;
  let dragNow: [number, number] | null = null;
  const trace: TraceBuffer = { points: [], cap: 1500 };
  const limiter = new RateLimiter(SEND_MIN_INTERVAL_MS);
  const needle = new NeedleSmoother();
  let lastPaint = performance.now();
  let lastSend = 0;

  const wsUrl = `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/ws`;
  const client = new BridgeClient(wsUrl, {
    onFrame: (frame) => {
      if (frame.type === "error") {
        banner.textContent = `bridge error: ${frame.msg}`;
        banner.className = "banner warn";
        return;
      }
      if (latest && frame.t < latest.t) {
        trace.points.length = 0; // scene was reset
      }
      latest = frame;
      pushTrace(trace, frame.x[0], frame.x[1]);
    },
    onStatus: (connected) => {
      banner.textContent = connected ? "" : "connection lost - reconnecting...";
      banner.className = connected ? "banner" : "banner warn";
    },
  });
  client.connect();

  function currentForce(): [number, number, number] {
    if (!dragging || !dragStart || !dragNow || !latest) return [0, 0, 0];
    const gain = Number(gainSlider.value);
    // canvas y grows downward; world y grows upward
    return dragToForce(
      dragNow[0] - dragStart[0],
      -(dragNow[1] - dragStart[1]),
      gain,
      latest.f_max,
    );
  }

  function sendForce(force: [number, number, number], nowMs: number): void {
    if (!limiter.ready(nowMs)) return;
    if (client.send(forceMessage(force[0], force[1], force[2]))) {
      lastSend = nowMs;
    }
  }

  canvas.addEventListener("pointerdown", (ev) => {
    dragging = true;
    dragStart = [ev.offsetX, ev.offsetY];
    dragNow = dragStart;
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (dragging) dragNow = [ev.offsetX, ev.offsetY];
  });
  const release = () => {
    if (!dragging) return;
    dragging = false;
    dragStart = dragNow = null;
    client.send(forceMessage(0, 0, 0));
  };
  canvas.addEventListener("pointerup", release);
  canvas.addEventListener("pointercancel", release);

  el<HTMLButtonElement>("reset-standard").addEventListener("click", () =>
    client.send(resetMessage("standard")),
  );
  el<HTMLButtonElement>("reset-free").addEventListener("click", () =>
    client.send(resetMessage("free")),
  );
  gainSlider.addEventListener("input", () => {
    gainLabel.textContent = `${Number(gainSlider.value).toFixed(2)} N/px`;
  });
  alphaInput.addEventListener("change", () => {
    const alpha = Number(alphaInput.value);
    if (alpha > 0) client.send(configMessage(alpha));
  });

  function paint(nowMs: number): void {
    const dt = Math.max(1e-3, (nowMs - lastPaint) / 1000);
    lastPaint = nowMs;

    if (dragging) {
      sendForce(currentForce(), nowMs);
    } else if (nowMs - lastSend > KEEPALIVE_MS) {
      sendForce([0, 0, 0], nowMs);
    }

    if (latest) {
      drawScene(ctx, vp, latest, trace);
      if (dragging && dragStart && dragNow) {
        ctx.strokeStyle = "#ebcb8b";
        ctx.lineWidth = 1.5;
        ctx.setLineDash([4, 4]);
        ctx.beginPath();
        ctx.moveTo(dragStart[0], dragStart[1]);
        ctx.lineTo(dragNow[0], dragNow[1]);
        ctx.stroke();
        ctx.setLineDash([]);
      }
      gctx.clearRect(0, 0, gaugeCanvas.width, gaugeCanvas.height);
      const angle = needle.step(latest.kappa, dt);
      drawGauge(gctx, gaugeCanvas.width / 2, gaugeCanvas.height - 30, 70, latest.kappa, angle);
      const m = latest.metrics;
      hud.textContent = [
        `t       ${latest.t.toFixed(2)} s`,
        `theta   ${fmt(m.theta, 1)} deg`,
        `i_asst  ${fmt(m.iasst)}`,
        `mu      ${fmt(m.mu)}`,
        `work    ${fmt(m.work, 3)} J`,
        `|f_h|   ${Math.hypot(...latest.fh).toFixed(1)} N`,
        `|f_r|   ${Math.hypot(...latest.fr).toFixed(1)} N`,
      ].join("\n");
    }
    requestAnimationFrame(paint);
  }

  requestAnimationFrame(paint);
}

window.addEventListener("load", main);
