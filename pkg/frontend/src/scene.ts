// Top-down (x, y) scene drawing: world<->canvas mapping and painters.
// The z axis is collapsed; all geometry is planar.

import type { StateFrame } from "./protocol.js";

export interface Viewport {
  worldMinX: number;
  worldMaxX: number;
  worldMinY: number;
  worldMaxY: number;
  width: number;
  height: number;
}

export function defaultViewport(width: number, height: number): Viewport {
  return { worldMinX: -0.1, worldMaxX: 0.75, worldMinY: -0.28, worldMaxY: 0.28, width, height };
}

export function worldToCanvas(vp: Viewport, wx: number, wy: number): [number, number] {
  const sx = (wx - vp.worldMinX) / (vp.worldMaxX - vp.worldMinX);
  const sy = (wy - vp.worldMinY) / (vp.worldMaxY - vp.worldMinY);
  return [sx * vp.width, vp.height - sy * vp.height];
}

export function canvasToWorld(vp: Viewport, cx: number, cy: number): [number, number] {
  const wx = vp.worldMinX + (cx / vp.width) * (vp.worldMaxX - vp.worldMinX);
  const wy = vp.worldMinY + ((vp.height - cy) / vp.height) * (vp.worldMaxY - vp.worldMinY);
  return [wx, wy];
}

export function metersPerPixel(vp: Viewport): number {
  return (vp.worldMaxX - vp.worldMinX) / vp.width;
}

export interface TraceBuffer {
  points: Array<[number, number]>;
  cap: number;
}

export function pushTrace(buf: TraceBuffer, x: number, y: number): void {
  buf.points.push([x, y]);
  if (buf.points.length > buf.cap) {
    buf.points.splice(0, buf.points.length - buf.cap);
  }
}

function polyline(ctx: CanvasRenderingContext2D, vp: Viewport, pts: Array<[number, number]>): void {
  if (pts.length < 2) return;
  ctx.beginPath();
  const [x0, y0] = worldToCanvas(vp, pts[0][0], pts[0][1]);
  ctx.moveTo(x0, y0);
  for (let i = 1; i < pts.length; i++) {
    const [cx, cy] = worldToCanvas(vp, pts[i][0], pts[i][1]);
    ctx.lineTo(cx, cy);
  }
  ctx.stroke();
}

export function drawScene(
  ctx: CanvasRenderingContext2D,
  vp: Viewport,
  frame: StateFrame,
  trace: TraceBuffer,
): void {
  ctx.clearRect(0, 0, vp.width, vp.height);
  ctx.fillStyle = "#101418";
  ctx.fillRect(0, 0, vp.width, vp.height);

  // obstacles
  for (const obs of frame.obstacles) {
    const [cx, cy] = worldToCanvas(vp, obs.center[0], obs.center[1]);
    const rPx = obs.radius / metersPerPixel(vp);
    ctx.beginPath();
    ctx.arc(cx, cy, rPx, 0, 2 * Math.PI);
    ctx.fillStyle = obs.height === "High" ? "#7b2b2b" : "#6b5226";
    ctx.fill();
    ctx.strokeStyle = "#d08770";
    ctx.stroke();
  }

  // goal marker
  const [gx, gy] = worldToCanvas(vp, frame.goal[0], frame.goal[1]);
  ctx.strokeStyle = "#a3be8c";
  ctx.beginPath();
  ctx.arc(gx, gy, 7, 0, 2 * Math.PI);
  ctx.stroke();

  // past trace
  ctx.strokeStyle = "#4c566a";
  ctx.lineWidth = 2;
  polyline(ctx, vp, trace.points);

  // prediction fans
  ctx.lineWidth = 2;
  if (frame.pred_r.length) {
    ctx.strokeStyle = "#5e81ac";
    polyline(ctx, vp, frame.pred_r.map((p) => [p[0], p[1]] as [number, number]));
  }
  if (frame.pred_h.length) {
    ctx.strokeStyle = "#bf616a";
    polyline(ctx, vp, frame.pred_h.map((p) => [p[0], p[1]] as [number, number]));
  }

  // composed reference
  const [rx, ry] = worldToCanvas(vp, frame.yref[0], frame.yref[1]);
  ctx.fillStyle = "#ebcb8b";
  ctx.beginPath();
  ctx.arc(rx, ry, 4, 0, 2 * Math.PI);
  ctx.fill();

  // end effector + force vectors
  const [px, py] = worldToCanvas(vp, frame.x[0], frame.x[1]);
  drawForce(ctx, px, py, frame.fh, "#bf616a");
  drawForce(ctx, px, py, frame.fr, "#5e81ac");
  ctx.fillStyle = "#eceff4";
  ctx.beginPath();
  ctx.arc(px, py, 6, 0, 2 * Math.PI);
  ctx.fill();
}

function drawForce(
  ctx: CanvasRenderingContext2D,
  px: number,
  py: number,
  f: [number, number, number],
  color: string,
): void {
  const scale = 4; // px per N
  const norm = Math.hypot(f[0], f[1]);
  if (norm < 0.2) return;
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(px, py);
  ctx.lineTo(px + f[0] * scale, py - f[1] * scale);
  ctx.stroke();
}
