// Wire protocol types and client-side input conditioning for the bridge.
//
// Server frames arrive as JSON text; the client sends force/reset/config
// messages. Forces are rate-limited and norm-clamped before they leave the
// browser.

export interface Metrics {
  theta: number | null;
  iasst: number | null;
  mu: number | null;
  work: number;
}

export interface ObstacleInfo {
  center: [number, number, number];
  radius: number;
  height: string;
}

export interface StateFrame {
  type: "state";
  t: number;
  x: [number, number, number];
  v: [number, number, number];
  fh: [number, number, number];
  fr: [number, number, number];
  kappa: number;
  yref: number[];
  pred_h: number[][];
  pred_r: number[][];
  obstacles: ObstacleInfo[];
  goal: [number, number, number];
  f_max: number;
  metrics: Metrics;
}

export interface ErrorFrame {
  type: "error";
  msg: string;
}

export type ServerFrame = StateFrame | ErrorFrame;

export function parseFrame(raw: string): ServerFrame {
  const msg = JSON.parse(raw);
  if (msg.type !== "state" && msg.type !== "error") {
    throw new Error(`unknown frame type ${msg.type}`);
  }
  return msg as ServerFrame;
}

export function forceMessage(fx: number, fy: number, fz: number): string {
  return JSON.stringify({ type: "force", fx, fy, fz });
}

export function resetMessage(scenario: string): string {
  return JSON.stringify({ type: "reset", scenario });
}

export function configMessage(alpha: number): string {
  return JSON.stringify({ type: "config", alpha });
}

/** Pointer drag vector (pixels) to a planar force (N); z is fixed at 0. */
export function dragToForce(
  dxPx: number,
  dyPx: number,
  gainNewtonPerPx: number,
  fMax: number,
): [number, number, number] {
  const fx = dxPx * gainNewtonPerPx;
  const fy = dyPx * gainNewtonPerPx;
  const [cx, cy] = clampNorm2(fx, fy, fMax);
  return [cx, cy, 0];
}

export function clampNorm2(x: number, y: number, limit: number): [number, number] {
  const norm = Math.hypot(x, y);
  if (norm <= limit || norm === 0) return [x, y];
  const s = limit / norm;
  return [x * s, y * s];
}

/** Token-free rate limiter: at most one send per interval. */
export class RateLimiter {
  private last = -Infinity;

  constructor(readonly minIntervalMs: number) {}

  ready(nowMs: number): boolean {
    if (nowMs - this.last >= this.minIntervalMs) {
      this.last = nowMs;
      return true;
    }
    return false;
  }
}

/** Exponential backoff schedule for reconnect attempts. */
export class Backoff {
  private attempt = 0;

  constructor(
    readonly baseMs = 250,
    readonly maxMs = 5000,
    readonly factor = 2,
  ) {}

  nextDelay(): number {
    const delay = Math.min(this.maxMs, this.baseMs * Math.pow(this.factor, this.attempt));
    this.attempt += 1;
    return delay;
  }

  reset(): void {
    this.attempt = 0;
  }
}
