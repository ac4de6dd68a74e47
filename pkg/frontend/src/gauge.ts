// Role-allocation gauge: the displayed value is exactly the last frame's
// kappa; only the needle angle is animated toward it.

export const KAPPA_MIN = 0.5;
export const KAPPA_MAX = 1.0;

export function kappaToAngle(kappa: number): number {
  const clamped = Math.min(KAPPA_MAX, Math.max(KAPPA_MIN, kappa));
  const unit = (clamped - KAPPA_MIN) / (KAPPA_MAX - KAPPA_MIN);
  return Math.PI * (1 - unit); // pi (left, robot leads) .. 0 (right, human leads)
}

export class NeedleSmoother {
  private angle: number;

  constructor(initialKappa = KAPPA_MIN, readonly rate = 10) {
    this.angle = kappaToAngle(initialKappa);
  }

  step(targetKappa: number, dtSeconds: number): number {
    const target = kappaToAngle(targetKappa);
    const blend = 1 - Math.exp(-this.rate * dtSeconds);
    this.angle += (target - this.angle) * blend;
    return this.angle;
  }
}

export function drawGauge(
  ctx: CanvasRenderingContext2D,
  cx: number,
  cy: number,
  radius: number,
  kappaExact: number,
  needleAngle: number,
): void {
  ctx.strokeStyle = "#4c566a";
  ctx.lineWidth = 6;
  ctx.beginPath();
  ctx.arc(cx, cy, radius, Math.PI, 0);
  ctx.stroke();

  for (const frac of [0, 0.25, 0.5, 0.75, 1]) {
    const a = Math.PI * (1 - frac);
    ctx.strokeStyle = "#6b7386";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(cx + Math.cos(a) * (radius - 8), cy - Math.sin(a) * (radius - 8));
    ctx.lineTo(cx + Math.cos(a) * (radius + 2), cy - Math.sin(a) * (radius + 2));
    ctx.stroke();
  }

  ctx.strokeStyle = "#ebcb8b";
  ctx.lineWidth = 3;
  ctx.beginPath();
  ctx.moveTo(cx, cy);
  ctx.lineTo(cx + Math.cos(needleAngle) * (radius - 12), cy - Math.sin(needleAngle) * (radius - 12));
  ctx.stroke();

  ctx.fillStyle = "#eceff4";
  ctx.font = "14px monospace";
  ctx.textAlign = "center";
  ctx.fillText(`kappa ${kappaExact.toFixed(3)}`, cx, cy + 18);
  ctx.font = "11px monospace";
  ctx.fillText("robot", cx - radius, cy + 14);
  ctx.fillText("human", cx + radius, cy + 14);
}
