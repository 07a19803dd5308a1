// Canvas drawing for the annotation view.

import { displayPath, Point } from "./spline.js";
import { UiState } from "./session.js";

const CURVE_COLOR = "#27b0ff";
const HANDLE_COLOR = "#ffffff";
const HANDLE_EDGE = "#066a9e";
const CHANGED_COLOR = "#ffd34d";
const MANUAL_COLOR = "#6dff7c";
const HANDLE_RADIUS = 5;

export function handleRadius(): number {
  return HANDLE_RADIUS;
}

export function drawScene(
  ctx: CanvasRenderingContext2D,
  image: CanvasImageSource | null,
  state: UiState,
): void {
  const { width, height } = state.imageSize;
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  if (image) ctx.drawImage(image, 0, 0, width, height);
  if (state.mode === "manual") {
    drawManual(ctx, state);
    return;
  }
  if (!state.curve.length) return;

  const pts = state.curve.map((p, i): Point => {
    const drag = state.drag;
    const use = drag && drag.node === i ? drag.pos : p;
    return [use[0] * width, use[1] * height];
  });
  const path = state.curveKind === "polygon" ? pts : displayPath(pts);
  ctx.beginPath();
  path.forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
  ctx.closePath();
  ctx.strokeStyle = CURVE_COLOR;
  ctx.lineWidth = 2;
  ctx.stroke();

  pts.forEach(([x, y], i) => {
    ctx.beginPath();
    ctx.arc(x, y, HANDLE_RADIUS, 0, 2 * Math.PI);
    ctx.fillStyle = state.changed.includes(i) ? CHANGED_COLOR : HANDLE_COLOR;
    ctx.fill();
    ctx.strokeStyle = HANDLE_EDGE;
    ctx.lineWidth = 1.5;
    ctx.stroke();
  });
}

function drawManual(ctx: CanvasRenderingContext2D, state: UiState): void {
  const pts = state.manual.points;
  if (!pts.length) return;
  ctx.beginPath();
  pts.forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
  if (state.manual.closed) ctx.closePath();
  ctx.strokeStyle = MANUAL_COLOR;
  ctx.lineWidth = 2;
  ctx.stroke();
  pts.forEach(([x, y]) => {
    ctx.beginPath();
    ctx.arc(x, y, 3, 0, 2 * Math.PI);
    ctx.fillStyle = MANUAL_COLOR;
    ctx.fill();
  });
}

export function nearestHandle(
  state: UiState,
  posPx: Point,
  tolerancePx = 10,
): number | null {
  const { width, height } = state.imageSize;
  let best: number | null = null;
  let bestDist = tolerancePx;
  state.curve.forEach((p, i) => {
    const d = Math.hypot(p[0] * width - posPx[0], p[1] * height - posPx[1]);
    if (d <= bestDist) {
      best = i;
      bestDist = d;
    }
  });
  return best;
}
