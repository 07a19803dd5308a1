// Closed centripetal Catmull-Rom sampling, mirroring the server exactly:
// chordal knots with alpha = 0.5, three closure points, per-segment uniform
// parameters in [t_i, t_(i+1)) with the remainder samples on the first
// segments. Client and server positions must agree to 1e-6.

export type Point = [number, number];

const ALPHA = 0.5;

function dist(a: Point, b: Point): number {
  return Math.hypot(b[0] - a[0], b[1] - a[1]);
}

export function closeCurve(points: Point[]): Point[] {
  const n = points.length;
  const p0 = points[0];
  const fwd: Point = [points[1][0] - p0[0], points[1][1] - p0[1]];
  const bwd: Point = [points[n - 1][0] - p0[0], points[n - 1][1] - p0[1]];
  const rFwd = Math.hypot(fwd[0], fwd[1]);
  const rBwd = Math.hypot(bwd[0], bwd[1]);
  if (rFwd === 0 || rBwd === 0) {
    throw new Error("coincident consecutive control points");
  }
  const rhoFwd = rBwd / rFwd;
  const rhoBwd = rFwd / rBwd;
  const ext: Point[] = new Array(n + 3);
  ext[0] = [p0[0] + rhoBwd * bwd[0], p0[1] + rhoBwd * bwd[1]];
  for (let i = 0; i < n; i++) ext[i + 1] = points[i];
  ext[n + 1] = [p0[0], p0[1]];
  ext[n + 2] = [p0[0] + rhoFwd * fwd[0], p0[1] + rhoFwd * fwd[1]];
  return ext;
}

export function knotSequence(ext: Point[]): number[] {
  const tau = new Array<number>(ext.length);
  tau[0] = 0;
  for (let i = 1; i < ext.length; i++) {
    const chord = dist(ext[i], ext[i - 1]);
    if (chord === 0) throw new Error("coincident consecutive control points");
    tau[i] = tau[i - 1] + Math.pow(chord, ALPHA);
  }
  const anchor = tau[1];
  return tau.map((t) => t - anchor);
}

// Weights of the four governing points for one parameter value; with fixed
// knots the recursive pyramid is linear in the points.
function segmentWeights(tau: number[], seg: number, t: number): number[] {
  const t0 = tau[seg], t1 = tau[seg + 1], t2 = tau[seg + 2], t3 = tau[seg + 3];
  const a0 = (t1 - t) / (t1 - t0);
  const a1 = (t - t0) / (t1 - t0);
  const b1 = (t2 - t) / (t2 - t1);
  const b2 = (t - t1) / (t2 - t1);
  const c2 = (t3 - t) / (t3 - t2);
  const c3 = (t - t2) / (t3 - t2);
  const u1 = (t2 - t) / (t2 - t0);
  const u2 = (t - t0) / (t2 - t0);
  const v1 = (t3 - t) / (t3 - t1);
  const v2 = (t - t1) / (t3 - t1);
  const w1 = (t2 - t) / (t2 - t1);
  const w2 = (t - t1) / (t2 - t1);
  return [
    w1 * u1 * a0,
    w1 * (u1 * a1 + u2 * b1) + w2 * v1 * b1,
    w1 * u2 * b2 + w2 * (v1 * b2 + v2 * c2),
    w2 * v2 * c3,
  ];
}

export function crsSample(points: Point[], k: number): Point[] {
  const n = points.length;
  const ext = closeCurve(points);
  const tau = knotSequence(ext);
  const perSeg = Math.floor(k / n);
  const remainder = k % n;
  const out: Point[] = [];
  for (let seg = 0; seg < n; seg++) {
    const count = perSeg + (seg < remainder ? 1 : 0);
    const t1 = tau[seg + 1];
    const t2 = tau[seg + 2];
    for (let j = 0; j < count; j++) {
      const t = t1 + (j / count) * (t2 - t1);
      const w = segmentWeights(tau, seg, t);
      let x = 0;
      let y = 0;
      for (let m = 0; m < 4; m++) {
        x += w[m] * ext[seg + m][0];
        y += w[m] * ext[seg + m][1];
      }
      out.push([x, y]);
    }
  }
  return out;
}

// Display-only resampling: a fixed number of points per segment, endpoints
// included so the drawn path closes visually.
export function displayPath(points: Point[], perSegment = 16): Point[] {
  return crsSample(points, points.length * perSegment);
}
