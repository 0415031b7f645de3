// Stroke capture produces irregular pointer samples; the corpus format wants
// a fixed sample period. Resample along arc length, pacing the points by the
// stroke's wall-clock duration, and keep both endpoints exact.

export interface StrokePoint {
  x: number;
  y: number;
  t: number; // capture timestamp, ms
}

export const SAMPLE_DT = 0.05; // seconds, the service's control period
export const SMOOTH_PASSES = 3; // binomial passes against pointer jitter

/** Light binomial smoothing of raw pointer samples; endpoints stay fixed. */
export function smoothStroke(
  points: StrokePoint[],
  passes: number = SMOOTH_PASSES,
): StrokePoint[] {
  let out = points.map((p) => ({ ...p }));
  for (let pass = 0; pass < passes; pass++) {
    const next = out.map((p) => ({ ...p }));
    for (let i = 1; i < out.length - 1; i++) {
      next[i].x = (out[i - 1].x + 2 * out[i].x + out[i + 1].x) / 4;
      next[i].y = (out[i - 1].y + 2 * out[i].y + out[i + 1].y) / 4;
    }
    out = next;
  }
  return out;
}

export function resampleStroke(
  points: StrokePoint[],
  dt: number = SAMPLE_DT,
  maxPoints = 400,
): Array<[number, number]> {
  if (points.length < 2) {
    throw new Error('a stroke needs at least 2 points');
  }
  const lengths: number[] = [0];
  for (let i = 1; i < points.length; i++) {
    const dx = points[i].x - points[i - 1].x;
    const dy = points[i].y - points[i - 1].y;
    lengths.push(lengths[i - 1] + Math.hypot(dx, dy));
  }
  const total = lengths[lengths.length - 1];
  const durationS = (points[points.length - 1].t - points[0].t) / 1000;
  let n = Math.round(durationS / dt) + 1;
  n = Math.max(2, Math.min(maxPoints, n));
  if (total === 0) {
    return Array.from({ length: n }, () => [points[0].x, points[0].y]);
  }
  const out: Array<[number, number]> = [];
  let seg = 0;
  for (let k = 0; k < n; k++) {
    const target = (total * k) / (n - 1);
    while (seg < lengths.length - 2 && lengths[seg + 1] < target) seg++;
    const span = lengths[seg + 1] - lengths[seg];
    const w = span > 0 ? (target - lengths[seg]) / span : 0;
    out.push([
      points[seg].x + w * (points[seg + 1].x - points[seg].x),
      points[seg].y + w * (points[seg + 1].y - points[seg].y),
    ]);
  }
  // guard the endpoints against interpolation round-off
  out[0] = [points[0].x, points[0].y];
  out[n - 1] = [points[points.length - 1].x, points[points.length - 1].y];
  return out;
}

export interface DemoStroke {
  points: StrokePoint[];
  context: number[] | null;
}

/** Assemble strokes into the corpus document the service's /train accepts. */
export function strokesToCorpus(
  strokes: DemoStroke[],
  dt: number = SAMPLE_DT,
): Record<string, unknown> {
  if (strokes.length === 0) {
    throw new Error('no strokes to upload');
  }
  const contextDim = strokes[0].context?.length ?? 0;
  const demos = strokes.map((stroke, i) => {
    const positions = resampleStroke(smoothStroke(stroke.points), dt);
    const ctxDim = stroke.context?.length ?? 0;
    if (ctxDim !== contextDim) {
      throw new Error('all strokes must carry the same context dimensions');
    }
    return {
      id: `stroke-${i}`,
      dt,
      positions,
      contexts:
        stroke.context === null
          ? null
          : positions.map(() => [...stroke.context!]),
    };
  });
  return {
    version: 1,
    dims: { context: contextDim, position: 2 },
    demonstrations: demos,
  };
}
