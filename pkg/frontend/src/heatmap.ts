// Rendering helpers for the uncertainty heatmap and the velocity glyphs.
// Pure data -> pixels/segments functions so they stay testable off-DOM.

import { FieldResponse } from './api.js';

/** Dark blue (certain) to warm yellow (unexplored), clamped to [0, 1]. */
export function uncertaintyColor(sigma: number): [number, number, number] {
  const s = Math.min(1, Math.max(0, sigma));
  const r = Math.round(30 + 225 * s);
  const g = Math.round(40 + 180 * s);
  const b = Math.round(90 + 40 * (1 - s) - 60 * s);
  return [r, g, b];
}

export interface Viewport {
  xmin: number;
  xmax: number;
  ymin: number;
  ymax: number;
  width: number; // pixels
  height: number;
}

export function dataToPixel(v: Viewport, x: number, y: number): [number, number] {
  const px = ((x - v.xmin) / (v.xmax - v.xmin)) * v.width;
  const py = (1 - (y - v.ymin) / (v.ymax - v.ymin)) * v.height; // y up
  return [px, py];
}

export function pixelToData(v: Viewport, px: number, py: number): [number, number] {
  const x = v.xmin + (px / v.width) * (v.xmax - v.xmin);
  const y = v.ymin + (1 - py / v.height) * (v.ymax - v.ymin);
  return [x, y];
}

/** Nearest-cell RGBA image of the sigma_ep grid at the given pixel size. */
export function fieldImage(
  field: FieldResponse,
  width: number,
  height: number,
  alpha = 255,
): { data: Uint8ClampedArray<ArrayBuffer>; width: number; height: number } {
  const nx = field.xs.length;
  const ny = field.ys.length;
  const data = new Uint8ClampedArray(new ArrayBuffer(width * height * 4));
  for (let py = 0; py < height; py++) {
    // pixel rows top-down, data rows bottom-up
    const gy = Math.min(
      ny - 1,
      Math.floor(((height - 1 - py) / height) * ny),
    );
    for (let px = 0; px < width; px++) {
      const gx = Math.min(nx - 1, Math.floor((px / width) * nx));
      const [r, g, b] = uncertaintyColor(field.sigma_ep[gy][gx]);
      const o = (py * width + px) * 4;
      data[o] = r;
      data[o + 1] = g;
      data[o + 2] = b;
      data[o + 3] = alpha;
    }
  }
  return { data, width, height };
}

export interface Segment {
  x1: number;
  y1: number;
  x2: number;
  y2: number;
}

/**
 * Velocity glyphs as line segments in data coordinates, one per sub-sampled
 * grid node, scaled so the longest arrow spans about one cell.
 */
export function arrowSegments(field: FieldResponse, stride = 2): Segment[] {
  const nx = field.xs.length;
  const ny = field.ys.length;
  let vmax = 0;
  for (const row of field.velocity) {
    for (const [ux, uy] of row) {
      vmax = Math.max(vmax, Math.hypot(ux, uy));
    }
  }
  const cell =
    Math.max(
      (field.xs[nx - 1] - field.xs[0]) / (nx - 1),
      (field.ys[ny - 1] - field.ys[0]) / (ny - 1),
    ) * stride;
  const scale = vmax > 0 ? (0.9 * cell) / vmax : 0;
  const segments: Segment[] = [];
  for (let iy = 0; iy < ny; iy += stride) {
    for (let ix = 0; ix < nx; ix += stride) {
      const [ux, uy] = field.velocity[iy][ix];
      const x = field.xs[ix];
      const y = field.ys[iy];
      segments.push({ x1: x, y1: y, x2: x + ux * scale, y2: y + uy * scale });
    }
  }
  return segments;
}
