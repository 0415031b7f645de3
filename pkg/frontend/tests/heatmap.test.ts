import { describe, expect, it } from 'vitest';
import { FieldResponse } from '../src/api.js';
import {
  arrowSegments,
  dataToPixel,
  fieldImage,
  pixelToData,
  uncertaintyColor,
  Viewport,
} from '../src/heatmap.js';

const FIELD: FieldResponse = {
  xs: [0, 1, 2],
  ys: [0, 1],
  velocity: [
    [[1, 0], [0, 1], [0.5, 0.5]],
    [[0, 0], [-1, 0], [0, -1]],
  ],
  sigma_ep: [
    [0.0, 0.5, 1.0],
    [1.0, 0.5, 0.0],
  ],
  context: [],
  strategy: 'full',
};

describe('uncertaintyColor', () => {
  it('clamps and stays monotone in red', () => {
    const lo = uncertaintyColor(-5);
    const mid = uncertaintyColor(0.5);
    const hi = uncertaintyColor(7);
    expect(lo).toEqual(uncertaintyColor(0));
    expect(hi).toEqual(uncertaintyColor(1));
    expect(lo[0]).toBeLessThan(mid[0]);
    expect(mid[0]).toBeLessThan(hi[0]);
  });
});

describe('fieldImage', () => {
  it('renders one rgba pixel per output cell', () => {
    const img = fieldImage(FIELD, 6, 4);
    expect(img.data.length).toBe(6 * 4 * 4);
    // bottom-left pixel shows the first grid row (low sigma -> dark)
    const bottomLeft = img.data.slice((3 * 6 + 0) * 4, (3 * 6 + 0) * 4 + 3);
    const topLeft = img.data.slice(0, 3);
    expect(bottomLeft[0]).toBeLessThan(topLeft[0]);
  });
});

describe('arrowSegments', () => {
  it('emits one segment per sub-sampled node with bounded length', () => {
    const segs = arrowSegments(FIELD, 1);
    expect(segs.length).toBe(6);
    for (const s of segs) {
      expect(Math.hypot(s.x2 - s.x1, s.y2 - s.y1)).toBeLessThanOrEqual(1.0 + 1e-12);
    }
  });

  it('zero field yields zero-length glyphs', () => {
    const still: FieldResponse = {
      ...FIELD,
      velocity: FIELD.velocity.map((row) => row.map(() => [0, 0])),
    };
    for (const s of arrowSegments(still, 1)) {
      expect(s.x1).toBe(s.x2);
      expect(s.y1).toBe(s.y2);
    }
  });
});

describe('viewport transforms', () => {
  const vp: Viewport = { xmin: -1, xmax: 1, ymin: -1, ymax: 1, width: 200, height: 100 };

  it('round-trips', () => {
    const [px, py] = dataToPixel(vp, 0.3, -0.4);
    const [x, y] = pixelToData(vp, px, py);
    expect(x).toBeCloseTo(0.3, 12);
    expect(y).toBeCloseTo(-0.4, 12);
  });

  it('y axis points up', () => {
    const [, pyLow] = dataToPixel(vp, 0, -1);
    const [, pyHigh] = dataToPixel(vp, 0, 1);
    expect(pyLow).toBe(100);
    expect(pyHigh).toBe(0);
  });
});
