// Pointer capture for demonstration strokes, in data coordinates.

import { pixelToData, Viewport } from './heatmap.js';
import { DemoStroke, StrokePoint } from './resample.js';

export class StrokePad {
  strokes: DemoStroke[] = [];
  private active: StrokePoint[] | null = null;
  onStrokeFinished: (stroke: DemoStroke) => void = () => {};
  onClick: (x: number, y: number) => void = () => {};
  contextForNewStrokes: number[] | null = null;
  captureStrokes = true;

  constructor(
    private canvas: HTMLCanvasElement,
    public viewport: Viewport,
  ) {
    canvas.addEventListener('pointerdown', (e) => this.begin(e));
    canvas.addEventListener('pointermove', (e) => this.extend(e));
    canvas.addEventListener('pointerup', (e) => this.finish(e));
    canvas.addEventListener('pointerleave', (e) => this.finish(e));
  }

  private toData(e: PointerEvent): [number, number] {
    const rect = this.canvas.getBoundingClientRect();
    const px = ((e.clientX - rect.left) / rect.width) * this.viewport.width;
    const py = ((e.clientY - rect.top) / rect.height) * this.viewport.height;
    return pixelToData(this.viewport, px, py);
  }

  private begin(e: PointerEvent): void {
    const [x, y] = this.toData(e);
    if (!this.captureStrokes) {
      this.onClick(x, y);
      return;
    }
    this.canvas.setPointerCapture(e.pointerId);
    this.active = [{ x, y, t: performance.now() }];
  }

  private extend(e: PointerEvent): void {
    if (!this.active) return;
    const [x, y] = this.toData(e);
    this.active.push({ x, y, t: performance.now() });
  }

  private finish(e: PointerEvent): void {
    if (!this.active) return;
    const [x, y] = this.toData(e);
    this.active.push({ x, y, t: performance.now() });
    if (this.active.length >= 2) {
      const stroke: DemoStroke = {
        points: this.active,
        context: this.contextForNewStrokes
          ? [...this.contextForNewStrokes]
          : null,
      };
      this.strokes.push(stroke);
      this.onStrokeFinished(stroke);
    }
    this.active = null;
  }

  activePoints(): StrokePoint[] | null {
    return this.active;
  }

  clear(): void {
    this.strokes = [];
    this.active = null;
  }
}
