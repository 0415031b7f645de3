// Playground wiring: draw demonstrations, train through the service, render
// the uncertainty heatmap + velocity field per strategy, launch live
// rollouts by clicking, and steer their context with sliders.

import { FieldResponse, ServiceClient, TrainResponse } from './api.js';
import { StrokePad } from './canvas.js';
import {
  arrowSegments,
  dataToPixel,
  fieldImage,
  uncertaintyColor,
  Viewport,
} from './heatmap.js';
import { SessionRecorder, StepMsg } from './protocol.js';
import { strokesToCorpus } from './resample.js';

const STRATEGIES = ['kmp', 'kmp+stab', 'kmp+goal', 'full'];
const PRESETS: Array<{ label: string; context: [number, number] }> = [
  { label: 'cluster A (0,0)', context: [0, 0] },
  { label: 'cluster B (1,1)', context: [1, 1] },
  { label: 'cluster C (2,2)', context: [2, 2] },
];
const PRESET_COLORS = ['#d33682', '#2aa198', '#b58900'];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class App {
  client = new ServiceClient('');
  canvas = el<HTMLCanvasElement>('view');
  ctx = this.canvas.getContext('2d')!;
  viewport: Viewport = {
    xmin: -0.7, xmax: 0.7, ymin: -0.7, ymax: 0.7,
    width: this.canvas.width, height: this.canvas.height,
  };
  pad = new StrokePad(this.canvas, this.viewport);
  recorder = new SessionRecorder();

  model: TrainResponse | null = null;
  field: FieldResponse | null = null;
  useContext = false;
  presetIndex = 0;
  strategy = 'full';
  sessionId: string | null = null;
  running = false;
  trace: Array<[number, number]> = [];
  lastStep: StepMsg | null = null;

  constructor() {
    this.pad.onStrokeFinished = () => this.onStrokesChanged();
    this.pad.onClick = (x, y) => void this.startRollout(x, y);
    el<HTMLButtonElement>('train').addEventListener('click', () => void this.train());
    el<HTMLButtonElement>('clear').addEventListener('click', () => this.clearAll());
    el<HTMLButtonElement>('cancel').addEventListener('click', () => void this.cancel());
    el<HTMLButtonElement>('savelog').addEventListener('click', () => this.downloadLog());
    el<HTMLInputElement>('use-context').addEventListener('change', (e) => {
      this.useContext = (e.target as HTMLInputElement).checked;
      this.applyPreset();
      this.renderControls();
    });
    const strategySelect = el<HTMLSelectElement>('strategy');
    for (const s of STRATEGIES) {
      const option = document.createElement('option');
      option.value = s;
      option.textContent = s;
      if (s === this.strategy) option.selected = true;
      strategySelect.appendChild(option);
    }
    strategySelect.addEventListener('change', () => {
      this.strategy = strategySelect.value;
      void this.refreshField();
    });
    const presetBox = el<HTMLDivElement>('presets');
    PRESETS.forEach((preset, i) => {
      const button = document.createElement('button');
      button.textContent = preset.label;
      button.style.borderColor = PRESET_COLORS[i];
      button.addEventListener('click', () => {
        this.presetIndex = i;
        this.applyPreset();
        this.renderControls();
        void this.refreshField();
      });
      presetBox.appendChild(button);
    });
    for (const id of ['c1', 'c2']) {
      el<HTMLInputElement>(id).addEventListener('input', () => {
        void this.onSlider();
      });
    }
    this.applyPreset();
    this.renderControls();
    this.draw();
  }

  sliderContext(): [number, number] {
    return [
      parseFloat(el<HTMLInputElement>('c1').value),
      parseFloat(el<HTMLInputElement>('c2').value),
    ];
  }

  applyPreset(): void {
    const preset = PRESETS[this.presetIndex];
    el<HTMLInputElement>('c1').value = String(preset.context[0]);
    el<HTMLInputElement>('c2').value = String(preset.context[1]);
    this.pad.contextForNewStrokes = this.useContext ? [...preset.context] : null;
  }

  onStrokesChanged(): void {
    el<HTMLButtonElement>('train').disabled = this.pad.strokes.length === 0;
    this.setStatus(`${this.pad.strokes.length} stroke(s) drawn`);
    this.draw();
  }

  clearAll(): void {
    this.pad.clear();
    this.model = null;
    this.field = null;
    this.trace = [];
    this.lastStep = null;
    this.pad.captureStrokes = true;
    this.onStrokesChanged();
    el<HTMLButtonElement>('train').disabled = true;
  }

  trainConfig(): Record<string, unknown> {
    return {
      C: parseInt(el<HTMLInputElement>('cfg-C').value, 10),
      N: parseInt(el<HTMLInputElement>('cfg-N').value, 10),
      lambda: parseFloat(el<HTMLInputElement>('cfg-lambda').value),
      l_c: parseFloat(el<HTMLInputElement>('cfg-lc').value),
      l_p: parseFloat(el<HTMLInputElement>('cfg-lp').value),
    };
  }

  async train(): Promise<void> {
    try {
      this.setStatus('training...');
      const strokes = this.useContext
        ? this.pad.strokes
        : this.pad.strokes.map((s) => ({ ...s, context: null }));
      const corpus = strokesToCorpus(strokes);
      this.model = await this.client.train(corpus, this.trainConfig());
      this.pad.captureStrokes = false; // click-to-rollout mode
      this.setStatus(
        `model ${this.model.model_id} trained; click the canvas to roll out`,
      );
      await this.refreshField();
    } catch (err) {
      this.setStatus(`train failed: ${(err as Error).message}`);
    }
  }

  async refreshField(): Promise<void> {
    if (!this.model) return;
    try {
      this.field = await this.client.field(this.model.model_id, {
        nx: 40,
        ny: 40,
        bounds: [
          this.viewport.xmin, this.viewport.xmax,
          this.viewport.ymin, this.viewport.ymax,
        ],
        context: this.useContext ? this.sliderContext() : undefined,
        strategy: this.strategy,
      });
      this.draw();
    } catch (err) {
      this.setStatus(`field failed: ${(err as Error).message}`);
    }
  }

  async startRollout(x: number, y: number): Promise<void> {
    if (!this.model || this.running) return;
    this.running = true;
    this.trace = [];
    this.recorder.reset();
    this.setStatus(`rollout from (${x.toFixed(2)}, ${y.toFixed(2)})`);
    try {
      await this.client.streamRollout(
        this.model.model_id,
        {
          x0: [x, y],
          context: this.useContext ? this.sliderContext() : undefined,
          strategy: this.strategy,
          pace_hz: 20,
        },
        (msg) => {
          this.recorder.recv(msg);
          if (msg.type === 'session') {
            this.sessionId = msg.session_id;
          } else if (msg.type === 'step') {
            this.lastStep = msg;
            const p = msg.input.slice(-2);
            this.trace.push([p[0], p[1]]);
            this.renderStep(msg);
            this.draw();
          } else if (msg.type === 'error') {
            this.setStatus(`session error: ${msg.message}`);
          } else if (msg.type === 'done') {
            this.setStatus(
              `rollout ${msg.status} after ${msg.iterations} steps`,
            );
          }
        },
      );
    } catch (err) {
      this.setStatus(`rollout failed: ${(err as Error).message}`);
    } finally {
      this.running = false;
      this.sessionId = null;
    }
  }

  async onSlider(): Promise<void> {
    this.renderControls();
    if (this.running && this.sessionId && this.useContext) {
      const message = { type: 'set_context' as const, context: this.sliderContext() };
      this.recorder.send(message);
      await this.client.sendSessionMessage(this.sessionId, message);
    } else if (!this.running) {
      await this.refreshField();
    }
  }

  async cancel(): Promise<void> {
    if (this.sessionId) {
      const message = { type: 'cancel' as const };
      this.recorder.send(message);
      await this.client.sendSessionMessage(this.sessionId, message);
    }
  }

  downloadLog(): void {
    const blob = new Blob([this.recorder.toJSON()], { type: 'application/json' });
    const a = document.createElement('a');
    a.href = URL.createObjectURL(blob);
    a.download = 'session_log.json';
    a.click();
    URL.revokeObjectURL(a.href);
  }

  renderStep(step: StepMsg): void {
    const bars: Array<[string, number]> = [
      ['bar-kmp', step.weights[0]],
      ['bar-sp', step.weights[1]],
      ['bar-g', step.weights[2]],
    ];
    for (const [id, w] of bars) {
      el<HTMLDivElement>(id).style.width = `${Math.round(w * 100)}%`;
    }
    el<HTMLSpanElement>('sigma').textContent = step.sigma_ep.toFixed(3);
    el<HTMLSpanElement>('iteration').textContent = String(step.iteration);
  }

  renderControls(): void {
    const [c1, c2] = this.sliderContext();
    el<HTMLSpanElement>('c1v').textContent = c1.toFixed(2);
    el<HTMLSpanElement>('c2v').textContent = c2.toFixed(2);
    el<HTMLDivElement>('context-panel').style.opacity = this.useContext ? '1' : '0.4';
  }

  setStatus(text: string): void {
    el<HTMLDivElement>('status').textContent = text;
  }

  draw(): void {
    const { width, height } = this.canvas;
    this.ctx.clearRect(0, 0, width, height);
    if (this.field) {
      const img = fieldImage(this.field, width, height, 235);
      this.ctx.putImageData(new ImageData(img.data, img.width, img.height), 0, 0);
      this.ctx.strokeStyle = 'rgba(255,255,255,0.75)';
      this.ctx.lineWidth = 1;
      for (const seg of arrowSegments(this.field, 2)) {
        const [x1, y1] = dataToPixel(this.viewport, seg.x1, seg.y1);
        const [x2, y2] = dataToPixel(this.viewport, seg.x2, seg.y2);
        this.ctx.beginPath();
        this.ctx.moveTo(x1, y1);
        this.ctx.lineTo(x2, y2);
        this.ctx.stroke();
        this.ctx.fillStyle = 'rgba(255,255,255,0.75)';
        this.ctx.fillRect(x2 - 1, y2 - 1, 2.5, 2.5);
      }
    } else {
      const [r, g, b] = uncertaintyColor(1);
      this.ctx.fillStyle = `rgba(${r},${g},${b},0.25)`;
      this.ctx.fillRect(0, 0, width, height);
    }
    // demonstrations
    this.pad.strokes.forEach((stroke) => {
      const colorIndex = stroke.context
        ? PRESETS.findIndex((p) =>
            p.context.every((v, i) => v === stroke.context![i]))
        : -1;
      this.ctx.strokeStyle = colorIndex >= 0 ? PRESET_COLORS[colorIndex] : '#eee8d5';
      this.ctx.lineWidth = 2;
      this.ctx.beginPath();
      stroke.points.forEach((p, i) => {
        const [px, py] = dataToPixel(this.viewport, p.x, p.y);
        if (i === 0) this.ctx.moveTo(px, py);
        else this.ctx.lineTo(px, py);
      });
      this.ctx.stroke();
    });
    // live trace
    if (this.trace.length > 1) {
      this.ctx.strokeStyle = '#dc322f';
      this.ctx.lineWidth = 2.5;
      this.ctx.beginPath();
      this.trace.forEach(([x, y], i) => {
        const [px, py] = dataToPixel(this.viewport, x, y);
        if (i === 0) this.ctx.moveTo(px, py);
        else this.ctx.lineTo(px, py);
      });
      this.ctx.stroke();
      const [hx, hy] = dataToPixel(this.viewport, ...this.trace[this.trace.length - 1]);
      this.ctx.fillStyle = '#dc322f';
      this.ctx.beginPath();
      this.ctx.arc(hx, hy, 5, 0, 2 * Math.PI);
      this.ctx.fill();
    }
  }
}

new App();
