// Thin typed client over the service's JSON endpoints. The rollout stream is
// newline-delimited JSON read incrementally off a fetch body.

import {
  ClientMessage,
  ServerMessage,
  isServerMessage,
} from './protocol.js';

export interface TrainResponse {
  model_id: string;
  content_hash: string;
  dims: number[]; // [context, position, input, output]
  train_bounds: number[][]; // per position dim [lo, hi]
  goals: number[][];
}

export interface FieldRequest {
  nx: number;
  ny: number;
  bounds?: number[]; // xmin, xmax, ymin, ymax
  context?: number[];
  strategy: string;
}

export interface FieldResponse {
  xs: number[];
  ys: number[];
  velocity: number[][][]; // [ny][nx][2]
  sigma_ep: number[][]; // [ny][nx]
  context: number[];
  strategy: string;
}

export interface RolloutRequest {
  x0: number[];
  context?: number[];
  strategy: string;
  max_iters?: number;
  success_radius?: number;
  dt?: number;
  pace_hz?: number;
}

async function expectOk(resp: Response): Promise<Response> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      if (body && typeof body.detail === 'string') detail = body.detail;
    } catch {
      // leave the status text
    }
    throw new Error(`${resp.status}: ${detail}`);
  }
  return resp;
}

export class ServiceClient {
  constructor(private base: string = '') {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  async train(
    corpus: Record<string, unknown>,
    config: Record<string, unknown> = {},
  ): Promise<TrainResponse> {
    const resp = await expectOk(
      await fetch(this.url('/train'), {
        method: 'POST',
        headers: { 'content-type': 'application/json' },
        body: JSON.stringify({ corpus, config }),
      }),
    );
    return (await resp.json()) as TrainResponse;
  }

  async field(modelId: string, req: FieldRequest): Promise<FieldResponse> {
    const resp = await expectOk(
      await fetch(this.url(`/models/${modelId}/field`), {
        method: 'POST',
        headers: { 'content-type': 'application/json' },
        body: JSON.stringify(req),
      }),
    );
    return (await resp.json()) as FieldResponse;
  }

  /**
   * Open a rollout stream; resolves when the stream ends. Messages arrive
   * through `onMessage` in order; unknown message types are rejected so the
   * UI only ever consumes the documented protocol.
   */
  async streamRollout(
    modelId: string,
    req: RolloutRequest,
    onMessage: (msg: ServerMessage) => void,
  ): Promise<void> {
    const resp = await expectOk(
      await fetch(this.url(`/models/${modelId}/rollout`), {
        method: 'POST',
        headers: { 'content-type': 'application/json' },
        body: JSON.stringify(req),
      }),
    );
    if (!resp.body) throw new Error('response has no body to stream');
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    let buffer = '';
    for (;;) {
      const { value, done } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      let idx;
      while ((idx = buffer.indexOf('\n')) >= 0) {
        const line = buffer.slice(0, idx).trim();
        buffer = buffer.slice(idx + 1);
        if (!line) continue;
        const parsed: unknown = JSON.parse(line);
        if (!isServerMessage(parsed)) {
          throw new Error(`undocumented message on stream: ${line}`);
        }
        onMessage(parsed);
      }
    }
  }

  async sendSessionMessage(
    sessionId: string,
    message: ClientMessage,
  ): Promise<void> {
    await expectOk(
      await fetch(this.url(`/sessions/${sessionId}/message`), {
        method: 'POST',
        headers: { 'content-type': 'application/json' },
        body: JSON.stringify(message),
      }),
    );
  }

  async sessionTrace(sessionId: string): Promise<Record<string, unknown>> {
    const resp = await expectOk(
      await fetch(this.url(`/sessions/${sessionId}/trace`)),
    );
    return (await resp.json()) as Record<string, unknown>;
  }
}
