// Wire types for the rollout stream and session messages, plus a recorder
// that keeps a replayable log of everything the UI said and heard.

export interface SessionMsg {
  type: 'session';
  session_id: string;
  model_id: string;
  status: string;
}

export interface StepMsg {
  type: 'step';
  iteration: number;
  input: number[];
  mean: number[];
  weights: number[]; // [field, stabilizer, goal]
  k_max: number;
  goal_index: number;
  sigma_ep: number;
  distance: number;
}

export interface ErrorMsg {
  type: 'error';
  message: string;
}

export interface DoneMsg {
  type: 'done';
  status: 'succeeded' | 'failed' | 'cancelled';
  iterations: number;
  terminal_distance: number | null;
}

export type ServerMessage = SessionMsg | StepMsg | ErrorMsg | DoneMsg;

export interface SetContextMsg {
  type: 'set_context';
  context: number[];
}

export interface CancelMsg {
  type: 'cancel';
}

export type ClientMessage = SetContextMsg | CancelMsg;

const SERVER_TYPES = new Set(['session', 'step', 'error', 'done']);
const CLIENT_TYPES = new Set(['set_context', 'cancel']);

export function isServerMessage(value: unknown): value is ServerMessage {
  if (typeof value !== 'object' || value === null) return false;
  const t = (value as { type?: unknown }).type;
  if (typeof t !== 'string' || !SERVER_TYPES.has(t)) return false;
  if (t === 'step') {
    const m = value as Partial<StepMsg>;
    return (
      typeof m.iteration === 'number' &&
      Array.isArray(m.input) &&
      Array.isArray(m.mean) &&
      Array.isArray(m.weights) &&
      typeof m.sigma_ep === 'number'
    );
  }
  return true;
}

export function isClientMessage(value: unknown): value is ClientMessage {
  if (typeof value !== 'object' || value === null) return false;
  const t = (value as { type?: unknown }).type;
  if (typeof t !== 'string' || !CLIENT_TYPES.has(t)) return false;
  if (t === 'set_context') {
    const c = (value as Partial<SetContextMsg>).context;
    return Array.isArray(c) && c.every((v) => typeof v === 'number');
  }
  return true;
}

export interface LogEntry {
  at: number; // ms since session start
  dir: 'recv' | 'send';
  message: ServerMessage | ClientMessage;
}

/** Records a session's traffic; the log replays through the service tests. */
export class SessionRecorder {
  entries: LogEntry[] = [];
  private started = Date.now();

  reset(): void {
    this.entries = [];
    this.started = Date.now();
  }

  recv(message: ServerMessage): void {
    this.entries.push({ at: Date.now() - this.started, dir: 'recv', message });
  }

  send(message: ClientMessage): void {
    this.entries.push({ at: Date.now() - this.started, dir: 'send', message });
  }

  steps(): StepMsg[] {
    return this.entries
      .filter((e) => e.dir === 'recv' && e.message.type === 'step')
      .map((e) => e.message as StepMsg);
  }

  toJSON(): string {
    return JSON.stringify(this.entries, null, 1);
  }
}

/**
 * The piecewise context schedule a recorded session actually executed,
 * derived from the context carried by each step's input vector.
 */
export function appliedSchedule(
  log: LogEntry[],
  contextDim: number,
): Array<[number, number[]]> {
  const entries: Array<[number, number[]]> = [];
  for (const e of log) {
    if (e.dir !== 'recv' || e.message.type !== 'step') continue;
    const step = e.message;
    const ctx = step.input.slice(0, contextDim);
    const last = entries[entries.length - 1];
    if (!last || !sameVector(last[1], ctx)) {
      entries.push([step.iteration, ctx]);
    }
  }
  return entries;
}

export interface SwitchReport {
  sentAfterIteration: number; // last step seen before the send
  appliedIteration: number; // first step carrying the new context
  latencySteps: number;
  velocityChanged: boolean; // command differs from the step before
}

/**
 * Verify the latency contract on a recorded log: a set_context message must
 * take effect within one control step of the next step boundary, and the
 * commanded velocity must respond at the step where it applies.
 */
export function analyzeContextSwitch(
  log: LogEntry[],
  contextDim: number,
): SwitchReport | null {
  let lastSeen = -1;
  let pending: number[] | null = null;
  let sentAfter = -1;
  let prevStep: StepMsg | null = null;
  for (const e of log) {
    if (e.dir === 'send' && e.message.type === 'set_context') {
      pending = e.message.context;
      sentAfter = lastSeen;
    } else if (e.dir === 'recv' && e.message.type === 'step') {
      const step = e.message;
      lastSeen = step.iteration;
      if (pending && sameVector(step.input.slice(0, contextDim), pending)) {
        const changed =
          prevStep === null || !sameVector(step.mean, prevStep.mean);
        return {
          sentAfterIteration: sentAfter,
          appliedIteration: step.iteration,
          latencySteps: step.iteration - sentAfter,
          velocityChanged: changed,
        };
      }
      prevStep = step;
    }
  }
  return null;
}

function sameVector(a: number[], b: number[]): boolean {
  return a.length === b.length && a.every((v, i) => v === b[i]);
}
