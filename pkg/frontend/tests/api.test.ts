import { afterEach, describe, expect, it, vi } from 'vitest';
import { ServiceClient } from '../src/api.js';
import { ServerMessage } from '../src/protocol.js';

function ndjsonResponse(messages: unknown[]): Response {
  const body = messages.map((m) => JSON.stringify(m) + '\n').join('');
  return new Response(body, {
    status: 200,
    headers: { 'content-type': 'application/x-ndjson' },
  });
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe('ServiceClient', () => {
  it('posts training payloads and parses the response', async () => {
    const fetchMock = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
      expect(String(url)).toBe('/train');
      const body = JSON.parse(String(init?.body));
      expect(body.corpus.version).toBe(1);
      return new Response(JSON.stringify({
        model_id: 'abc', content_hash: 'ff', dims: [0, 2, 2, 2],
        train_bounds: [[0, 1], [0, 1]], goals: [[1, 1]],
      }));
    });
    vi.stubGlobal('fetch', fetchMock);
    const client = new ServiceClient('');
    const out = await client.train({ version: 1 }, { N: 100 });
    expect(out.model_id).toBe('abc');
    expect(fetchMock).toHaveBeenCalledOnce();
  });

  it('surfaces service error details', async () => {
    vi.stubGlobal('fetch', vi.fn(async () =>
      new Response(JSON.stringify({ detail: 'context of dim 2 required' }),
        { status: 400 })));
    const client = new ServiceClient('');
    await expect(client.field('m', { nx: 4, ny: 4, strategy: 'full' }))
      .rejects.toThrow(/context of dim 2 required/);
  });

  it('streams rollout messages in order', async () => {
    const script = [
      { type: 'session', session_id: 's1', model_id: 'm', status: 'running' },
      {
        type: 'step', iteration: 0, input: [0, 0], mean: [0.1, 0.2],
        weights: [0.4, 0.6, 0], k_max: 0, goal_index: 0, sigma_ep: 0.9,
        distance: 0.5,
      },
      { type: 'done', status: 'succeeded', iterations: 0, terminal_distance: 0 },
    ];
    vi.stubGlobal('fetch', vi.fn(async () => ndjsonResponse(script)));
    const client = new ServiceClient('');
    const seen: ServerMessage[] = [];
    await client.streamRollout('m', { x0: [0, 0], strategy: 'full' },
      (msg) => seen.push(msg));
    expect(seen.map((m) => m.type)).toEqual(['session', 'step', 'done']);
  });

  it('rejects undocumented stream messages', async () => {
    vi.stubGlobal('fetch', vi.fn(async () =>
      ndjsonResponse([{ type: 'mystery' }])));
    const client = new ServiceClient('');
    await expect(
      client.streamRollout('m', { x0: [0, 0], strategy: 'full' }, () => {}),
    ).rejects.toThrow(/undocumented/);
  });

  it('sends documented session messages', async () => {
    const fetchMock = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
      expect(String(url)).toBe('/sessions/s1/message');
      expect(JSON.parse(String(init?.body))).toEqual(
        { type: 'set_context', context: [1, 1] });
      return new Response(JSON.stringify({ accepted: true }));
    });
    vi.stubGlobal('fetch', fetchMock);
    const client = new ServiceClient('');
    await client.sendSessionMessage('s1', { type: 'set_context', context: [1, 1] });
    expect(fetchMock).toHaveBeenCalledOnce();
  });
});
