import { describe, expect, it } from 'vitest';
import { makeCommand, parseServerMessage, StateMessage } from '../src/protocol';

export function sampleState(overrides: Partial<StateMessage> = {}): StateMessage {
  const body = {
    p: [0, 0, 1] as [number, number, number],
    q: [1, 0, 0, 0] as [number, number, number, number],
    v: [0, 0, 0] as [number, number, number],
    omega: [0, 0, 0] as [number, number, number],
  };
  return {
    type: 'state',
    t: 1.5,
    phase: 'idle',
    selected_traj: null,
    source: 'teacher',
    load: body,
    uavs: [body, body, body],
    tensions: [4.9, 4.9, 4.9],
    plans: [],
    safety: { kind: 'None', reasons: [] },
    metrics: { rmse_pos_m: 0.01, rmse_orient_deg: 0.5, min_distance_m: 0.95 },
    events: [],
    ref_preview: [],
    heartbeat_age_s: 0.05,
    ...overrides,
  };
}

describe('parseServerMessage', () => {
  it('round-trips a full state message', () => {
    const msg = sampleState();
    const parsed = parseServerMessage(JSON.stringify(msg));
    expect(parsed).not.toBeNull();
    expect(parsed!.type).toBe('state');
    expect((parsed as StateMessage).load.p[2]).toBe(1);
  });

  it('parses acks and errors', () => {
    expect(parseServerMessage('{"type":"ack","name":"start"}')).toEqual({
      type: 'ack',
      name: 'start',
    });
    expect(parseServerMessage('{"type":"error","detail":"nope"}')).toEqual({
      type: 'error',
      detail: 'nope',
    });
  });

  it('rejects malformed payloads without throwing', () => {
    expect(parseServerMessage('{nope')).toBeNull();
    expect(parseServerMessage('42')).toBeNull();
    expect(parseServerMessage('{"type":"state"}')).toBeNull();
    const bad = sampleState();
    (bad.load.p as unknown as string[]) = ['a', 'b', 'c'];
    expect(parseServerMessage(JSON.stringify(bad))).toBeNull();
  });

  it('rejects unknown phases', () => {
    const bad = JSON.parse(JSON.stringify(sampleState()));
    bad.phase = 'warp';
    expect(parseServerMessage(JSON.stringify(bad))).toBeNull();
  });
});

describe('makeCommand', () => {
  it('builds bare and argumented commands', () => {
    expect(JSON.parse(makeCommand('start'))).toEqual({ type: 'cmd', name: 'start' });
    expect(JSON.parse(makeCommand('select_traj', { name: 'hover' }))).toEqual({
      type: 'cmd',
      name: 'select_traj',
      args: { name: 'hover' },
    });
  });
});
