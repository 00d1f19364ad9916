import { describe, expect, it } from 'vitest';
import { commandEnabled, initialState, reduce } from '../src/store';
import { sampleState } from './protocol.test';

function connected() {
  return reduce(initialState(), { kind: 'connected' });
}

describe('store reducer', () => {
  it('starts disconnected with controls disabled', () => {
    const s = initialState();
    expect(s.connected).toBe(false);
    for (const name of ['start', 'confirm', 'hover', 'kill', 'select_traj']) {
      expect(commandEnabled(s, name)).toBe(false);
    }
  });

  it('confirm is enabled only in awaiting_confirm', () => {
    let s = connected();
    s = reduce(s, {
      kind: 'server',
      message: sampleState({ phase: 'awaiting_confirm', selected_traj: 'hover' }),
    });
    expect(commandEnabled(s, 'confirm')).toBe(true);
    s = reduce(s, { kind: 'server', message: sampleState({ phase: 'flying' }) });
    expect(commandEnabled(s, 'confirm')).toBe(false);
  });

  it('start needs a selected trajectory', () => {
    let s = connected();
    s = reduce(s, { kind: 'server', message: sampleState({ phase: 'idle' }) });
    expect(commandEnabled(s, 'start')).toBe(false);
    s = reduce(s, {
      kind: 'server',
      message: sampleState({ phase: 'idle', selected_traj: 'eight_2.2x2' }),
    });
    expect(commandEnabled(s, 'start')).toBe(true);
  });

  it('tracks at most one pending mission command', () => {
    let s = connected();
    s = reduce(s, {
      kind: 'server',
      message: sampleState({ phase: 'idle', selected_traj: 'hover' }),
    });
    s = reduce(s, { kind: 'command_sent', name: 'start' });
    expect(s.pendingCommand).toBe('start');
    expect(commandEnabled(s, 'start')).toBe(false);
    expect(commandEnabled(s, 'kill')).toBe(false);
    s = reduce(s, { kind: 'server', message: { type: 'ack', name: 'start' } });
    expect(s.pendingCommand).toBeNull();
  });

  it('shows a banner on new safety interventions', () => {
    let s = connected();
    s = reduce(s, { kind: 'server', message: sampleState() });
    expect(s.banners.length).toBe(0);
    s = reduce(s, {
      kind: 'server',
      message: sampleState({
        phase: 'killed',
        safety: { kind: 'Kill', reasons: ['uav0-uav1 separation 0.35 m'] },
      }),
    });
    expect(s.banners.length).toBe(1);
    expect(s.banners[0].text).toContain('Kill');
    expect(s.banners[0].text).toContain('separation');
    // repeated identical interventions do not spam new banners
    s = reduce(s, {
      kind: 'server',
      message: sampleState({
        phase: 'killed',
        safety: { kind: 'Kill', reasons: ['uav0-uav1 separation 0.35 m'] },
      }),
    });
    expect(s.banners.length).toBe(1);
  });

  it('server errors surface as banners and clear pending commands', () => {
    let s = connected();
    s = reduce(s, { kind: 'command_sent', name: 'start' });
    s = reduce(s, { kind: 'server', message: { type: 'error', detail: 'no trajectory' } });
    expect(s.pendingCommand).toBeNull();
    expect(s.banners.at(-1)?.text).toBe('no trajectory');
  });

  it('malformed payloads go to diagnostics, not state', () => {
    let s = connected();
    const before = s.lastState;
    s = reduce(s, { kind: 'malformed', raw: '{broken' });
    expect(s.diagnostics.length).toBe(1);
    expect(s.lastState).toBe(before);
  });

  it('disconnect grays everything out', () => {
    let s = connected();
    s = reduce(s, { kind: 'server', message: sampleState({ phase: 'flying' }) });
    s = reduce(s, { kind: 'disconnected' });
    expect(s.phase).toBe('disconnected');
    expect(commandEnabled(s, 'kill')).toBe(false);
  });
});
