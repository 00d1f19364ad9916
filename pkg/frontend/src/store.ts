// UI session state: a small reducer over connection/server events.
// Invariants: commands are disabled until connected; confirm is enabled only
// in awaiting_confirm; at most one mission-phase command awaits its ack.

import { ServerMessage, StateMessage } from './protocol.js';

export interface Banner {
  level: 'info' | 'error';
  text: string;
}

export interface UiSessionState {
  connected: boolean;
  lastState: StateMessage | null;
  selectedTraj: string | null;
  phase: string;
  pendingCommand: string | null;
  banners: Banner[];
  diagnostics: string[];
}

export const MISSION_COMMANDS = new Set(['start', 'confirm', 'hover', 'kill']);
const BANNER_LIMIT = 6;
const DIAG_LIMIT = 8;

export function initialState(): UiSessionState {
  return {
    connected: false,
    lastState: null,
    selectedTraj: null,
    phase: 'disconnected',
    pendingCommand: null,
    banners: [],
    diagnostics: [],
  };
}

export type UiEvent =
  | { kind: 'connected' }
  | { kind: 'disconnected' }
  | { kind: 'server'; message: ServerMessage }
  | { kind: 'malformed'; raw: string }
  | { kind: 'command_sent'; name: string }
  | { kind: 'send_failed'; name: string };

function pushBanner(state: UiSessionState, banner: Banner): void {
  state.banners = [...state.banners.slice(-(BANNER_LIMIT - 1)), banner];
}

export function reduce(prev: UiSessionState, ev: UiEvent): UiSessionState {
  const state: UiSessionState = { ...prev };
  switch (ev.kind) {
    case 'connected':
      state.connected = true;
      state.phase = prev.lastState?.phase ?? 'idle';
      break;
    case 'disconnected':
      state.connected = false;
      state.phase = 'disconnected';
      state.pendingCommand = null;
      break;
    case 'command_sent':
      if (MISSION_COMMANDS.has(ev.name)) state.pendingCommand = ev.name;
      break;
    case 'send_failed':
      state.pendingCommand = null;
      pushBanner(state, { level: 'error', text: `failed to send ${ev.name}` });
      break;
    case 'malformed':
      state.diagnostics = [
        ...prev.diagnostics.slice(-(DIAG_LIMIT - 1)),
        `malformed message: ${ev.raw.slice(0, 80)}`,
      ];
      break;
    case 'server': {
      const msg = ev.message;
      if (msg.type === 'error') {
        state.pendingCommand = null;
        pushBanner(state, { level: 'error', text: msg.detail });
      } else if (msg.type === 'ack') {
        if (MISSION_COMMANDS.has(msg.name)) state.pendingCommand = null;
      } else {
        const previousKind = prev.lastState?.safety.kind ?? 'None';
        const previousPhase = prev.lastState?.phase;
        state.lastState = msg;
        state.phase = msg.phase;
        state.selectedTraj = msg.selected_traj;
        if (msg.safety.kind !== 'None' && msg.safety.kind !== previousKind) {
          pushBanner(state, {
            level: 'error',
            text: `safety ${msg.safety.kind}: ${msg.safety.reasons.join('; ') || 'triggered'}`,
          });
        }
        if (msg.phase === 'killed' && previousPhase !== 'killed' &&
            msg.safety.kind === 'None') {
          // kills that do not come from the safety monitor (dead-man,
          // operator kill) still deserve a banner
          const why = msg.events.at(-1) ?? 'UAVs killed';
          pushBanner(state, { level: 'error', text: why });
        }
      }
      break;
    }
  }
  return state;
}

/** Gate for interactive controls, per the UI invariants. */
export function commandEnabled(state: UiSessionState, name: string): boolean {
  if (!state.connected) return false;
  if (state.pendingCommand && MISSION_COMMANDS.has(name)) return false;
  switch (name) {
    case 'confirm':
      return state.phase === 'awaiting_confirm';
    case 'start':
      return (
        state.selectedTraj !== null &&
        ['idle', 'hover', 'completed'].includes(state.phase)
      );
    case 'hover':
      return ['flying', 'awaiting_confirm'].includes(state.phase);
    case 'kill':
      return state.phase !== 'killed';
    case 'select_traj':
      return ['idle', 'awaiting_confirm', 'hover', 'completed'].includes(state.phase);
    case 'wrench':
      return state.phase === 'flying';
    default:
      return true;
  }
}
