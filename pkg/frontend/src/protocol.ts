// Message types for the harness WebSocket protocol and strict parsing.
// Everything displayed by the console originates from a parsed StateMessage;
// the client never dead-reckons simulation state.

export interface BodyState {
  p: [number, number, number];
  q: [number, number, number, number];
  v: [number, number, number];
  omega: [number, number, number];
}

export interface PlanPolyline {
  t0: number;
  p: number[][];
  v: number[][];
}

export interface SafetyStatus {
  kind: 'None' | 'Hover' | 'Kill';
  reasons: string[];
}

export interface StateMessage {
  type: 'state';
  t: number;
  phase: 'idle' | 'awaiting_confirm' | 'flying' | 'hover' | 'completed' | 'killed';
  selected_traj: string | null;
  source: string;
  load: BodyState;
  uavs: BodyState[];
  tensions: number[];
  plans: PlanPolyline[];
  safety: SafetyStatus;
  metrics: { rmse_pos_m: number; rmse_orient_deg: number; min_distance_m: number };
  events: string[];
  ref_preview: number[][];
  heartbeat_age_s: number;
}

export interface AckMessage {
  type: 'ack';
  name: string;
}

export interface ErrorMessage {
  type: 'error';
  detail: string;
}

export type ServerMessage = StateMessage | AckMessage | ErrorMessage;

export type CommandName =
  | 'select_traj'
  | 'start'
  | 'confirm'
  | 'hover'
  | 'kill'
  | 'wrench'
  | 'heartbeat';

export interface Command {
  type: 'cmd';
  name: CommandName;
  args?: Record<string, unknown>;
}

const PHASES = new Set(['idle', 'awaiting_confirm', 'flying', 'hover', 'completed', 'killed']);

function isVec(x: unknown, n: number): boolean {
  return Array.isArray(x) && x.length === n && x.every((v) => typeof v === 'number' && isFinite(v));
}

function isBody(x: unknown): x is BodyState {
  const b = x as BodyState;
  return !!b && isVec(b.p, 3) && isVec(b.q, 4) && isVec(b.v, 3) && isVec(b.omega, 3);
}

/** Parse a server message; returns null (never throws) on anything malformed. */
export function parseServerMessage(raw: string): ServerMessage | null {
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch {
    return null;
  }
  const msg = doc as Record<string, unknown>;
  if (!msg || typeof msg !== 'object') return null;
  if (msg.type === 'ack' && typeof msg.name === 'string') {
    return { type: 'ack', name: msg.name };
  }
  if (msg.type === 'error' && typeof msg.detail === 'string') {
    return { type: 'error', detail: msg.detail };
  }
  if (msg.type !== 'state') return null;
  if (typeof msg.t !== 'number' || !PHASES.has(msg.phase as string)) return null;
  if (!isBody(msg.load)) return null;
  if (!Array.isArray(msg.uavs) || !msg.uavs.every(isBody)) return null;
  const safety = msg.safety as SafetyStatus;
  if (!safety || typeof safety.kind !== 'string' || !Array.isArray(safety.reasons)) return null;
  const metrics = msg.metrics as StateMessage['metrics'];
  if (!metrics || typeof metrics.rmse_pos_m !== 'number') return null;
  return {
    type: 'state',
    t: msg.t,
    phase: msg.phase as StateMessage['phase'],
    selected_traj: (msg.selected_traj as string) ?? null,
    source: (msg.source as string) ?? 'teacher',
    load: msg.load as BodyState,
    uavs: msg.uavs as BodyState[],
    tensions: (msg.tensions as number[]) ?? [],
    plans: (msg.plans as PlanPolyline[]) ?? [],
    safety,
    metrics,
    events: (msg.events as string[]) ?? [],
    ref_preview: (msg.ref_preview as number[][]) ?? [],
    heartbeat_age_s: (msg.heartbeat_age_s as number) ?? 0,
  };
}

export function makeCommand(name: CommandName, args?: Record<string, unknown>): string {
  const cmd: Command = args ? { type: 'cmd', name, args } : { type: 'cmd', name };
  return JSON.stringify(cmd);
}
