// WebSocket client: reconnection, a latest-value state buffer decoupling the
// render loop from message arrival, and the dead-man heartbeat loop that runs
// only while the operator holds the trigger.

import { makeCommand, parseServerMessage, ServerMessage, StateMessage } from './protocol.js';

export const HEARTBEAT_INTERVAL_MS = 100;
const RECONNECT_DELAY_MS = 1000;

// minimal structural type so the client runs in browsers and in node tests
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ClientEvents {
  onServerMessage?: (msg: ServerMessage) => void;
  onMalformed?: (raw: string) => void;
  onConnect?: () => void;
  onDisconnect?: () => void;
  onSendFailed?: (name: string) => void;
}

export class HarnessClient {
  private socket: SocketLike | null = null;
  private latest: StateMessage | null = null;
  private deadManHeld = false;
  private heartbeatTimer: ReturnType<typeof setInterval> | null = null;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private closed = false;

  constructor(
    private url: string,
    private makeSocket: SocketFactory,
    private events: ClientEvents = {},
    private reconnect = true,
  ) {}

  connect(): void {
    this.closed = false;
    const sock = this.makeSocket(this.url);
    this.socket = sock;
    sock.onopen = () => this.events.onConnect?.();
    sock.onmessage = (ev) => {
      const raw = String(ev.data);
      const msg = parseServerMessage(raw);
      if (msg === null) {
        this.events.onMalformed?.(raw);
        return;
      }
      if (msg.type === 'state') this.latest = msg;
      this.events.onServerMessage?.(msg);
    };
    sock.onclose = () => {
      this.events.onDisconnect?.();
      this.socket = null;
      if (this.reconnect && !this.closed) {
        this.reconnectTimer = setTimeout(() => this.connect(), RECONNECT_DELAY_MS);
      }
    };
    sock.onerror = () => {
      /* onclose follows; nothing else to do */
    };
  }

  close(): void {
    this.closed = true;
    this.setDeadMan(false);
    if (this.reconnectTimer) clearTimeout(this.reconnectTimer);
    this.socket?.close();
    this.socket = null;
  }

  /** Most recent state, regardless of how often the caller renders. */
  latestState(): StateMessage | null {
    return this.latest;
  }

  connectedNow(): boolean {
    return this.socket !== null;
  }

  send(name: Parameters<typeof makeCommand>[0], args?: Record<string, unknown>): boolean {
    if (!this.socket) {
      this.events.onSendFailed?.(name);
      return false;
    }
    try {
      this.socket.send(makeCommand(name, args));
      return true;
    } catch {
      this.events.onSendFailed?.(name);
      return false;
    }
  }

  /** Hold/release the dead-man trigger. While held, heartbeats flow every
   * 100 ms; on release they stop and the server will kill the UAVs. */
  setDeadMan(held: boolean): void {
    if (held === this.deadManHeld) return;
    this.deadManHeld = held;
    if (held) {
      this.send('heartbeat');
      this.heartbeatTimer = setInterval(() => this.send('heartbeat'), HEARTBEAT_INTERVAL_MS);
    } else if (this.heartbeatTimer) {
      clearInterval(this.heartbeatTimer);
      this.heartbeatTimer = null;
    }
  }

  deadManActive(): boolean {
    return this.deadManHeld;
  }
}
