// Console entry point: wire the DOM to the client, store, and renderer.
// Hold Space (or the on-screen button) as the dead-man trigger; release and
// the server powers the UAVs down.

import { HarnessClient } from './client.js';
import { buildPanels, buildScene, paint, Viewport } from './render.js';
import { commandEnabled, initialState, reduce, UiSessionState } from './store.js';

const WS_URL = (() => {
  const qs = new URLSearchParams(location.search);
  return qs.get('ws') ?? `ws://${location.hostname || 'localhost'}:8765/ws`;
})();

let state: UiSessionState = initialState();

const canvas = document.getElementById('view') as HTMLCanvasElement;
const ctx = canvas.getContext('2d')!;
const view: Viewport = { width: canvas.width, height: canvas.height, metersAcross: 9 };

const client = new HarnessClient(
  WS_URL,
  (url) => new WebSocket(url) as unknown as import('./client.js').SocketLike,
  {
    onConnect: () => update({ kind: 'connected' }),
    onDisconnect: () => update({ kind: 'disconnected' }),
    onServerMessage: (msg) => update({ kind: 'server', message: msg }),
    onMalformed: (raw) => update({ kind: 'malformed', raw }),
    onSendFailed: (name) => update({ kind: 'send_failed', name }),
  },
);

function update(ev: Parameters<typeof reduce>[1]): void {
  state = reduce(state, ev);
  syncControls();
}

function $(id: string): HTMLElement {
  return document.getElementById(id)!;
}

function syncControls(): void {
  const sel = $('traj') as HTMLSelectElement;
  for (const name of ['start', 'confirm', 'hover', 'kill', 'wrench']) {
    ($(name) as HTMLButtonElement).disabled = !commandEnabled(state, name);
  }
  sel.disabled = !commandEnabled(state, 'select_traj');
  $('conn').textContent = state.connected ? 'connected' : 'disconnected';
  $('conn').className = state.connected ? 'ok' : 'bad';
  $('deadman').className = client.deadManActive() ? 'held' : 'released';
  const banner = $('banners');
  banner.innerHTML = '';
  for (const b of state.banners.slice(-4)) {
    const div = document.createElement('div');
    div.className = `banner ${b.level}`;
    div.textContent = b.text;
    banner.appendChild(div);
  }
  $('diag').textContent = state.diagnostics.slice(-3).join('\n');
}

function renderLoop(): void {
  const latest = client.latestState();
  if (latest) {
    paint(ctx, view, buildScene(latest, view));
    const panels = buildPanels(latest);
    $('phase').textContent = `${panels.phase} (${panels.source})`;
    $('time').textContent = panels.t;
    $('loadpos').textContent = panels.loadPos;
    $('rmse').textContent = `${panels.rmsePos} / ${panels.rmseOrient}`;
    $('mindist').textContent = panels.minDistance;
    $('tension').textContent = panels.tensions;
    $('safety').textContent = panels.safety;
  }
  requestAnimationFrame(renderLoop);
}

($('traj') as HTMLSelectElement).addEventListener('change', (ev) => {
  const name = (ev.target as HTMLSelectElement).value;
  if (name) {
    client.send('select_traj', { name });
    update({ kind: 'command_sent', name: 'select_traj' });
  }
});
for (const name of ['start', 'confirm', 'hover', 'kill'] as const) {
  $(name).addEventListener('click', () => {
    if (client.send(name)) update({ kind: 'command_sent', name });
  });
}
$('wrench').addEventListener('click', () => {
  const fx = parseFloat(($('wx') as HTMLInputElement).value) || 0;
  const fy = parseFloat(($('wy') as HTMLInputElement).value) || 0;
  const fz = parseFloat(($('wz') as HTMLInputElement).value) || 0;
  client.send('wrench', { force: [fx, fy, fz], duration_s: 1.0 });
});

// dead-man: hold Space or hold the button
window.addEventListener('keydown', (ev) => {
  if (ev.code === 'Space' && !ev.repeat) {
    ev.preventDefault();
    client.setDeadMan(true);
    syncControls();
  }
});
window.addEventListener('keyup', (ev) => {
  if (ev.code === 'Space') {
    client.setDeadMan(false);
    syncControls();
  }
});
$('deadman').addEventListener('mousedown', () => {
  client.setDeadMan(true);
  syncControls();
});
window.addEventListener('mouseup', () => {
  if (client.deadManActive()) {
    client.setDeadMan(false);
    syncControls();
  }
});

client.connect();
syncControls();
renderLoop();
