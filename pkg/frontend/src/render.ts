// Top-down scene construction. buildScene() is pure (state -> primitives)
// so it can be tested without a canvas; paint() walks the primitives.

import { StateMessage } from './protocol.js';

export interface SceneCircle {
  kind: 'circle';
  x: number;
  y: number;
  r: number;
  color: string;
  fill: boolean;
  label?: string;
}

export interface ScenePolyline {
  kind: 'polyline';
  points: [number, number][];
  color: string;
  dashed?: boolean;
}

export type ScenePrimitive = SceneCircle | ScenePolyline;

export interface Viewport {
  width: number;
  height: number;
  metersAcross: number; // world meters mapped to the canvas width
}

const UAV_COLORS = ['#e4572e', '#17bebb', '#76b041'];

export function worldToScreen(
  x: number,
  y: number,
  view: Viewport,
): [number, number] {
  const scale = view.width / view.metersAcross;
  // +x right, +y up
  return [view.width / 2 + x * scale, view.height / 2 - y * scale];
}

export function buildScene(state: StateMessage, view: Viewport): ScenePrimitive[] {
  const prims: ScenePrimitive[] = [];
  const s = (p: number[]): [number, number] => worldToScreen(p[0], p[1], view);

  if (state.ref_preview.length > 1) {
    prims.push({
      kind: 'polyline',
      points: state.ref_preview.map((p) => s(p)),
      color: '#999999',
      dashed: true,
    });
  }
  state.plans.forEach((plan, i) => {
    if (plan.p.length > 1) {
      prims.push({
        kind: 'polyline',
        points: plan.p.map((p) => s(p)),
        color: UAV_COLORS[i % UAV_COLORS.length],
      });
    }
  });
  const scale = view.width / view.metersAcross;
  const [lx, ly] = s(state.load.p);
  prims.push({
    kind: 'circle', x: lx, y: ly, r: Math.max(4, 0.18 * scale),
    color: '#2e4057', fill: true, label: 'load',
  });
  state.uavs.forEach((u, i) => {
    const [x, y] = s(u.p);
    prims.push({
      kind: 'circle', x, y, r: Math.max(3, 0.12 * scale),
      color: UAV_COLORS[i % UAV_COLORS.length], fill: true, label: `uav${i}`,
    });
  });
  return prims;
}

export interface PanelData {
  phase: string;
  source: string;
  t: string;
  loadPos: string;
  rmsePos: string;
  rmseOrient: string;
  minDistance: string;
  tensions: string;
  safety: string;
}

export function buildPanels(state: StateMessage): PanelData {
  const p = state.load.p;
  return {
    phase: state.phase,
    source: state.source,
    t: `${state.t.toFixed(1)} s`,
    loadPos: `(${p[0].toFixed(2)}, ${p[1].toFixed(2)}, ${p[2].toFixed(2)}) m`,
    rmsePos: `${state.metrics.rmse_pos_m.toFixed(3)} m`,
    rmseOrient: `${state.metrics.rmse_orient_deg.toFixed(2)} deg`,
    minDistance: `${state.metrics.min_distance_m.toFixed(2)} m`,
    tensions: state.tensions.map((t) => t.toFixed(1)).join(' / ') + ' N',
    safety: state.safety.kind === 'None' ? 'ok' : `${state.safety.kind}: ${state.safety.reasons[0] ?? ''}`,
  };
}

export function paint(ctx: CanvasRenderingContext2D, view: Viewport, prims: ScenePrimitive[]): void {
  ctx.clearRect(0, 0, view.width, view.height);
  ctx.fillStyle = '#f7f7f4';
  ctx.fillRect(0, 0, view.width, view.height);
  for (const prim of prims) {
    if (prim.kind === 'polyline') {
      ctx.strokeStyle = prim.color;
      ctx.lineWidth = 1.5;
      ctx.setLineDash(prim.dashed ? [6, 6] : []);
      ctx.beginPath();
      prim.points.forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
      ctx.stroke();
      ctx.setLineDash([]);
    } else {
      ctx.fillStyle = prim.color;
      ctx.strokeStyle = prim.color;
      ctx.beginPath();
      ctx.arc(prim.x, prim.y, prim.r, 0, Math.PI * 2);
      if (prim.fill) ctx.fill();
      else ctx.stroke();
    }
  }
}
