// Top-down scene rendering: lanes, actor footprints by class, ego
// highlight, route polyline with waypoints, infraction badges.

import { Camera } from "./camera.js";
import { ActorState, StateFrame } from "./protocol.js";

export interface MapFrame {
  type: "map";
  digest: string;
  lanes: { id: string; width: number; centerline: [number, number][] }[];
  crosswalks: [number, number][][];
  statics: { id: string; x: number; y: number; yaw: number; length: number; width: number }[];
}

// structural subset of CanvasRenderingContext2D so tests can fake it
export interface DrawContext {
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  globalAlpha: number;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  closePath(): void;
  stroke(): void;
  fill(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  clearRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
  setLineDash(segments: number[]): void;
  save(): void;
  restore(): void;
}

export const CLASS_COLORS: Record<string, string> = {
  vehicle: "#5b8dd9",
  pedestrian: "#e8b84b",
  cyclist: "#6fbf73",
  static: "#8a8f98",
};
export const EGO_COLOR = "#ff5964";
export const ROUTE_COLOR = "#38c7a2";
export const LANE_COLOR = "#3a3f4a";

function boxCorners(x: number, y: number, yaw: number, length: number,
                    width: number): [number, number][] {
  const c = Math.cos(yaw);
  const s = Math.sin(yaw);
  const hl = length / 2;
  const hw = width / 2;
  const local: [number, number][] = [
    [hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw],
  ];
  return local.map(([lx, ly]) => [x + c * lx - s * ly, y + s * lx + c * ly]);
}

function drawPolyline(ctx: DrawContext, camera: Camera,
                      points: [number, number][]): void {
  if (points.length < 2) return;
  ctx.beginPath();
  const [x0, y0] = camera.toScreen(points[0][0], points[0][1]);
  ctx.moveTo(x0, y0);
  for (let i = 1; i < points.length; i++) {
    const [x, y] = camera.toScreen(points[i][0], points[i][1]);
    ctx.lineTo(x, y);
  }
  ctx.stroke();
}

function drawBox(ctx: DrawContext, camera: Camera, x: number, y: number,
                 yaw: number, length: number, width: number,
                 color: string, filled: boolean): void {
  const corners = boxCorners(x, y, yaw, length, width);
  ctx.beginPath();
  const [sx, sy] = camera.toScreen(corners[0][0], corners[0][1]);
  ctx.moveTo(sx, sy);
  for (let i = 1; i < corners.length; i++) {
    const [cx, cy] = camera.toScreen(corners[i][0], corners[i][1]);
    ctx.lineTo(cx, cy);
  }
  ctx.closePath();
  if (filled) {
    ctx.fillStyle = color;
    ctx.fill();
  } else {
    ctx.strokeStyle = color;
    ctx.stroke();
  }
  // heading tick from center to the nose
  const nose = [
    (corners[0][0] + corners[1][0]) / 2,
    (corners[0][1] + corners[1][1]) / 2,
  ];
  ctx.beginPath();
  const [mx, my] = camera.toScreen(x, y);
  const [nx, ny] = camera.toScreen(nose[0], nose[1]);
  ctx.moveTo(mx, my);
  ctx.lineTo(nx, ny);
  ctx.strokeStyle = "#ffffff";
  ctx.stroke();
}

function drawActor(ctx: DrawContext, camera: Camera, actor: ActorState): void {
  const color = CLASS_COLORS[actor.class] ?? CLASS_COLORS.vehicle;
  if (actor.class === "pedestrian") {
    const [sx, sy] = camera.toScreen(actor.x, actor.y);
    ctx.beginPath();
    ctx.arc(sx, sy, Math.max(2, 0.3 * camera.state.pixelsPerMeter), 0, 2 * Math.PI);
    ctx.fillStyle = color;
    ctx.fill();
  } else {
    drawBox(ctx, camera, actor.x, actor.y, actor.yaw, actor.length,
            actor.width, color, actor.class !== "static");
  }
}

export interface RenderStats {
  lanesDrawn: number;
  actorsDrawn: number;
  waypointsDrawn: number;
  badgesDrawn: number;
}

export function renderScene(ctx: DrawContext, width: number, height: number,
                            frame: StateFrame, map: MapFrame | null,
                            camera: Camera,
                            recentEvents: { kind: string; tick: number }[]): RenderStats {
  const stats: RenderStats = {
    lanesDrawn: 0, actorsDrawn: 0, waypointsDrawn: 0, badgesDrawn: 0,
  };
  ctx.clearRect(0, 0, width, height);
  camera.followEgo(frame.ego.x, frame.ego.y);

  if (map) {
    ctx.lineWidth = 1;
    ctx.setLineDash([]);
    for (const lane of map.lanes) {
      ctx.strokeStyle = LANE_COLOR;
      drawPolyline(ctx, camera, lane.centerline);
      stats.lanesDrawn++;
    }
    ctx.globalAlpha = 0.5;
    for (const cw of map.crosswalks) {
      ctx.strokeStyle = "#c9c9c9";
      drawPolyline(ctx, camera, [...cw, cw[0]]);
    }
    ctx.globalAlpha = 1;
    for (const obj of map.statics) {
      drawBox(ctx, camera, obj.x, obj.y, obj.yaw, obj.length, obj.width,
              CLASS_COLORS.static, false);
    }
  }

  // route with waypoint dots
  ctx.lineWidth = 2;
  ctx.strokeStyle = ROUTE_COLOR;
  ctx.setLineDash([6, 4]);
  drawPolyline(ctx, camera, frame.route);
  ctx.setLineDash([]);
  ctx.fillStyle = ROUTE_COLOR;
  for (const [wx, wy] of frame.route) {
    const [sx, sy] = camera.toScreen(wx, wy);
    ctx.beginPath();
    ctx.arc(sx, sy, 2, 0, 2 * Math.PI);
    ctx.fill();
    stats.waypointsDrawn++;
  }

  for (const actor of frame.actors) {
    drawActor(ctx, camera, actor);
    stats.actorsDrawn++;
  }
  // ego drawn last, highlighted
  drawBox(ctx, camera, frame.ego.x, frame.ego.y, frame.ego.yaw, 4.6, 2.0,
          EGO_COLOR, true);

  // infraction badges, newest first
  ctx.font = "12px monospace";
  let yOff = 18;
  for (const ev of recentEvents.slice(-4).reverse()) {
    ctx.fillStyle = "#ff5964";
    ctx.fillRect(8, yOff - 10, 10, 10);
    ctx.fillStyle = "#ffffff";
    ctx.fillText(`${ev.kind} @ tick ${ev.tick}`, 24, yOff);
    yOff += 16;
    stats.badgesDrawn++;
  }
  return stats;
}
