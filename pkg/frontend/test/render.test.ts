import { describe, expect, it } from "vitest";

import { Camera } from "../src/camera.js";
import { hudModel } from "../src/hud.js";
import { parseStateFrame } from "../src/protocol.js";
import { DrawContext, MapFrame, renderScene } from "../src/render.js";

class FakeContext implements DrawContext {
  strokeStyle: string | CanvasGradient | CanvasPattern = "";
  fillStyle: string | CanvasGradient | CanvasPattern = "";
  lineWidth = 1;
  font = "";
  globalAlpha = 1;
  calls: Record<string, number> = {};
  points: [number, number][] = [];

  private bump(name: string): void {
    this.calls[name] = (this.calls[name] ?? 0) + 1;
  }

  beginPath(): void { this.bump("beginPath"); }
  moveTo(x: number, y: number): void { this.bump("moveTo"); this.points.push([x, y]); }
  lineTo(x: number, y: number): void { this.bump("lineTo"); this.points.push([x, y]); }
  closePath(): void { this.bump("closePath"); }
  stroke(): void { this.bump("stroke"); }
  fill(): void { this.bump("fill"); }
  arc(): void { this.bump("arc"); }
  fillRect(): void { this.bump("fillRect"); }
  clearRect(): void { this.bump("clearRect"); }
  fillText(): void { this.bump("fillText"); }
  setLineDash(): void { this.bump("setLineDash"); }
  save(): void { this.bump("save"); }
  restore(): void { this.bump("restore"); }
}

const mapFrame: MapFrame = {
  type: "map",
  digest: "d",
  lanes: [
    { id: "e0", width: 3.5, centerline: [[-50, -1.75], [50, -1.75]] },
    { id: "w0", width: 3.5, centerline: [[50, 1.75], [-50, 1.75]] },
  ],
  crosswalks: [[[10, -4], [12, -4], [12, 4], [10, 4]]],
  statics: [{ id: "b", x: 5, y: -5, yaw: 0, length: 2, width: 2 }],
};

const frame = (actors: unknown[] = []) => parseStateFrame({
  type: "state",
  tick: 10,
  sim_time_s: 0.5,
  ego: { id: "cav_1", x: 0, y: -1.75, yaw: 0, v: 6,
         throttle: 0.5, brake: 0, steer: 0 },
  actors,
  route: [[0, -1.75], [20, -1.75], [40, -1.75]],
  lane_graph_digest: "d",
  episode: { rc_pct: 25.0, infractions: [], timer_s: 0.5, recording: true },
})!;

describe("scene rendering", () => {
  it("empty scene draws lanes, ego, and route only", () => {
    const ctx = new FakeContext();
    const camera = new Camera(800, 600);
    const stats = renderScene(ctx, 800, 600, frame(), mapFrame, camera, []);
    expect(stats.lanesDrawn).toBe(2);
    expect(stats.actorsDrawn).toBe(0);
    expect(stats.waypointsDrawn).toBe(3);
    expect(ctx.calls.clearRect).toBe(1);
    expect(ctx.calls.stroke).toBeGreaterThan(0);
  });

  it("actors draw with class shapes", () => {
    const ctx = new FakeContext();
    const camera = new Camera(800, 600);
    const stats = renderScene(ctx, 800, 600, frame([
      { id: "v", class: "vehicle", x: 10, y: -1.75, yaw: 0, v: 3,
        length: 4.6, width: 2 },
      { id: "p", class: "pedestrian", x: 12, y: 3, yaw: 1.57, v: 1.4,
        length: 0.6, width: 0.6 },
    ]), mapFrame, camera, []);
    expect(stats.actorsDrawn).toBe(2);
    expect(ctx.calls.arc).toBeGreaterThan(0); // pedestrian disc
  });

  it("infraction badges render for recent events", () => {
    const ctx = new FakeContext();
    const camera = new Camera(800, 600);
    const stats = renderScene(ctx, 800, 600, frame(), mapFrame, camera, [
      { kind: "collision_vehicle", tick: 8 },
      { kind: "off_route_timeout", tick: 9 },
    ]);
    expect(stats.badgesDrawn).toBe(2);
    expect(ctx.calls.fillText).toBeGreaterThanOrEqual(2);
  });

  it("ego follow keeps the ego centered on screen", () => {
    const ctx = new FakeContext();
    const camera = new Camera(800, 600);
    camera.state.follow = true;
    renderScene(ctx, 800, 600, frame(), mapFrame, camera, []);
    const [sx, sy] = camera.toScreen(0, -1.75);
    expect(sx).toBeCloseTo(400);
    expect(sy).toBeCloseTo(300);
  });
});

describe("camera transforms", () => {
  it("world-screen round trip", () => {
    const camera = new Camera(640, 480);
    camera.state.centerX = 12;
    camera.state.centerY = -7;
    camera.state.pixelsPerMeter = 9;
    const [sx, sy] = camera.toScreen(20, 4);
    const [wx, wy] = camera.toWorld(sx, sy);
    expect(wx).toBeCloseTo(20, 9);
    expect(wy).toBeCloseTo(4, 9);
  });

  it("north is up: +y maps to smaller screen y", () => {
    const camera = new Camera(640, 480);
    const [, y0] = camera.toScreen(0, 0);
    const [, y1] = camera.toScreen(0, 10);
    expect(y1).toBeLessThan(y0);
  });

  it("zoom keeps the anchor point fixed", () => {
    const camera = new Camera(640, 480);
    camera.state.centerX = 5;
    const anchor: [number, number] = [100, 200];
    const before = camera.toWorld(...anchor);
    camera.zoom(1.5, anchor);
    const after = camera.toWorld(...anchor);
    expect(after[0]).toBeCloseTo(before[0], 9);
    expect(after[1]).toBeCloseTo(before[1], 9);
  });

  it("pan disengages follow", () => {
    const camera = new Camera(640, 480);
    camera.state.follow = true;
    camera.pan(10, 5);
    expect(camera.state.follow).toBe(false);
  });
});

describe("hud model", () => {
  it("reports both speed units and channel bars", () => {
    const model = hudModel(frame());
    expect(model.speedMs).toBe("6.0");
    expect(model.speedKmh).toBe("21.6");
    expect(model.throttlePct).toBe(67); // 0.5 of the 0.75 range
    expect(model.routeCompletion).toBe("25.0");
    expect(model.recording).toBe(true);
    expect(model.gear).toBe("D");
  });
});
