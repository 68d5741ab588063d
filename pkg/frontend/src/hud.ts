// Telemetry panel model: pure computation from the latest state frame so
// the DOM layer stays a thin binding.

import { StateFrame } from "./protocol.js";

export interface HudModel {
  speedMs: string;
  speedKmh: string;
  gear: string;
  throttlePct: number; // 0..100 of channel range
  brakePct: number;
  steerPct: number; // -100..100
  timer: string;
  routeCompletion: string;
  recording: boolean;
  takeover: boolean;
  paused: boolean;
  flagged: boolean;
  status: string;
}

export function hudModel(frame: StateFrame): HudModel {
  const v = frame.ego.v;
  const ep = frame.episode;
  let status = "running";
  if (ep.done) status = `finished (${ep.end_reason || "complete"})`;
  else if (ep.paused) status = "paused";
  else if (ep.takeover) status = "takeover";
  return {
    speedMs: v.toFixed(1),
    speedKmh: (v * 3.6).toFixed(1),
    gear: v > 0.05 ? "D" : "N",
    throttlePct: Math.round((frame.ego.throttle / 0.75) * 100),
    brakePct: Math.round(frame.ego.brake * 100),
    steerPct: Math.round(frame.ego.steer * 100),
    timer: ep.timer_s.toFixed(2),
    routeCompletion: ep.rc_pct.toFixed(1),
    recording: Boolean(ep.recording),
    takeover: Boolean(ep.takeover),
    paused: Boolean(ep.paused),
    flagged: Boolean(ep.flagged),
    status,
  };
}

export function applyHud(root: {
  querySelector(sel: string): { textContent: string | null } | null;
}, model: HudModel): void {
  const set = (sel: string, text: string) => {
    const el = root.querySelector(sel);
    if (el) el.textContent = text;
  };
  set("#hud-speed", `${model.speedMs} m/s (${model.speedKmh} km/h)`);
  set("#hud-gear", model.gear);
  set("#hud-throttle", `${model.throttlePct}%`);
  set("#hud-brake", `${model.brakePct}%`);
  set("#hud-steer", `${model.steerPct}%`);
  set("#hud-timer", `${model.timer} s`);
  set("#hud-rc", `${model.routeCompletion}%`);
  set("#hud-status", model.status + (model.recording ? " [REC]" : "")
    + (model.flagged ? " [FLAGGED]" : ""));
}
