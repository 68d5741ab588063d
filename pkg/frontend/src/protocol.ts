// Bridge wire protocol: newline-delimited JSON frames.

export interface EgoState {
  id: string;
  x: number;
  y: number;
  yaw: number;
  v: number;
  throttle: number;
  brake: number;
  steer: number;
}

export interface ActorState {
  id: string;
  class: string;
  x: number;
  y: number;
  yaw: number;
  v: number;
  length: number;
  width: number;
}

export interface EpisodeInfo {
  rc_pct: number;
  infractions: string[];
  timer_s: number;
  done?: boolean;
  end_reason?: string;
  paused?: boolean;
  takeover?: boolean;
  recording?: boolean;
  flagged?: boolean;
}

export interface StateFrame {
  type: "state";
  tick: number;
  sim_time_s: number;
  ego: EgoState;
  actors: ActorState[];
  route: [number, number][];
  lane_graph_digest: string;
  episode: EpisodeInfo;
}

export interface EventFrame {
  type: "event";
  tick: number;
  kind: string;
  details: string;
}

export interface ControlFrame {
  type: "control";
  tick_hint: number;
  throttle: number;
  brake: number;
  steer: number;
  takeover: boolean;
}

export type SessionVerb =
  | "pause"
  | "resume"
  | "reset"
  | "record_start"
  | "record_stop"
  | "hello";

export interface SessionFrame {
  type: "session";
  verb: SessionVerb;
  token?: string;
}

const isNum = (v: unknown): v is number =>
  typeof v === "number" && Number.isFinite(v);

export function parseStateFrame(raw: unknown): StateFrame | null {
  if (typeof raw !== "object" || raw === null) return null;
  const f = raw as Record<string, unknown>;
  if (f.type !== "state" || !isNum(f.tick) || !isNum(f.sim_time_s)) return null;
  const ego = f.ego as Record<string, unknown> | undefined;
  if (!ego || !isNum(ego.x) || !isNum(ego.y) || !isNum(ego.yaw) || !isNum(ego.v)) {
    return null;
  }
  if (!Array.isArray(f.actors) || !Array.isArray(f.route)) return null;
  const actors: ActorState[] = [];
  for (const a of f.actors as Record<string, unknown>[]) {
    if (!a || !isNum(a.x) || !isNum(a.y) || !isNum(a.yaw)) return null;
    actors.push({
      id: String(a.id ?? ""),
      class: String(a.class ?? "vehicle"),
      x: a.x,
      y: a.y,
      yaw: a.yaw,
      v: isNum(a.v) ? a.v : 0,
      length: isNum(a.length) ? a.length : 4.6,
      width: isNum(a.width) ? a.width : 2.0,
    });
  }
  const route: [number, number][] = [];
  for (const p of f.route as unknown[]) {
    if (!Array.isArray(p) || !isNum(p[0]) || !isNum(p[1])) return null;
    route.push([p[0], p[1]]);
  }
  const ep = (f.episode ?? {}) as Record<string, unknown>;
  return {
    type: "state",
    tick: f.tick,
    sim_time_s: f.sim_time_s,
    ego: {
      id: String(ego.id ?? "ego"),
      x: ego.x,
      y: ego.y,
      yaw: ego.yaw,
      v: ego.v,
      throttle: isNum(ego.throttle) ? ego.throttle : 0,
      brake: isNum(ego.brake) ? ego.brake : 0,
      steer: isNum(ego.steer) ? ego.steer : 0,
    },
    actors,
    route,
    lane_graph_digest: String(f.lane_graph_digest ?? ""),
    episode: {
      rc_pct: isNum(ep.rc_pct) ? ep.rc_pct : 0,
      infractions: Array.isArray(ep.infractions)
        ? (ep.infractions as unknown[]).map(String)
        : [],
      timer_s: isNum(ep.timer_s) ? ep.timer_s : 0,
      done: Boolean(ep.done),
      end_reason: String(ep.end_reason ?? ""),
      paused: Boolean(ep.paused),
      takeover: Boolean(ep.takeover),
      recording: Boolean(ep.recording),
      flagged: Boolean(ep.flagged),
    },
  };
}

export function parseEventFrame(raw: unknown): EventFrame | null {
  if (typeof raw !== "object" || raw === null) return null;
  const f = raw as Record<string, unknown>;
  if (f.type !== "event" || !isNum(f.tick)) return null;
  return {
    type: "event",
    tick: f.tick,
    kind: String(f.kind ?? ""),
    details: String(f.details ?? ""),
  };
}

export function encodeControl(frame: ControlFrame): string {
  return JSON.stringify(frame);
}

export function encodeSession(verb: SessionVerb, token?: string): string {
  const frame: SessionFrame = { type: "session", verb };
  if (token !== undefined) frame.token = token;
  return JSON.stringify(frame);
}
