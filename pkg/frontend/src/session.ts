// Session client: one socket, one control frame at most per received state
// frame, zero control frames while takeover is off.

import { disconnectFailsafe, MappedControl } from "./input.js";
import {
  ControlFrame,
  encodeControl,
  encodeSession,
  EventFrame,
  parseEventFrame,
  parseStateFrame,
  SessionVerb,
  StateFrame,
} from "./protocol.js";
import { MapFrame } from "./render.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: string }) => void) | null;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
}

export interface SessionCallbacks {
  onState?: (frame: StateFrame) => void;
  onEvent?: (frame: EventFrame) => void;
  onMap?: (frame: MapFrame) => void;
  onConnection?: (connected: boolean) => void;
}

export type ControlSource = () => MappedControl;

export class SessionClient {
  connected = false;
  takeover = false;
  droppedFrames = 0;
  latestState: StateFrame | null = null;
  latestMap: MapFrame | null = null;
  private lastControlTick = -1;

  constructor(private socket: SocketLike,
              private controlSource: ControlSource,
              private callbacks: SessionCallbacks = {},
              private token?: string) {
    socket.onopen = () => {
      this.connected = true;
      if (this.token !== undefined) {
        socket.send(encodeSession("hello", this.token));
      }
      this.callbacks.onConnection?.(true);
    };
    socket.onclose = () => {
      this.connected = false;
      this.takeover = false;
      this.callbacks.onConnection?.(false);
    };
    socket.onmessage = (ev) => this.handleLine(ev.data);
  }

  handleLine(data: string): void {
    for (const line of data.split("\n")) {
      if (!line.trim()) continue;
      let raw: unknown;
      try {
        raw = JSON.parse(line);
      } catch {
        this.droppedFrames++;
        continue;
      }
      const kind = (raw as { type?: string }).type;
      if (kind === "state") {
        const frame = parseStateFrame(raw);
        if (frame === null) {
          this.droppedFrames++;
          continue;
        }
        // render only the latest frame, never interpolate backward
        if (this.latestState && frame.tick < this.latestState.tick) {
          continue;
        }
        this.latestState = frame;
        this.callbacks.onState?.(frame);
        this.emitControlFor(frame);
      } else if (kind === "event") {
        const frame = parseEventFrame(raw);
        if (frame) this.callbacks.onEvent?.(frame);
      } else if (kind === "map") {
        this.latestMap = raw as MapFrame;
        this.callbacks.onMap?.(this.latestMap);
      }
      // unknown frame types ignored
    }
  }

  /** Control frames go out tick-aligned: at most one per state frame, and
   * only while takeover is active. */
  private emitControlFor(frame: StateFrame): void {
    if (!this.takeover || !this.connected) return;
    if (frame.tick === this.lastControlTick) return;
    this.lastControlTick = frame.tick;
    const values = this.controlSource();
    const control: ControlFrame = {
      type: "control",
      tick_hint: frame.tick,
      throttle: values.throttle,
      brake: values.brake,
      steer: values.steer,
      takeover: true,
    };
    this.socket.send(encodeControl(control));
  }

  setTakeover(active: boolean): void {
    if (this.takeover && !active && this.connected) {
      // explicit release so the policy resumes immediately
      const release: ControlFrame = {
        type: "control",
        tick_hint: this.latestState?.tick ?? 0,
        throttle: 0,
        brake: 0,
        steer: 0,
        takeover: false,
      };
      this.socket.send(encodeControl(release));
    }
    this.takeover = active;
  }

  /** Input device dropped: auto-release and send one full-brake frame. */
  deviceDisconnected(): void {
    if (!this.takeover) return;
    this.takeover = false;
    if (!this.connected) return;
    const failsafe = disconnectFailsafe();
    this.socket.send(encodeControl({
      type: "control",
      tick_hint: this.latestState?.tick ?? 0,
      throttle: failsafe.throttle,
      brake: failsafe.brake,
      steer: failsafe.steer,
      takeover: false,
    }));
  }

  sendSession(verb: SessionVerb): void {
    if (this.connected) this.socket.send(encodeSession(verb));
  }

  close(): void {
    this.socket.close();
  }
}
