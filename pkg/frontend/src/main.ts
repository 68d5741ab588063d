// Browser wiring: canvas, HUD, keyboard/gamepad capture, session buttons.

import { Camera } from "./camera.js";
import { applyHud, hudModel } from "./hud.js";
import {
  DEFAULT_BINDINGS,
  KeyboardSmoother,
  KeyboardState,
  mapInput,
  MappedControl,
} from "./input.js";
import { EventFrame } from "./protocol.js";
import { MapFrame, renderScene } from "./render.js";
import { SessionClient } from "./session.js";

const canvas = document.getElementById("scene") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const camera = new Camera(canvas.width, canvas.height);
const bindings = { ...DEFAULT_BINDINGS };

const keys: KeyboardState = { throttle: false, brake: false, left: false, right: false };
const smoother = new KeyboardSmoother();
let gamepadIndex: number | null = null;
let lastInputTime = performance.now();
const recentEvents: EventFrame[] = [];
let mapFrame: MapFrame | null = null;

function currentControl(): MappedControl {
  const now = performance.now();
  const dt = Math.min((now - lastInputTime) / 1000, 0.1);
  lastInputTime = now;
  if (gamepadIndex !== null) {
    const pads = navigator.getGamepads();
    const pad = pads[gamepadIndex];
    if (pad) {
      return mapInput({
        kind: "gamepad",
        invertSteer: bindings.invertSteer,
        gamepad: mapGamepadFrom(pad),
      });
    }
    gamepadIndex = null;
    client.deviceDisconnected();
  }
  return mapInput({
    kind: "keyboard",
    invertSteer: bindings.invertSteer,
    keyboard: smoother.step(keys, dt),
  });
}

function mapGamepadFrom(pad: Gamepad) {
  // common layout: right trigger axis or button 7 = throttle, button 6 = brake
  const throttle = pad.buttons[7]?.value ?? 0;
  const brake = pad.buttons[6]?.value ?? 0;
  return { throttleTrigger: throttle, brakeTrigger: brake, steerStick: pad.axes[0] ?? 0 };
}

const params = new URLSearchParams(location.search);
const url = params.get("server")
  ?? `ws://${location.hostname || "127.0.0.1"}:${params.get("port") ?? "8700"}`;
const token = params.get("token") ?? undefined;

const socket = new WebSocket(url);
const client = new SessionClient(
  {
    send: (d: string) => socket.send(d),
    close: () => socket.close(),
    set onmessage(fn: ((ev: { data: string }) => void) | null) {
      socket.onmessage = fn && ((ev) => fn({ data: String(ev.data) }));
    },
    set onopen(fn: (() => void) | null) {
      socket.onopen = fn;
    },
    set onclose(fn: (() => void) | null) {
      socket.onclose = fn;
    },
  } as never,
  currentControl,
  {
    onState: (frame) => {
      renderScene(ctx, canvas.width, canvas.height, frame, mapFrame, camera,
                  recentEvents);
      applyHud(document, hudModel(frame));
    },
    onEvent: (frame) => {
      recentEvents.push(frame);
      if (recentEvents.length > 16) recentEvents.shift();
    },
    onMap: (frame) => {
      mapFrame = frame;
    },
    onConnection: (up) => {
      const el = document.getElementById("conn");
      if (el) el.textContent = up ? "connected" : "disconnected";
    },
  },
  token,
);

window.addEventListener("keydown", (ev) => {
  if (ev.code === bindings.throttle) keys.throttle = true;
  else if (ev.code === bindings.brake) keys.brake = true;
  else if (ev.code === bindings.left) keys.left = true;
  else if (ev.code === bindings.right) keys.right = true;
  else if (ev.code === bindings.takeoverToggle) {
    client.setTakeover(!client.takeover);
    const btn = document.getElementById("takeover");
    if (btn) btn.textContent = client.takeover ? "release (space)" : "take over (space)";
  } else return;
  ev.preventDefault();
});
window.addEventListener("keyup", (ev) => {
  if (ev.code === bindings.throttle) keys.throttle = false;
  else if (ev.code === bindings.brake) keys.brake = false;
  else if (ev.code === bindings.left) keys.left = false;
  else if (ev.code === bindings.right) keys.right = false;
});
window.addEventListener("gamepadconnected", (ev) => {
  gamepadIndex = (ev as GamepadEvent).gamepad.index;
});
window.addEventListener("gamepaddisconnected", () => {
  gamepadIndex = null;
  client.deviceDisconnected();
});

for (const verb of ["pause", "resume", "reset", "record_start", "record_stop"] as const) {
  document.getElementById(`btn-${verb}`)?.addEventListener("click", () => {
    client.sendSession(verb);
  });
}
document.getElementById("takeover")?.addEventListener("click", () => {
  client.setTakeover(!client.takeover);
});
document.getElementById("follow")?.addEventListener("click", () => {
  camera.state.follow = !camera.state.follow;
});

canvas.addEventListener("wheel", (ev) => {
  camera.zoom(ev.deltaY < 0 ? 1.15 : 1 / 1.15, [ev.offsetX, ev.offsetY]);
  ev.preventDefault();
});
let dragging = false;
let dragLast: [number, number] = [0, 0];
canvas.addEventListener("mousedown", (ev) => {
  dragging = true;
  dragLast = [ev.offsetX, ev.offsetY];
});
window.addEventListener("mouseup", () => {
  dragging = false;
});
canvas.addEventListener("mousemove", (ev) => {
  if (!dragging) return;
  camera.pan(ev.offsetX - dragLast[0], ev.offsetY - dragLast[1]);
  dragLast = [ev.offsetX, ev.offsetY];
});
