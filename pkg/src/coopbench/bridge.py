"""Live takeover bridge: one episode paced at wall-clock 20 Hz over a socket.

Wire protocol: newline-delimited JSON frames on a persistent bidirectional
socket. Raw TCP and minimal WebSocket clients are both accepted on the same
port (the first bytes decide). Frames:

  server->client  {"type": "state", tick, sim_time_s, ego:{...}, actors:[...],
                   route:[[x,y]...], lane_graph_digest, episode:{...}}
  server->client  {"type": "event", tick, kind, details}
  client->server  {"type": "control", tick_hint, throttle, brake, steer, takeover}
  client->server  {"type": "session", verb: pause|resume|reset|record_start|
                   record_stop}

Unknown fields are ignored. Input frames are sampled once per tick, latest
wins. A client disconnect during takeover forces a full-brake command on the
next tick and flags the session.
"""

from __future__ import annotations

import base64
import hashlib
import json
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .channel import ChannelConfig
from .engine import ControlCommand, EngineConfig, Episode
from .metrics import EpisodeResult
from .scenario import Scenario

TICK_RATE_HZ = 20.0
WS_MAGIC = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


# ---------------------------------------------------------------------------
# demonstration logs

@dataclass
class DemonstrationLog:
    scenario_id: str
    cav_id: str
    seed: int
    bindings: dict[str, str]
    channel: dict
    termination: str
    rows: list = field(default_factory=list)  # (tick, thr, brk, steer, takeover, x, y, yaw, v)
    outcome: dict | None = None

    def serialize(self) -> str:
        header = {
            "scenario_id": self.scenario_id, "cav_id": self.cav_id,
            "seed": self.seed, "bindings": self.bindings,
            "channel": self.channel, "termination": self.termination,
        }
        lines = ["# demonstration log v1", json.dumps(header, sort_keys=True)]
        for r in self.rows:
            tick, thr, brk, steer, take, x, y, yaw, v = r
            lines.append(f"{tick} | {thr!r} {brk!r} {steer!r} | {int(take)} | "
                         f"{x!r} {y!r} {yaw!r} {v!r}")
        lines.append(json.dumps({"outcome": self.outcome}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.serialize())

    @staticmethod
    def load(path) -> "DemonstrationLog":
        lines = [ln for ln in Path(path).read_text().splitlines()
                 if ln.strip() and not ln.startswith("#")]
        header = json.loads(lines[0])
        log = DemonstrationLog(
            scenario_id=header["scenario_id"], cav_id=header["cav_id"],
            seed=header["seed"], bindings=header["bindings"],
            channel=header["channel"], termination=header["termination"])
        for ln in lines[1:]:
            if ln.startswith("{"):
                log.outcome = json.loads(ln).get("outcome")
                continue
            parts = [p.strip() for p in ln.split("|")]
            tick = int(parts[0])
            thr, brk, steer = (float(v) for v in parts[1].split())
            take = parts[2] == "1"
            x, y, yaw, v = (float(s) for s in parts[3].split())
            log.rows.append((tick, thr, brk, steer, take, x, y, yaw, v))
        return log


def replay_demo(log: DemonstrationLog, scenario: Scenario,
                engine_cfg: EngineConfig | None = None) -> tuple[EpisodeResult, bytes]:
    """Re-run the episode feeding the logged commands verbatim; returns the
    demonstration CAV's result and the trace bytes for identity checks."""
    channel_cfg = ChannelConfig(**log.channel)
    cfg = engine_cfg or EngineConfig(termination=log.termination)
    ep = Episode(scenario, dict(log.bindings), channel_cfg, log.seed, cfg)
    commands = {r[0]: ControlCommand.clamped(r[1], r[2], r[3]) for r in log.rows}
    while not ep.done:
        tick = ep.clock.tick
        override = {log.cav_id: commands[tick]} if tick in commands else None
        ep.step(override)
    return ep.results()[log.cav_id], ep.trace.to_bytes()


# ---------------------------------------------------------------------------
# websocket support (text frames only, no extensions)

def _ws_handshake(conn: socket.socket, first: bytes) -> bool:
    data = first
    while b"\r\n\r\n" not in data:
        chunk = conn.recv(4096)
        if not chunk:
            return False
        data += chunk
    headers = {}
    for line in data.split(b"\r\n")[1:]:
        if b":" in line:
            k, v = line.split(b":", 1)
            headers[k.strip().lower()] = v.strip()
    key = headers.get(b"sec-websocket-key")
    if key is None:
        return False
    accept = base64.b64encode(
        hashlib.sha1(key + WS_MAGIC.encode()).digest()).decode()
    conn.sendall(
        ("HTTP/1.1 101 Switching Protocols\r\n"
         "Upgrade: websocket\r\nConnection: Upgrade\r\n"
         f"Sec-WebSocket-Accept: {accept}\r\n\r\n").encode())
    return True


def _ws_encode_text(payload: bytes) -> bytes:
    n = len(payload)
    if n < 126:
        head = struct.pack("!BB", 0x81, n)
    elif n < 1 << 16:
        head = struct.pack("!BBH", 0x81, 126, n)
    else:
        head = struct.pack("!BBQ", 0x81, 127, n)
    return head + payload


class _WsReader:
    def __init__(self, conn: socket.socket):
        self.conn = conn
        self.buf = b""

    def _need(self, n: int) -> bool:
        while len(self.buf) < n:
            chunk = self.conn.recv(4096)
            if not chunk:
                return False
            self.buf += chunk
        return True

    def read_text(self) -> str | None:
        while True:
            if not self._need(2):
                return None
            b0, b1 = self.buf[0], self.buf[1]
            opcode = b0 & 0x0F
            masked = b1 & 0x80
            length = b1 & 0x7F
            offset = 2
            if length == 126:
                if not self._need(4):
                    return None
                length = struct.unpack("!H", self.buf[2:4])[0]
                offset = 4
            elif length == 127:
                if not self._need(10):
                    return None
                length = struct.unpack("!Q", self.buf[2:10])[0]
                offset = 10
            mask = b""
            if masked:
                if not self._need(offset + 4):
                    return None
                mask = self.buf[offset:offset + 4]
                offset += 4
            if not self._need(offset + length):
                return None
            payload = self.buf[offset:offset + length]
            self.buf = self.buf[offset + length:]
            if mask:
                payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
            if opcode == 0x8:  # close
                return None
            if opcode in (0x1, 0x2):
                return payload.decode("utf-8", "replace")
            # ping/pong/continuation: ignore


# ---------------------------------------------------------------------------
# bridge server

@dataclass
class _Client:
    conn: socket.socket
    websocket: bool
    alive: bool = True

    def send_line(self, line: str) -> None:
        data = line.encode() + b"\n"
        try:
            if self.websocket:
                self.conn.sendall(_ws_encode_text(line.encode()))
            else:
                self.conn.sendall(data)
        except OSError:
            self.alive = False


class BridgeServer:
    """Runs one episode paced at wall-clock 20 Hz and speaks the wire format."""

    def __init__(self, scenario: Scenario, bindings: dict, human_cav: str,
                 port: int = 0, token: str | None = None,
                 channel_cfg: ChannelConfig | None = None, seed: int = 0,
                 engine_cfg: EngineConfig | None = None,
                 rate_hz: float = TICK_RATE_HZ):
        if human_cav not in {c.id for c in scenario.cavs}:
            raise ValueError(f"human CAV {human_cav!r} not in scenario")
        self.scenario = scenario
        self.bindings = dict(bindings)
        self.human_cav = human_cav
        self.token = token
        self.channel_cfg = channel_cfg or ChannelConfig()
        self.engine_cfg = engine_cfg or EngineConfig(termination="continue")
        self.seed = seed
        self.rate_hz = rate_hz
        self.episode = self._fresh_episode()
        self.paused = False
        self.takeover = False
        self.session_flagged = False
        self.recording: DemonstrationLog | None = None
        self.demos: list[DemonstrationLog] = []
        self._latest_control: dict | None = None
        self._session_queue: list[str] = []
        self._lock = threading.Lock()
        self._client: _Client | None = None
        self._client_authed = False
        self._disconnect_pending = False
        self._failsafe_hold = False
        self._stop = threading.Event()
        self._server = socket.create_server(("127.0.0.1", port))
        self._server.settimeout(0.2)
        self.port = self._server.getsockname()[1]
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)

    def _fresh_episode(self) -> Episode:
        return Episode(self.scenario, self.bindings, self.channel_cfg,
                       self.seed, self.engine_cfg)

    # -- networking -----------------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._server.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            threading.Thread(target=self._client_loop, args=(conn,),
                             daemon=True).start()

    def _client_loop(self, conn: socket.socket) -> None:
        try:
            # sniff the transport: web clients open with an HTTP upgrade
            # immediately; a silent peer is a raw line client
            conn.settimeout(0.5)
            try:
                first = conn.recv(1, socket.MSG_PEEK)
                if not first:
                    conn.close()
                    return
            except socket.timeout:
                first = b""
            conn.settimeout(None)
            websocket = first == b"G"
            client = _Client(conn, websocket)
            if websocket:
                if not _ws_handshake(conn, conn.recv(4096)):
                    conn.close()
                    return
                reader = _WsReader(conn)
                read_line = reader.read_text
            else:
                f = conn.makefile("r", encoding="utf-8")

                def read_line():
                    line = f.readline()
                    return None if not line else line.rstrip("\n")
            with self._lock:
                self._client = client
                self._client_authed = self.token is None
            if self._client_authed:
                client.send_line(json.dumps(self.map_frame(), sort_keys=True))
            while not self._stop.is_set():
                line = read_line()
                if line is None:
                    break
                if not line.strip():
                    continue
                try:
                    frame = json.loads(line)
                except json.JSONDecodeError:
                    continue
                self._handle_frame(frame)
        except OSError:
            pass
        finally:
            with self._lock:
                if self._client is not None and self._client.conn is conn:
                    pending = self._latest_control or {}
                    if self.takeover or pending.get("takeover"):
                        self._disconnect_pending = True
                        self.session_flagged = True
                    self._latest_control = None
                    self._client = None
            try:
                conn.close()
            except OSError:
                pass

    def _handle_frame(self, frame: dict) -> None:
        kind = frame.get("type")
        with self._lock:
            if self.token is not None and not self._client_authed:
                if kind == "session" and frame.get("verb") == "hello" \
                        and frame.get("token") == self.token:
                    self._client_authed = True
                    client = self._client
                    if client is not None:
                        client.send_line(json.dumps(self.map_frame(), sort_keys=True))
                return
            if kind == "control":
                self._latest_control = frame
            elif kind == "session":
                self._session_queue.append(str(frame.get("verb", "")))

    def _broadcast(self, line: str) -> None:
        with self._lock:
            client = self._client
        if client is not None and client.alive:
            client.send_line(line)

    # -- frames -----------------------------------------------------------------

    def map_frame(self) -> dict:
        """Lane geometry for the UI, keyed by the digest the state frames
        carry. Sent once per connection."""
        graph = self.scenario.lane_graph
        lanes = []
        crosswalks = []
        if graph is not None:
            for lane_id in sorted(graph.lanes):
                lane = graph.lanes[lane_id]
                lanes.append({
                    "id": lane_id,
                    "width": lane.width,
                    "centerline": [[float(x), float(y)]
                                   for x, y in lane.centerline.pts],
                })
            crosswalks = [[[float(x), float(y)] for x, y in cw]
                          for cw in graph.crosswalks]
        return {
            "type": "map",
            "digest": graph.digest() if graph else "",
            "lanes": lanes,
            "crosswalks": crosswalks,
            "statics": [{"id": o.id, "x": o.x, "y": o.y, "yaw": o.yaw,
                         "length": o.length, "width": o.width}
                        for o in self.scenario.static_objects],
        }

    def state_frame(self) -> dict:
        ep = self.episode
        rt = ep.cavs[self.human_cav]
        last = next((r for r in reversed(ep.trace.rows) if r[1] == self.human_cav),
                    None)
        thr, brk, steer = (last[6], last[7], last[8]) if last else (0.0, 0.0, 0.0)
        actors = []
        for v in ep.entity_views():
            if v.id == self.human_cav:
                continue
            actors.append({"id": v.id, "class": v.cls, "x": v.x, "y": v.y,
                           "yaw": v.yaw, "v": v.v, "length": v.length,
                           "width": v.width})
        remaining = rt.route
        rc_pct = 100.0 * rt.s_progress / rt.route.length
        return {
            "type": "state",
            "tick": ep.clock.tick,
            "sim_time_s": ep.clock.time,
            "ego": {"id": self.human_cav, "x": rt.state.x, "y": rt.state.y,
                    "yaw": rt.state.yaw, "v": rt.state.v,
                    "throttle": thr, "brake": brk, "steer": steer},
            "actors": actors,
            "route": [[float(x), float(y)] for x, y in remaining.pts],
            "lane_graph_digest": (self.scenario.lane_graph.digest()
                                  if self.scenario.lane_graph else ""),
            "episode": {
                "rc_pct": rc_pct,
                "infractions": [e.kind for e in rt.events],
                "timer_s": ep.clock.time,
                "done": ep.done,
                "end_reason": ep.end_reason,
                "paused": self.paused,
                "takeover": self.takeover,
                "recording": self.recording is not None,
                "flagged": self.session_flagged,
            },
        }

    # -- pacing loop ------------------------------------------------------------

    def _apply_sessions(self) -> None:
        with self._lock:
            verbs = self._session_queue
            self._session_queue = []
        for verb in verbs:
            if verb == "pause" and not self.paused:
                self.paused = True
                self._broadcast(json.dumps(self.state_frame(), sort_keys=True))
            elif verb == "resume":
                self.paused = False
            elif verb == "reset":
                self.episode = self._fresh_episode()
                self.takeover = False
                self.recording = None
                self.session_flagged = False
                self._failsafe_hold = False
                with self._lock:
                    self._latest_control = None
            elif verb == "record_start" and self.recording is None:
                self.recording = DemonstrationLog(
                    scenario_id=self.scenario.id, cav_id=self.human_cav,
                    seed=self.seed,
                    bindings={k: (v if isinstance(v, str) else "track_replay")
                              for k, v in self.bindings.items()},
                    channel=_channel_dict(self.channel_cfg),
                    termination=self.engine_cfg.termination)
            elif verb == "record_stop" and self.recording is not None:
                self.recording.outcome = None
                self.demos.append(self.recording)
                self.recording = None

    def tick_once(self) -> None:
        """One deterministic bridge tick: sample inputs, step, broadcast."""
        self._apply_sessions()
        if self.paused or self.episode.done:
            return
        with self._lock:
            control = self._latest_control
            if self._disconnect_pending:
                self._failsafe_hold = True
                self._disconnect_pending = False
        overrides = None
        applied = None
        if control is not None and self._failsafe_hold:
            self._failsafe_hold = False  # a live client is back in charge
        if self._failsafe_hold:
            self.takeover = False
            applied = ControlCommand(0.0, 1.0, 0.0)  # failsafe full brake
            overrides = {self.human_cav: applied}
        elif control is not None:
            self.takeover = bool(control.get("takeover", False))
            if self.takeover:
                applied = ControlCommand.clamped(
                    float(control.get("throttle", 0.0)),
                    float(control.get("brake", 0.0)),
                    float(control.get("steer", 0.0)))
                overrides = {self.human_cav: applied}
        tick = self.episode.clock.tick
        self.episode.step(overrides)
        if self.recording is not None:
            rt = self.episode.cavs[self.human_cav]
            cmd = applied if applied is not None else rt.last_cmd
            self.recording.rows.append(
                (tick, cmd.throttle, cmd.brake, cmd.steer, self.takeover,
                 rt.state.x, rt.state.y, rt.state.yaw, rt.state.v))
            if self.episode.done:
                self.recording.outcome = self.episode.results()[self.human_cav].as_dict()
                self.demos.append(self.recording)
                self.recording = None
        self._broadcast(json.dumps(self.state_frame(), sort_keys=True))
        for ev in self.episode.trace.events:
            if ev[0] == self.episode.clock.tick:
                self._broadcast(json.dumps(
                    {"type": "event", "tick": ev[0], "kind": ev[1],
                     "details": f"{ev[2]} {ev[3]}".strip()}, sort_keys=True))

    def serve(self, max_ticks: int | None = None) -> None:
        """Paced loop at the configured wall-clock rate; blocks until the
        episode ends, `max_ticks` elapse, or stop() is called."""
        self._accept_thread.start()
        period = 1.0 / self.rate_hz if self.rate_hz > 0 else 0.0
        deadline = time.monotonic()
        ticks = 0
        while not self._stop.is_set():
            if max_ticks is not None and ticks >= max_ticks:
                break
            if self.episode.done and not self.paused:
                self._apply_sessions()  # allow reset after completion
                if self.episode.done:
                    time.sleep(period or 0.01)
                    deadline = time.monotonic()
                    continue
            self.tick_once()
            ticks += 1
            if period > 0:
                deadline += period
                delay = deadline - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                else:
                    deadline = time.monotonic()

    def stop(self) -> None:
        self._stop.set()
        try:
            self._server.close()
        except OSError:
            pass
        with self._lock:
            if self._client is not None:
                try:
                    self._client.conn.close()
                except OSError:
                    pass


def _channel_dict(cfg: ChannelConfig) -> dict:
    return {
        "latency_ticks": cfg.latency_ticks,
        "pos_noise_sigma_m": cfg.pos_noise_sigma_m,
        "rot_noise_sigma_deg": cfg.rot_noise_sigma_deg,
        "seed": cfg.seed,
        "noise_redraw": cfg.noise_redraw,
        "compute_delay_ticks": dict(cfg.compute_delay_ticks),
    }
