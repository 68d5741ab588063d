"""Deterministic fixed-step closed-loop world.

One episode is single threaded and tick sequential at 20 Hz (dt = 0.05 s,
asserted). Vehicles follow a kinematic bicycle, background actors either
replay logged tracks or car-follow with an IDM rule, and every trace is a
pure function of (scenario, bindings, channel config, seed).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .agents import (Detection, EgoView, EntityView, Observation, PolicyBase,
                     PolicyOutput, make_policy, sense_from)
from .channel import Channel, ChannelConfig, PerceptionShare
from .controllers import (PROFILES, ControllerProfile, ControllerState,
                          lateral_control, longitudinal_control,
                          plan_target_speed)
from .geometry import (Obb, Polyline, disc_obb_overlap, lerp_angle,
                       obb_overlap, wrap_angle)
from .metrics import (DEFAULT_PENALTIES, EpisodeResult, InfractionEvent,
                      OpenLoopSample, make_result)
from .scenario import (ActorSpec, ActorTrack, DEFAULT_VEHICLE_FOOTPRINT,
                       ReactiveFollowBehavior, ReplayBehavior, Scenario,
                       actor_spawn_pose)

DT = 0.05  # 20 Hz simulation rate
PEDESTRIAN_RADIUS = 0.3


@dataclass(frozen=True)
class TickClock:
    tick: int = 0
    dt: float = DT

    @property
    def time(self) -> float:
        return self.tick * self.dt

    def advanced(self) -> "TickClock":
        return TickClock(self.tick + 1, self.dt)


@dataclass
class VehicleState:
    x: float
    y: float
    yaw: float
    v: float
    length: float = DEFAULT_VEHICLE_FOOTPRINT[0]
    width: float = DEFAULT_VEHICLE_FOOTPRINT[1]
    wheelbase: float = 2.8

    def obb(self) -> Obb:
        return Obb(self.x, self.y, self.yaw, self.length, self.width)


@dataclass(frozen=True)
class ControlCommand:
    throttle: float = 0.0
    brake: float = 0.0
    steer: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.throttle <= 0.75):
            raise ValueError(f"throttle {self.throttle} outside [0, 0.75]")
        if not (0.0 <= self.brake <= 1.0):
            raise ValueError(f"brake {self.brake} outside [0, 1]")
        if not (-1.0 <= self.steer <= 1.0):
            raise ValueError(f"steer {self.steer} outside [-1, 1]")
        if self.throttle > 0.0 and self.brake > 0.0:
            raise ValueError("throttle and brake both positive after arbitration")

    @classmethod
    def clamped(cls, throttle: float, brake: float, steer: float) -> "ControlCommand":
        throttle = min(max(float(throttle), 0.0), 0.75)
        brake = min(max(float(brake), 0.0), 1.0)
        steer = min(max(float(steer), -1.0), 1.0)
        if brake > 0.0:
            throttle = 0.0
        return cls(throttle, brake, steer)


@dataclass(frozen=True)
class DetectorNoise:
    pos_sigma: float = 0.0
    drop_p: float = 0.0
    score_jitter: float = 0.0

    @property
    def active(self) -> bool:
        return self.pos_sigma > 0 or self.drop_p > 0 or self.score_jitter > 0


@dataclass(frozen=True)
class EngineConfig:
    dt: float = DT
    a_max: float = 3.0          # m/s^2 at full throttle
    b_max: float = 8.0          # m/s^2 at full brake
    drag: float = 0.05          # 1/s linear speed decay
    delta_max_deg: float = 35.0  # steering angle at |steer| = 1
    wheelbase: float = 2.8
    sensor_range: float = 50.0
    termination: str = "terminate"  # or "continue"
    penalties: dict = field(default_factory=lambda: dict(DEFAULT_PENALTIES))
    off_route_bound: float = 7.0
    success_rc: float = 99.9
    replay_freeze_on_contact: bool = False
    collect_open_loop: bool = False
    open_loop_stride: int = 10
    detector: DetectorNoise = field(default_factory=DetectorNoise)
    profile_overrides: dict = field(default_factory=dict)
    idm_a_max: float = 2.0
    idm_b: float = 2.5
    idm_s0: float = 2.0
    idm_t: float = 1.5
    idm_gap_horizon: float = 50.0

    def digest_fields(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "dt", "a_max", "b_max", "drag", "delta_max_deg", "wheelbase",
            "sensor_range", "termination", "off_route_bound", "success_rc",
            "replay_freeze_on_contact", "idm_a_max", "idm_b", "idm_s0", "idm_t",
            "idm_gap_horizon")}
        d["penalties"] = dict(sorted(self.penalties.items()))
        d["profile_overrides"] = dict(sorted(self.profile_overrides.items()))
        d["detector"] = [self.detector.pos_sigma, self.detector.drop_p,
                         self.detector.score_jitter]
        return d


def bicycle_step(s: VehicleState, c: ControlCommand, dt: float,
                 cfg: EngineConfig | None = None) -> VehicleState:
    """Kinematic bicycle update; no reverse, midpoint heading integration."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    cfg = cfg or EngineConfig()
    a = cfg.a_max * c.throttle - cfg.b_max * c.brake - cfg.drag * s.v
    v_new = max(0.0, s.v + a * dt)
    delta = c.steer * math.radians(cfg.delta_max_deg)
    yaw_rate = (v_new / s.wheelbase) * math.tan(delta)
    mean_yaw = s.yaw + 0.5 * yaw_rate * dt
    return replace(
        s,
        x=s.x + v_new * dt * math.cos(mean_yaw),
        y=s.y + v_new * dt * math.sin(mean_yaw),
        yaw=wrap_angle(s.yaw + yaw_rate * dt),
        v=v_new,
    )


def replay_actor_step(track: ActorTrack, t: float) -> tuple[float, float, float, float]:
    """(x, y, yaw, v) interpolated on the track; clamped outside its span."""
    frames = track.frames
    if t <= frames[0][0]:
        return frames[0][1], frames[0][2], frames[0][3], frames[0][4]
    if t >= frames[-1][0]:
        return frames[-1][1], frames[-1][2], frames[-1][3], frames[-1][4]
    times = track.times()
    i = int(np.searchsorted(times, t, side="right")) - 1
    t0, x0, y0, yaw0, v0 = frames[i]
    t1, x1, y1, yaw1, v1 = frames[i + 1]
    u = (t - t0) / (t1 - t0)
    return (
        x0 + u * (x1 - x0),
        y0 + u * (y1 - y0),
        lerp_angle(yaw0, yaw1, u),
        v0 + u * (v1 - v0),
    )


def idm_acceleration(v: float, v_target: float, gap: float | None,
                     dv: float, cfg: EngineConfig) -> float:
    """IDM longitudinal acceleration; gap None means free road."""
    v_target = max(v_target, 0.1)
    free = 1.0 - (v / v_target) ** 4
    if gap is None:
        return cfg.idm_a_max * free
    gap = max(gap, 0.1)
    s_star = cfg.idm_s0 + v * cfg.idm_t + v * dv / (2.0 * math.sqrt(cfg.idm_a_max * cfg.idm_b))
    s_star = max(s_star, cfg.idm_s0)
    return cfg.idm_a_max * (free - (s_star / gap) ** 2)


def collision_check(views: list[EntityView]) -> list[tuple[str, str]]:
    """All overlapping footprint pairs; pedestrians are 0.3 m discs."""
    n = len(views)
    if n < 2:
        return []
    xs = np.array([e.x for e in views])
    ys = np.array([e.y for e in views])
    radii = np.array([
        PEDESTRIAN_RADIUS if e.cls == "pedestrian" else 0.5 * math.hypot(e.length, e.width)
        for e in views])
    contacts = []
    for i in range(n):
        dx = xs[i + 1:] - xs[i]
        dy = ys[i + 1:] - ys[i]
        near = np.nonzero(dx * dx + dy * dy <= (radii[i] + radii[i + 1:]) ** 2)[0]
        for off in near:
            j = i + 1 + int(off)
            a, b = views[i], views[j]
            if a.cls == "static" and b.cls == "static":
                continue
            if _footprints_touch(a, b):
                pair = (a.id, b.id) if a.id <= b.id else (b.id, a.id)
                contacts.append(pair)
    contacts.sort()
    return contacts


def _footprints_touch(a: EntityView, b: EntityView) -> bool:
    a_ped = a.cls == "pedestrian"
    b_ped = b.cls == "pedestrian"
    if a_ped and b_ped:
        return math.hypot(a.x - b.x, a.y - b.y) < 2 * PEDESTRIAN_RADIUS
    if a_ped:
        return disc_obb_overlap(Obb(b.x, b.y, b.yaw, b.length, b.width),
                                (a.x, a.y), PEDESTRIAN_RADIUS)
    if b_ped:
        return disc_obb_overlap(Obb(a.x, a.y, a.yaw, a.length, a.width),
                                (b.x, b.y), PEDESTRIAN_RADIUS)
    return obb_overlap(Obb(a.x, a.y, a.yaw, a.length, a.width),
                       Obb(b.x, b.y, b.yaw, b.length, b.width))


# ---------------------------------------------------------------------------
# trace

def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass
class EpisodeTrace:
    scenario_id: str
    seed: int
    config_digest: str
    rows: list = field(default_factory=list)    # (tick, cav, x, y, yaw, v, thr, brk, steer)
    events: list = field(default_factory=list)  # (tick, kind, cav, other)
    end_reason: str = ""
    wait_edges: dict = field(default_factory=dict)  # tick -> {cav: peer}
    plans: dict = field(default_factory=dict)       # (tick, cav) -> plan points

    def positions(self, cav_id: str) -> list[tuple[float, float]]:
        return [(r[2], r[3]) for r in self.rows if r[1] == cav_id]

    def serialize(self) -> str:
        lines = [
            "# episode trace v1",
            f"scenario: {self.scenario_id}",
            f"seed: {self.seed}",
            f"config_digest: {self.config_digest}",
            f"end_reason: {self.end_reason}",
            "columns: tick | id | x y yaw v | throttle brake steer",
        ]
        by_tick: dict[int, list[str]] = {}
        for r in self.rows:
            tick, cav = r[0], r[1]
            vals = " ".join(_fmt(v) for v in r[2:6])
            ctl = " ".join(_fmt(v) for v in r[6:9])
            by_tick.setdefault(tick, []).append(f"{tick} | {cav} | {vals} | {ctl}")
        for ev in self.events:
            tick = ev[0]
            by_tick.setdefault(tick, []).append(
                f"event | {tick} | {ev[1]} | {ev[2]} | {ev[3]}")
        for tick in sorted(by_tick):
            lines.extend(by_tick[tick])
        return "\n".join(lines) + "\n"

    def to_bytes(self) -> bytes:
        return self.serialize().encode()

    def write(self, path) -> None:
        Path(path).write_text(self.serialize())

    @staticmethod
    def load(path) -> "EpisodeTrace":
        lines = Path(path).read_text().splitlines()
        header = {}
        trace = None
        for ln in lines:
            if ln.startswith("#") or not ln.strip() or ln.startswith("columns:"):
                continue
            if trace is None and ":" in ln and "|" not in ln:
                k, v = ln.split(":", 1)
                header[k.strip()] = v.strip()
                continue
            if trace is None:
                trace = EpisodeTrace(header.get("scenario", ""),
                                     int(header.get("seed", 0)),
                                     header.get("config_digest", ""),
                                     end_reason=header.get("end_reason", ""))
            parts = [p.strip() for p in ln.split("|")]
            if parts[0] == "event":
                trace.events.append((int(parts[1]), parts[2], parts[3], parts[4]))
            else:
                tick, cav = int(parts[0]), parts[1]
                vals = [float(v) for v in parts[2].split()]
                ctl = [float(v) for v in parts[3].split()]
                trace.rows.append((tick, cav, *vals, *ctl))
        if trace is None:
            trace = EpisodeTrace(header.get("scenario", ""), int(header.get("seed", 0)),
                                 header.get("config_digest", ""),
                                 end_reason=header.get("end_reason", ""))
        return trace


def config_digest(scenario: Scenario, bindings: dict, channel_cfg: ChannelConfig,
                  cfg: EngineConfig, seed: int) -> str:
    payload = {
        "scenario": scenario.id,
        "bindings": {k: (v if isinstance(v, str) else "track_replay")
                     for k, v in sorted(bindings.items())},
        "channel": channel_cfg.digest_fields(),
        "engine": cfg.digest_fields(),
        "seed": seed,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# episode

@dataclass
class _CavRuntime:
    spec: object
    state: VehicleState
    route: Polyline
    policy: PolicyBase | None          # None for replay / scripted
    profile: ControllerProfile | None
    ctrl: ControllerState
    replay_track: ActorTrack | None = None
    s_progress: float = 0.0
    complete: bool = False
    completion_tick: int | None = None
    events: list = field(default_factory=list)
    last_cmd: ControlCommand = field(default_factory=ControlCommand)
    current_plan: PolicyOutput | None = None
    pending: tuple[int, PolicyOutput] | None = None
    msg_buffer: list = field(default_factory=list)
    delay: int = 0
    failed: bool = False
    last_ctrl_tick: int = -1


@dataclass
class _ActorRuntime:
    spec: ActorSpec
    x: float
    y: float
    yaw: float
    v: float
    lane_id: str | None = None
    s: float = 0.0
    frozen: bool = False


class Episode:
    """Steppable episode; `run_episode` drives it to completion."""

    def __init__(self, scenario: Scenario, bindings: dict,
                 channel_cfg: ChannelConfig | None = None, seed: int = 0,
                 cfg: EngineConfig | None = None):
        cfg = cfg or EngineConfig()
        assert abs(cfg.dt - DT) < 1e-12, "simulation rate is fixed at 20 Hz"
        self.cfg = cfg
        self.scenario = scenario
        self.graph = scenario.lane_graph
        self.seed = seed
        self.channel_cfg = channel_cfg or ChannelConfig()
        self.channel = Channel(self.channel_cfg, seed)
        self.clock = TickClock()
        self.max_ticks = int(round(scenario.max_duration_s / DT))
        self.done = False
        self.end_reason = ""
        self.bindings = dict(bindings)
        self._active_contacts: set[tuple[str, str]] = set()
        self._ol_snapshots: dict[int, dict] = {}
        self._ol_records: list = []

        missing = [c.id for c in scenario.cavs if c.id not in bindings]
        if missing:
            raise ValueError(f"unbound CAVs: {missing}")

        self.cavs: dict[str, _CavRuntime] = {}
        for spec in scenario.cavs:
            binding = bindings[spec.id]
            route = spec.route.polyline()
            state = VehicleState(spec.spawn[0], spec.spawn[1], spec.spawn[2], 0.0,
                                 wheelbase=cfg.wheelbase)
            if isinstance(binding, ActorTrack):
                t0, x0, y0, yaw0, v0 = binding.frames[0]
                self.cavs[spec.id] = _CavRuntime(
                    spec=spec, state=replace(state, x=x0, y=y0, yaw=yaw0, v=v0),
                    route=route, policy=None, profile=None,
                    ctrl=ControllerState(), replay_track=binding)
                continue
            if binding == "scripted":
                self.cavs[spec.id] = _CavRuntime(
                    spec=spec, state=state, route=route, policy=None,
                    profile=PROFILES["takeover"], ctrl=ControllerState())
                continue
            policy = make_policy(binding, spec.id, route, spec.route.target_speed_cap)
            profile_name = cfg.profile_overrides.get(policy.name, policy.profile_name)
            runtime = _CavRuntime(
                spec=spec, state=state, route=route, policy=policy,
                profile=PROFILES[profile_name], ctrl=ControllerState())
            runtime.delay = self.channel_cfg.policy_delay(policy.name)
            self.cavs[spec.id] = runtime

        self.actors: dict[str, _ActorRuntime] = {}
        for spec in scenario.background_actors:
            x, y, yaw, v = actor_spawn_pose(spec, self.graph)
            rt = _ActorRuntime(spec=spec, x=x, y=y, yaw=yaw, v=v)
            if isinstance(spec.behavior, ReactiveFollowBehavior):
                rt.lane_id = spec.behavior.lane_id
                rt.s = spec.behavior.start_s
            self.actors[spec.id] = rt

        digest = config_digest(scenario, bindings, self.channel_cfg, cfg, seed)
        self.trace = EpisodeTrace(scenario.id, seed, digest)

    # -- views ---------------------------------------------------------------

    def entity_views(self) -> list[EntityView]:
        views = []
        for cav_id in sorted(self.cavs):
            rt = self.cavs[cav_id]
            st = rt.state
            views.append(EntityView(cav_id, "vehicle", st.x, st.y, st.yaw, st.v,
                                    st.length, st.width))
        for actor_id in sorted(self.actors):
            rt = self.actors[actor_id]
            views.append(EntityView(actor_id, rt.spec.actor_class, rt.x, rt.y,
                                    rt.yaw, rt.v, rt.spec.footprint[0],
                                    rt.spec.footprint[1]))
        for obj in self.scenario.static_objects:
            views.append(EntityView(obj.id, "static", obj.x, obj.y, obj.yaw,
                                    0.0, obj.length, obj.width))
        return views

    # -- sensing -------------------------------------------------------------

    def _sense(self, origin, exclude_id, source, views) -> list[Detection]:
        dets = sense_from(origin, views, exclude_id, self.cfg.sensor_range, source)
        noise = self.cfg.detector
        if not noise.active:
            return dets
        stream = rngmod.substream(self.seed, "det-noise", source, self.clock.tick)
        noisy = []
        for d in dets:
            if noise.drop_p > 0 and stream.random() < noise.drop_p:
                continue
            dx = stream.normal(0.0, noise.pos_sigma) if noise.pos_sigma else 0.0
            dy = stream.normal(0.0, noise.pos_sigma) if noise.pos_sigma else 0.0
            score = 1.0
            if noise.score_jitter > 0:
                score = float(min(max(1.0 - abs(stream.normal(0.0, noise.score_jitter)), 0.05), 1.0))
            noisy.append(replace(d, cx=d.cx + dx, cy=d.cy + dy, score=score))
        return noisy

    def _observation(self, cav_id: str, views, msgs) -> Observation:
        rt = self.cavs[cav_id]
        st = rt.state
        dets = self._sense((st.x, st.y), cav_id, cav_id, views)
        remainder = rt.route.tail_from(rt.s_progress) if not rt.complete else None
        return Observation(
            tick=self.clock.tick,
            sim_time=self.clock.time,
            ego=EgoView(cav_id, st.x, st.y, st.yaw, st.v, st.length, st.width),
            route_remainder=remainder,
            route_s=rt.s_progress,
            route_length=rt.route.length,
            route_cap=rt.spec.route.target_speed_cap,
            route_done=rt.complete,
            detections=tuple(dets),
            messages=tuple(msgs),
        )

    # -- stepping ------------------------------------------------------------

    def step(self, overrides: dict[str, ControlCommand] | None = None) -> None:
        """Advance one tick. `overrides` force commands per CAV (takeover)."""
        if self.done:
            return
        tick = self.clock.tick
        now = self.clock.time
        views = self.entity_views()
        overrides = overrides or {}

        # infrastructure sharers broadcast every tick
        for infra in self.scenario.infrastructure:
            dets = self._sense((infra.x, infra.y), None, infra.id, views)
            # cap by infra's own range
            dets = [d for d in dets
                    if math.hypot(d.cx - infra.x, d.cy - infra.y) <= infra.sensor_range]
            from .agents import detections_to_frame
            pose = (infra.x, infra.y, infra.yaw)
            payload = PerceptionShare(tuple(detections_to_frame(dets, pose)), pose)
            self.channel.send(infra.id, tick, payload)

        # policies plan on the tick-start snapshot, in CAV id order
        commands: dict[str, ControlCommand] = {}
        for cav_id in sorted(self.cavs):
            rt = self.cavs[cav_id]
            if rt.replay_track is not None:
                continue
            fresh_plan = False
            if rt.policy is not None and not rt.failed:
                # consume through the previous tick: sends happen after this
                # phase, so every latency sees a uniform one-tick loop offset
                rt.msg_buffer.extend(self.channel.deliver_due(tick - 1, cav_id))
                if rt.pending is not None and tick >= rt.pending[0]:
                    rt.current_plan = rt.pending[1]
                    rt.pending = None
                    self._dispatch_payloads(cav_id, rt.current_plan)
                    fresh_plan = True
                if rt.pending is None:
                    obs = self._observation(cav_id, views, rt.msg_buffer)
                    rt.msg_buffer = []
                    try:
                        out = rt.policy(obs)
                    except Exception as exc:
                        # agent failure, not a harness error: the vehicle
                        # holds full brake and earns no further progress
                        rt.failed = True
                        rt.current_plan = None
                        rt.last_cmd = ControlCommand(0.0, 1.0, 0.0)
                        self.trace.events.append(
                            (tick, "policy_failure", cav_id,
                             type(exc).__name__))
                        out = None
                    if out is not None:
                        if rt.delay <= 0:
                            rt.current_plan = out
                            self._dispatch_payloads(cav_id, out)
                            fresh_plan = True
                        else:
                            rt.pending = (tick + rt.delay, out)
            # while a computation is in flight the previous control is replayed
            if rt.current_plan is not None and (rt.delay <= 0 or fresh_plan):
                cmd = self._run_controller(cav_id, rt)
            else:
                cmd = rt.last_cmd
            if cav_id in overrides:
                cmd = overrides[cav_id]
            commands[cav_id] = cmd
            rt.last_cmd = cmd

        if self.cfg.collect_open_loop and tick % self.cfg.open_loop_stride == 0:
            self._snapshot_open_loop(tick, views)

        # advance world
        for cav_id in sorted(self.cavs):
            rt = self.cavs[cav_id]
            if rt.replay_track is not None:
                x, y, yaw, v = replay_actor_step(rt.replay_track, now + DT)
                rt.state = replace(rt.state, x=x, y=y, yaw=yaw, v=v)
            else:
                rt.state = bicycle_step(rt.state, commands[cav_id], DT, self.cfg)
        self._step_actors(now)

        self.clock = self.clock.advanced()
        tick_after = self.clock.tick

        # progress bookkeeping on the post-step state
        for cav_id in sorted(self.cavs):
            rt = self.cavs[cav_id]
            proj = rt.route.project((rt.state.x, rt.state.y))
            if proj.distance <= self.cfg.off_route_bound:
                rt.s_progress = max(rt.s_progress, proj.s)
            if not rt.complete and rt.s_progress >= rt.route.length - 1e-6:
                rt.complete = True
                rt.completion_tick = tick_after
                self.trace.events.append((tick_after, "route_complete", cav_id, ""))

        # row T holds the state at sim time T*dt plus the command that
        # produced it during tick T-1
        cmd_by_cav = {cid: commands.get(cid) for cid in self.cavs}
        for cav_id in sorted(self.cavs):
            rt = self.cavs[cav_id]
            cmd = cmd_by_cav[cav_id] or rt.last_cmd
            self.trace.rows.append((tick_after, cav_id, rt.state.x, rt.state.y,
                                    rt.state.yaw, rt.state.v, cmd.throttle,
                                    cmd.brake, cmd.steer))
        waits = {cid: rt.current_plan.wait_target
                 for cid, rt in self.cavs.items()
                 if rt.current_plan is not None and rt.current_plan.wait_target}
        if waits:
            self.trace.wait_edges[tick] = waits

        self._collision_bookkeeping(tick_after)

        if not self.done:
            if all(rt.complete for rt in self.cavs.values()):
                self._finish("complete")
            elif tick_after >= self.max_ticks:
                for cav_id in sorted(self.cavs):
                    rt = self.cavs[cav_id]
                    if not rt.complete:
                        ev = InfractionEvent("off_route_timeout", tick_after,
                                             self.cfg.penalties["off_route_timeout"])
                        rt.events.append(ev)
                        self.trace.events.append((tick_after, "off_route_timeout", cav_id, ""))
                self._finish("timeout")

    def _dispatch_payloads(self, cav_id: str, out: PolicyOutput) -> None:
        for payload in out.payloads:
            self.channel.send(cav_id, self.clock.tick, payload)

    def _run_controller(self, cav_id: str, rt: _CavRuntime) -> ControlCommand:
        plan = rt.current_plan.plan.points
        st = rt.state
        elapsed = DT if rt.last_ctrl_tick < 0 else (self.clock.tick - rt.last_ctrl_tick) * DT
        elapsed = max(elapsed, DT)
        target = plan_target_speed(rt.profile, plan)
        throttle, brake = longitudinal_control(rt.profile, rt.ctrl, st.v, target, elapsed)
        steer = lateral_control(rt.profile, rt.ctrl, st.x, st.y, st.yaw, st.v,
                                plan, elapsed)
        rt.last_ctrl_tick = self.clock.tick
        return ControlCommand.clamped(throttle, brake, steer)

    def _step_actors(self, now: float) -> None:
        # leader search and freeze checks use the tick-start snapshot
        views = self.entity_views() if self.actors else []
        for actor_id in sorted(self.actors):
            rt = self.actors[actor_id]
            spec = rt.spec
            if isinstance(spec.behavior, ReplayBehavior):
                x, y, yaw, v = replay_actor_step(spec.track, now + DT)
                if self.cfg.replay_freeze_on_contact:
                    probe = EntityView(actor_id, spec.actor_class, x, y, yaw, v,
                                       spec.footprint[0], spec.footprint[1])
                    blocked = any(
                        other.id != actor_id and other.cls != "static"
                        and _footprints_touch(probe, other)
                        for other in views)
                    if blocked:
                        rt.frozen = True
                        rt.v = 0.0
                        continue
                    rt.frozen = False
                rt.x, rt.y, rt.yaw, rt.v = x, y, yaw, v
            else:
                self._step_idm(rt, spec.behavior, views)

    def _step_idm(self, rt: _ActorRuntime, beh: ReactiveFollowBehavior,
                  views: list[EntityView]) -> None:
        lane = self.graph.lanes[rt.lane_id]
        line = lane.centerline
        gap = None
        dv = 0.0
        best_s = None
        half = lane.width / 2.0 + 0.3
        for view in views:
            if view.id == rt.spec.id:
                continue
            proj = line.project((view.x, view.y))
            if abs(proj.lateral) > half or proj.distance > half + 2.0:
                continue
            if proj.s <= rt.s + 0.01:
                continue
            if proj.s - rt.s > self.cfg.idm_gap_horizon:
                continue
            if best_s is None or proj.s < best_s:
                best_s = proj.s
                gap = proj.s - rt.s - 0.5 * view.length - 0.5 * rt.spec.footprint[0]
                along = math.cos(view.yaw - line.heading_at(proj.s)) * view.v
                dv = rt.v - along
        a = idm_acceleration(rt.v, beh.target_speed, gap, dv, self.cfg)
        v_new = max(0.0, rt.v + a * DT)
        s_new = rt.s + v_new * DT
        if s_new > line.length:
            succ = self.graph.lanes[rt.lane_id].successors
            if succ:
                rt.lane_id = succ[0]
                s_new -= line.length
                line = self.graph.lanes[rt.lane_id].centerline
            else:
                s_new = line.length
                v_new = 0.0
        rt.s = s_new
        rt.v = v_new
        p = line.point_at(s_new)
        rt.x, rt.y = float(p[0]), float(p[1])
        rt.yaw = line.heading_at(s_new)

    def _collision_bookkeeping(self, tick: int) -> None:
        contacts = collision_check(self.entity_views())
        current = set(contacts)
        new_contacts = [p for p in contacts if p not in self._active_contacts]
        self._active_contacts = current
        terminal = False
        for a, b in new_contacts:
            for cav_id, other_id in ((a, b), (b, a)):
                if cav_id not in self.cavs:
                    continue
                kind = self._infraction_kind(other_id)
                ev = InfractionEvent(kind, tick, self.cfg.penalties[kind], other_id)
                self.cavs[cav_id].events.append(ev)
                self.trace.events.append((tick, kind, cav_id, other_id))
                terminal = True
        if terminal and self.cfg.termination == "terminate":
            self._finish("collision")

    def _infraction_kind(self, other_id: str) -> str:
        if other_id in self.cavs:
            return "collision_vehicle"
        if other_id in self.actors:
            cls = self.actors[other_id].spec.actor_class
            return "collision_vehicle" if cls == "vehicle" else "collision_pedestrian"
        return "collision_static"

    def _finish(self, reason: str) -> None:
        self.done = True
        self.end_reason = reason
        self.trace.end_reason = reason

    # -- open loop -------------------------------------------------------------

    def _snapshot_open_loop(self, tick: int, views) -> None:
        ents = {}
        for v in views:
            ents[v.id] = (v.x, v.y, v.v * math.cos(v.yaw), v.v * math.sin(v.yaw),
                          v.yaw, v.length, v.width, v.cls)
        self._ol_snapshots[tick] = ents
        for cav_id in sorted(self.cavs):
            rt = self.cavs[cav_id]
            if rt.policy is None or rt.current_plan is None:
                continue
            self._ol_records.append({
                "tick": tick, "cav": cav_id,
                "plan": rt.current_plan.plan.points,
                "perceived": rt.current_plan.perceived,
            })

    def open_loop_samples(self) -> list[OpenLoopSample]:
        """Assemble open-loop samples from stored snapshots after the run."""
        stride = self.cfg.open_loop_stride
        grid = [stride * (k + 1) for k in range(6)]
        pos_by_cav_tick = {}
        for row in self.trace.rows:
            pos_by_cav_tick[(row[1], row[0])] = (row[2], row[3])
        samples = []
        for rec in self._ol_records:
            t0, cav = rec["tick"], rec["cav"]
            future_ticks = [t0 + g for g in grid]
            if any(t not in self._ol_snapshots for t in future_ticks):
                continue
            gt_future = []
            ok = True
            for t in future_ticks:
                p = pos_by_cav_tick.get((cav, t))
                if p is None:
                    ok = False
                    break
                gt_future.append((t * DT, p[0], p[1]))
            if not ok:
                continue
            snap0 = self._ol_snapshots[t0]
            gt_boxes = tuple(
                Obb(e[0], e[1], e[4], e[5], e[6])
                for eid, e in sorted(snap0.items()) if eid != cav and e[7] != "static")
            # detection AP scores dynamic objects only
            preds = []
            for d in (rec["perceived"] or []):
                if d.det_class == "static":
                    continue
                preds.append((Obb(d.cx, d.cy, d.yaw, d.length, d.width), d.score))
            surrounding = []
            for eid in sorted(snap0):
                if eid == cav:
                    continue
                track = []
                for t in future_ticks:
                    e = self._ol_snapshots[t].get(eid)
                    if e is None:
                        e = self._ol_snapshots[t0][eid]
                    track.append((e[0], e[1], e[2], e[3]))
                surrounding.append(tuple(track))
            plan_pts = tuple(rec["plan"])[:6]
            if len(plan_pts) == 6:
                samples.append(OpenLoopSample(
                    tick=t0, gt_boxes=gt_boxes, pred_boxes=tuple(preds),
                    plan=plan_pts, gt_future=tuple(gt_future),
                    surrounding=tuple(surrounding)))
        return samples

    # -- results ---------------------------------------------------------------

    def results(self) -> dict[str, EpisodeResult]:
        out = {}
        for cav_id in sorted(self.cavs):
            rt = self.cavs[cav_id]
            rc = 100.0 * rt.s_progress / rt.route.length
            res = make_result(rc, rt.events, self.clock.tick,
                              self.cfg.penalties, self.cfg.success_rc)
            if rt.failed and res.success:
                res = replace(res, success=False)
            out[cav_id] = res
        return out

    def run(self) -> None:
        while not self.done:
            self.step()


def run_episode(scenario: Scenario, bindings: dict,
                channel_cfg: ChannelConfig | None = None, seed: int = 0,
                cfg: EngineConfig | None = None) -> tuple[EpisodeTrace, dict[str, EpisodeResult]]:
    """Run one episode to completion; pure in (scenario, bindings, cfg, seed)."""
    ep = Episode(scenario, bindings, channel_cfg, seed, cfg)
    ep.run()
    return ep.trace, ep.results()
