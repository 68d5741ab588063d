"""Abstract BEV sensing and the benchmarked policy paradigms.

Three deterministic policies share one planning core: `single` plans from
ego sensing only, `coop_perception` plans over fused own plus received
detections, and `negotiation` adds explicit conflict claims resolved by a
fixed priority order. A `blind` route follower that never brakes ships for
constructed-outcome tests, and `external:<host:port>` forwards observations
to an out-of-process planner over the bridge wire format.
"""

from __future__ import annotations

import json
import math
import socket
from collections import deque
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .channel import Intent, PerceptionShare, V2XMessage, transform_detections
from .geometry import (Obb, Polyline, frame_to_world, polyline_intersections,
                       segment_circle_intersects, segment_obb_intersects,
                       segment_point_distance, world_to_frame, wrap_angle)

SENSOR_RANGE_DEFAULT = 50.0
PEDESTRIAN_RADIUS = 0.3

PLAN_HORIZON_S = 3.0
PLAN_DT = 0.5
PLAN_POINTS = 6
HISTORY_FRAMES = 5

TTC_BRAKE_S = 2.0
GAP_BRAKE_M = 6.0
STOP_MARGIN_M = 2.0  # clearance beyond the contact envelope
CORRIDOR_HALF_M = 2.0
PLAN_DECEL = 3.0
ROUTE_END_FLOOR_SPEED = 2.0

FUSE_IOU = 0.3

NEGOTIATION_BEACON_TICKS = 20  # route remainder broadcast cadence (1 s)
CONFLICT_HOLD_MARGIN_M = 6.0
CONFLICT_ZONE_RADIUS_M = 4.0
SHARE_TTL_TICKS = 30
SELF_ECHO_GATE_M = 2.0


class EntityView(NamedTuple):
    id: str
    cls: str  # vehicle | pedestrian | cyclist | static
    x: float
    y: float
    yaw: float
    v: float
    length: float
    width: float


@dataclass(frozen=True)
class Detection:
    cx: float
    cy: float
    length: float
    width: float
    yaw: float
    det_class: str
    speed: float
    source: str
    score: float = 1.0

    def obb(self) -> Obb:
        return Obb(self.cx, self.cy, self.yaw, self.length, self.width)


@dataclass(frozen=True)
class EgoView:
    id: str
    x: float
    y: float
    yaw: float
    v: float
    length: float
    width: float

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.yaw)


@dataclass(frozen=True)
class Observation:
    tick: int
    sim_time: float
    ego: EgoView
    route_remainder: Polyline | None
    route_s: float          # ego arc-length progress on its route
    route_length: float
    route_cap: float
    route_done: bool
    detections: tuple[Detection, ...]  # world frame, own sensing
    messages: tuple[V2XMessage, ...]   # delivered this tick


@dataclass(frozen=True)
class PlannedTrajectory:
    """Timestamped waypoints covering the next 3 s (absolute sim time)."""

    points: tuple[tuple[float, float, float], ...]  # (t, x, y)

    def __post_init__(self):
        ts = [p[0] for p in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("plan timestamps must be strictly increasing")

    def xy(self) -> np.ndarray:
        return np.array([(x, y) for _, x, y in self.points])


@dataclass
class PolicyOutput:
    plan: PlannedTrajectory
    payloads: list = field(default_factory=list)
    wait_target: str | None = None
    perceived: tuple[Detection, ...] = ()  # world frame, what the planner saw


# ---------------------------------------------------------------------------
# sensing

def _occludes(p, q, ent: EntityView) -> bool:
    if ent.cls == "pedestrian":
        return segment_circle_intersects(p, q, (ent.x, ent.y), PEDESTRIAN_RADIUS)
    return segment_obb_intersects(p, q, Obb(ent.x, ent.y, ent.yaw, ent.length, ent.width))


def sense_from(origin: tuple[float, float], entities: list[EntityView],
               exclude_id: str | None, sensor_range: float, source: str) -> list[Detection]:
    """Every entity within range with a clear center-to-center sight line."""
    ox, oy = origin
    visible: list[Detection] = []
    in_range = [e for e in entities
                if e.id != exclude_id and math.hypot(e.x - ox, e.y - oy) <= sensor_range]
    for target in in_range:
        seg_q = (target.x, target.y)
        blocked = False
        for other in entities:
            if other.id == exclude_id or other.id == target.id:
                continue
            if math.hypot(other.x - ox, other.y - oy) > sensor_range + other.length:
                continue
            if _occludes((ox, oy), seg_q, other):
                blocked = True
                break
        if not blocked:
            visible.append(Detection(
                cx=target.x, cy=target.y, length=target.length, width=target.width,
                yaw=target.yaw, det_class=target.cls, speed=target.v, source=source))
    return visible


def sense(entities: list[EntityView], ego_id: str,
          sensor_range: float = SENSOR_RANGE_DEFAULT) -> list[Detection]:
    ego = next(e for e in entities if e.id == ego_id)
    return sense_from((ego.x, ego.y), entities, ego_id, sensor_range, ego_id)


# ---------------------------------------------------------------------------
# fusion

def _iou(a: Detection, b: Detection) -> float:
    from .metrics import iou_bev
    return iou_bev(a.obb(), b.obb())


def fuse_detections(own: list[Detection], received: list[Detection]) -> list[Detection]:
    """Union with duplicate suppression at BEV IoU > 0.3.

    Own entries are always kept. Received entries are processed in
    (source id, arrival index) order and dropped when they duplicate any
    survivor; ties across senders therefore keep the lower source id.
    """
    survivors: list[Detection] = list(own)
    ordered = sorted(range(len(received)), key=lambda i: (received[i].source, i))
    for i in ordered:
        cand = received[i]
        if any(_iou(cand, kept) > FUSE_IOU for kept in survivors):
            continue
        survivors.append(cand)
    return survivors


def detections_to_frame(dets, pose) -> list[Detection]:
    """World-frame detections into the frame at pose."""
    fx, fy, fyaw = pose
    out = []
    for d in dets:
        lx, ly = world_to_frame(d.cx, d.cy, fx, fy, fyaw)
        out.append(replace(d, cx=lx, cy=ly, yaw=wrap_angle(d.yaw - fyaw)))
    return out


def detections_to_world(dets, pose) -> list[Detection]:
    fx, fy, fyaw = pose
    out = []
    for d in dets:
        wx, wy = frame_to_world(d.cx, d.cy, fx, fy, fyaw)
        out.append(replace(d, cx=wx, cy=wy, yaw=wrap_angle(d.yaw + fyaw)))
    return out


# ---------------------------------------------------------------------------
# planning core

def _speed_profile_plan(route: Polyline, s_now: float, now: float, target: float,
                        stop_s: float | None) -> PlannedTrajectory:
    """Plan waypoints along the route at `target`, ramping to zero at stop_s.

    Past the route end the plan extrapolates along the final heading so the
    derived target speed does not decay asymptotically near the goal.
    """
    pts = []
    s = s_now
    v = target
    for k in range(1, PLAN_POINTS + 1):
        if stop_s is not None:
            remaining = max(stop_s - s, 0.0)
            v = min(target, math.sqrt(2.0 * PLAN_DECEL * remaining))
        step = v * PLAN_DT
        if stop_s is not None:
            step = min(step, max(stop_s - s, 0.0))
        s += step
        if s <= route.length:
            x, y = route.point_at(s)
        else:
            ex, ey = route.pts[-1]
            h = route.heading_at(route.length)
            over = s - route.length
            x, y = ex + over * math.cos(h), ey + over * math.sin(h)
        pts.append((now + k * PLAN_DT, float(x), float(y)))
    return PlannedTrajectory(tuple(pts))


def _stationary_plan(now: float, x: float, y: float) -> PlannedTrajectory:
    return PlannedTrajectory(tuple((now + k * PLAN_DT, x, y) for k in range(1, PLAN_POINTS + 1)))


_TAU_GRID = [0.25 * i for i in range(13)]  # 0..3 s hazard prediction grid


def _hazard_stop(route_tail: Polyline, s_now: float, ego: EgoView,
                 dets: list[Detection]) -> float | None:
    """Arc position to stop at, or None when the corridor ahead is clear.

    A detection is a hazard when its constant-velocity extrapolation enters
    the route corridor and the ego would reach that point within the TTC
    threshold, or when it already sits in the corridor within the gap bound.
    """
    stop_candidates = []
    for det in dets:
        if math.hypot(det.cx - ego.x, det.cy - ego.y) > 60.0:
            continue
        vx = det.speed * math.cos(det.yaw)
        vy = det.speed * math.sin(det.yaw)
        contact = 0.5 * ego.length + 0.5 * det.length + 0.5
        entry_s = None
        conflict_tau = None
        for tau in _TAU_GRID:
            px, py = det.cx + vx * tau, det.cy + vy * tau
            proj = route_tail.project((px, py))
            if abs(proj.lateral) > CORRIDOR_HALF_M or proj.distance > CORRIDOR_HALF_M + 3.0:
                continue
            s_abs = s_now + proj.s
            if s_abs < s_now + 0.2:
                continue
            if entry_s is None or s_abs < entry_s:
                entry_s = s_abs
            ego_s_tau = s_now + ego.v * tau
            if conflict_tau is None and ego_s_tau >= s_abs - contact:
                conflict_tau = tau
        if entry_s is None:
            continue
        gap_now = None
        proj0 = route_tail.project((det.cx, det.cy))
        if abs(proj0.lateral) <= CORRIDOR_HALF_M and proj0.distance <= CORRIDOR_HALF_M + 3.0:
            gap_now = proj0.s - 0.5 * ego.length - 0.5 * det.length
        ttc_hit = conflict_tau is not None and conflict_tau < TTC_BRAKE_S
        gap_hit = gap_now is not None and gap_now < GAP_BRAKE_M
        if ttc_hit or gap_hit:
            # hold clear of the contact envelope, not the obstacle center
            stop_candidates.append(entry_s - contact - STOP_MARGIN_M)
    if not stop_candidates:
        return None
    return min(stop_candidates)


# ---------------------------------------------------------------------------
# policies

class PolicyBase:
    """Stateful wrapper around a pure planning rule.

    State is limited to the observation ring and, for cooperative policies,
    caches that are pure functions of the message history.
    """

    name = "base"
    profile_name = "v2x_cap8"
    uses_channel = False

    def __init__(self, cav_id: str, route: Polyline, route_cap: float):
        self.cav_id = cav_id
        self.route = route
        self.route_cap = route_cap
        self.history: deque[Observation] = deque(maxlen=HISTORY_FRAMES)

    def reset(self) -> None:
        self.history.clear()

    def plan(self, obs: Observation) -> PolicyOutput:
        raise NotImplementedError

    def __call__(self, obs: Observation) -> PolicyOutput:
        self.history.append(obs)
        return self.plan(obs)

    def _follow(self, obs: Observation, stop_s: float | None) -> PlannedTrajectory:
        if obs.route_done:
            return _stationary_plan(obs.sim_time, obs.ego.x, obs.ego.y)
        remaining = obs.route_length - obs.route_s
        target = obs.route_cap
        if remaining < 8.0 and (stop_s is None or stop_s > obs.route_length):
            target = max(ROUTE_END_FLOOR_SPEED, min(target, remaining + 2.0))
        if stop_s is not None and stop_s <= obs.route_s + 0.2:
            return _stationary_plan(obs.sim_time, obs.ego.x, obs.ego.y)
        tail = obs.route_remainder
        if tail is None:
            return _stationary_plan(obs.sim_time, obs.ego.x, obs.ego.y)
        rel_stop = None if stop_s is None else stop_s - obs.route_s
        return _speed_profile_plan(tail, 0.0, obs.sim_time, target, rel_stop)


class BlindPolicy(PolicyBase):
    """Route follower that ignores every detection. For constructed tests."""

    name = "blind"

    def plan(self, obs: Observation) -> PolicyOutput:
        return PolicyOutput(self._follow(obs, None), perceived=obs.detections)


class SingleAgentPolicy(PolicyBase):
    """Plans from own occlusion-limited sensing only."""

    name = "single"

    def plan(self, obs: Observation) -> PolicyOutput:
        stop_s = None
        if not obs.route_done and obs.route_remainder is not None:
            rel = _hazard_stop(obs.route_remainder, 0.0, obs.ego, list(obs.detections))
            stop_s = None if rel is None else obs.route_s + rel
        return PolicyOutput(self._follow(obs, stop_s), perceived=obs.detections)


class CoopPerceptionPolicy(PolicyBase):
    """Same rule as single-agent, over own plus received detections."""

    name = "coop_perception"
    uses_channel = True

    def __init__(self, cav_id, route, route_cap):
        super().__init__(cav_id, route, route_cap)
        self._latest_share: dict[str, tuple[int, V2XMessage]] = {}
        self.peer_routes: dict[str, Polyline] = {}

    def reset(self):
        super().reset()
        self._latest_share.clear()
        self.peer_routes.clear()

    def _is_self_echo(self, det: Detection, obs: Observation) -> bool:
        """Received detection (ego frame) that is this vehicle as seen by the
        sender: near the ego's recent path, allowing for latency and pose
        noise on the shared frame."""
        if det.det_class not in ("vehicle", "cyclist"):
            return False
        back = max(obs.ego.v, 1.0) * 0.8
        return segment_point_distance((-back, 0.0), (0.5, 0.0),
                                      (det.cx, det.cy)) < SELF_ECHO_GATE_M

    def _ingest(self, obs: Observation) -> list[Detection]:
        for msg in obs.messages:
            if isinstance(msg.payload, PerceptionShare):
                self._latest_share[msg.sender] = (obs.tick, msg)
                if msg.payload.route_remainder is not None:
                    pose = msg.perturbed_pose or msg.payload.sender_pose
                    pts = [frame_to_world(px, py, *pose)
                           for px, py in msg.payload.route_remainder]
                    if len(pts) >= 2:
                        self.peer_routes[msg.sender] = Polyline(pts)
        received: list[Detection] = []
        for sender, (tick_seen, msg) in self._latest_share.items():
            if obs.tick - tick_seen > SHARE_TTL_TICKS:
                continue
            pose = msg.perturbed_pose or msg.payload.sender_pose
            incoming = transform_detections(msg.payload, pose, obs.ego.pose)
            received.extend(d for d in incoming if not self._is_self_echo(d, obs))
        own_ego = detections_to_frame(list(obs.detections), obs.ego.pose)
        fused = fuse_detections(own_ego, received)
        return detections_to_world(fused, obs.ego.pose)

    def _share_payload(self, obs: Observation, route_beacon: bool) -> PerceptionShare:
        dets_ego = detections_to_frame(list(obs.detections), obs.ego.pose)
        route = None
        if route_beacon and obs.route_remainder is not None and not obs.route_done:
            pts = [tuple(world_to_frame(x, y, *obs.ego.pose))
                   for x, y in obs.route_remainder.pts]
            route = tuple(pts)
        return PerceptionShare(tuple(dets_ego), obs.ego.pose, route)

    def plan(self, obs: Observation) -> PolicyOutput:
        fused_world = self._ingest(obs)
        stop_s = None
        if not obs.route_done and obs.route_remainder is not None:
            rel = _hazard_stop(obs.route_remainder, 0.0, obs.ego, fused_world)
            stop_s = None if rel is None else obs.route_s + rel
        payloads = [self._share_payload(obs, route_beacon=False)]
        return PolicyOutput(self._follow(obs, stop_s), payloads,
                            perceived=tuple(fused_world))


class NegotiationPolicy(CoopPerceptionPolicy):
    """Cooperative perception plus rule-based conflict negotiation.

    Conflicts are route-polyline crossings with a peer. Priority is the
    immutable pair of first-broadcast claims ordered by (entry time, id);
    the loser holds short of the crossing until the winner's latest claimed
    interval has elapsed and the crossing is observed clear.

    An external negotiator can replace the priority rule: a callable
    (conflict_id, own_claim, peer_claim, default_action) -> "proceed"|"yield"
    attached via `negotiator`. The safety layer (hold point, zone check)
    stays in place either way.
    """

    name = "negotiation"

    def __init__(self, cav_id, route, route_cap, negotiator=None):
        super().__init__(cav_id, route, route_cap)
        self.negotiator = negotiator
        self.initial_claims: dict[tuple[str, str], tuple[float, str]] = {}
        self.latest_exit: dict[tuple[str, str], float] = {}
        self.conflicts: dict[str, tuple[float, np.ndarray]] = {}  # peer -> (s_own, point)

    def reset(self):
        super().reset()
        self.initial_claims.clear()
        self.latest_exit.clear()
        self.conflicts.clear()

    def _conflict_id(self, peer: str) -> str:
        a, b = sorted((self.cav_id, peer))
        return f"x:{a}|{b}"

    def _update_conflicts(self, obs: Observation) -> None:
        if obs.route_done or obs.route_remainder is None:
            self.conflicts.clear()
            return
        for peer, peer_route in self.peer_routes.items():
            hits = polyline_intersections(obs.route_remainder, peer_route)
            if not hits:
                self.conflicts.pop(peer, None)
                continue
            pt, s_a, _ = min(hits, key=lambda h: h[1])
            self.conflicts[peer] = (obs.route_s + s_a, pt)
        for peer in list(self.conflicts):
            s_conflict, _ = self.conflicts[peer]
            if s_conflict < obs.route_s - 1.0:
                del self.conflicts[peer]

    def _own_claim(self, obs: Observation, s_conflict: float) -> tuple[float, float]:
        v_ref = max(obs.ego.v, 0.6 * self.route_cap, 1.0)
        dist = max(s_conflict - obs.route_s, 0.0)
        entry = obs.sim_time + dist / v_ref
        exit_t = entry + (8.0 + obs.ego.length) / v_ref + 1.0
        return entry, exit_t

    def _ingest_intents(self, obs: Observation) -> None:
        for msg in obs.messages:
            if not isinstance(msg.payload, Intent):
                continue
            intent = msg.payload
            key = (intent.conflict_id, msg.sender)
            # the sender's priority key is its immutable first-broadcast claim
            self.initial_claims[key] = (float(intent.priority_key[0]),
                                        str(intent.priority_key[1]))
            prev = self.latest_exit.get(key, -math.inf)
            self.latest_exit[key] = max(prev, intent.exit_time)

    def _zone_occupied(self, point, dets_world: list[Detection]) -> bool:
        px, py = float(point[0]), float(point[1])
        for det in dets_world:
            if det.det_class in ("vehicle", "cyclist"):
                if math.hypot(det.cx - px, det.cy - py) < CONFLICT_ZONE_RADIUS_M:
                    return True
        return False

    def plan(self, obs: Observation) -> PolicyOutput:
        fused_world = self._ingest(obs)
        self._ingest_intents(obs)
        self._update_conflicts(obs)

        payloads: list = []
        beacon = obs.tick % NEGOTIATION_BEACON_TICKS == 0
        payloads.append(self._share_payload(obs, route_beacon=beacon))

        stop_targets: list[float] = []
        wait_target = None
        wait_key = None
        for peer, (s_conflict, point) in sorted(self.conflicts.items()):
            cid = self._conflict_id(peer)
            own_key = (cid, self.cav_id)
            entry, exit_t = self._own_claim(obs, s_conflict)
            if beacon and own_key not in self.initial_claims:
                # pinned at first broadcast so both sides order by the same
                # numbers regardless of when each detected the conflict
                self.initial_claims[own_key] = (entry, self.cav_id)
            peer_claim = self.initial_claims.get((cid, peer))
            action = "proceed"
            if peer_claim is not None and own_key in self.initial_claims:
                mine0 = self.initial_claims[own_key]
                if peer_claim < mine0:
                    action = "yield"
                if self.negotiator is not None:
                    action = self.negotiator(cid, mine0, peer_claim, action)
                if action == "yield":
                    released = (obs.sim_time > self.latest_exit.get((cid, peer), math.inf)
                                and not self._zone_occupied(point, fused_world))
                    if not released:
                        stop_targets.append(s_conflict - CONFLICT_HOLD_MARGIN_M)
                        cand = (mine0, peer)
                        if wait_key is None or cand < wait_key:
                            wait_key = cand
                            wait_target = peer
            if beacon:
                if action == "yield":
                    floor = self.latest_exit.get((cid, peer), entry)
                    entry = max(entry, floor + 0.5)
                    exit_t = max(exit_t, entry + 2.0)
                payloads.append(Intent(
                    conflict_id=cid, entry_time=entry, exit_time=exit_t,
                    action=action, priority_key=self.initial_claims[own_key],
                    sender_pose=obs.ego.pose))

        stop_s = None
        if not obs.route_done and obs.route_remainder is not None:
            rel = _hazard_stop(obs.route_remainder, 0.0, obs.ego, fused_world)
            if rel is not None:
                stop_targets.append(obs.route_s + rel)
        if stop_targets:
            stop_s = min(stop_targets)
        return PolicyOutput(self._follow(obs, stop_s), payloads, wait_target,
                            perceived=tuple(fused_world))


class ExternalPolicy(PolicyBase):
    """Forwards observations to an external planner over a JSON-line socket."""

    name = "external"

    def __init__(self, cav_id, route, route_cap, endpoint: str):
        super().__init__(cav_id, route, route_cap)
        host, _, port = endpoint.rpartition(":")
        self._addr = (host or "127.0.0.1", int(port))
        self._sock = None
        self._file = None

    def _connect(self):
        if self._sock is None:
            self._sock = socket.create_connection(self._addr, timeout=10.0)
            self._file = self._sock.makefile("rw", encoding="utf-8")

    def plan(self, obs: Observation) -> PolicyOutput:
        self._connect()
        req = {
            "type": "observation",
            "tick": obs.tick,
            "sim_time_s": obs.sim_time,
            "ego": {"id": obs.ego.id, "x": obs.ego.x, "y": obs.ego.y,
                    "yaw": obs.ego.yaw, "v": obs.ego.v},
            "route_remainder": ([] if obs.route_remainder is None
                                else obs.route_remainder.pts.tolist()),
            "route_done": obs.route_done,
            "detections": [
                {"x": d.cx, "y": d.cy, "yaw": d.yaw, "length": d.length,
                 "width": d.width, "class": d.det_class, "v": d.speed}
                for d in obs.detections],
        }
        self._file.write(json.dumps(req) + "\n")
        self._file.flush()
        line = self._file.readline()
        if not line:
            raise ConnectionError(f"external planner at {self._addr} closed the stream")
        reply = json.loads(line)
        pts = tuple((float(t), float(x), float(y)) for t, x, y in reply["plan"])
        return PolicyOutput(PlannedTrajectory(pts))

    def close(self):
        if self._sock is not None:
            self._sock.close()
            self._sock = None


POLICY_CLASSES = {
    "single": SingleAgentPolicy,
    "coop_perception": CoopPerceptionPolicy,
    "negotiation": NegotiationPolicy,
    "blind": BlindPolicy,
}


def make_policy(name: str, cav_id: str, route: Polyline, route_cap: float) -> PolicyBase:
    if name.startswith("external:"):
        return ExternalPolicy(cav_id, route, route_cap, name.split(":", 1)[1])
    if name not in POLICY_CLASSES:
        raise KeyError(f"unknown policy {name!r}")
    return POLICY_CLASSES[name](cav_id, route, route_cap)


# spec-shaped functional entry points -----------------------------------------

def single_agent_policy(obs: Observation, history) -> PlannedTrajectory:
    p = SingleAgentPolicy(obs.ego.id, obs.route_remainder, obs.route_cap)
    p.history = history
    return p.plan(obs).plan


def coop_perception_policy(obs: Observation, history) -> PlannedTrajectory:
    p = CoopPerceptionPolicy(obs.ego.id, obs.route_remainder, obs.route_cap)
    p.history = history
    return p.plan(obs).plan


def negotiation_policy(obs: Observation, history, peers) -> tuple[PlannedTrajectory, list]:
    p = NegotiationPolicy(obs.ego.id, obs.route_remainder, obs.route_cap)
    p.history = history
    out = p.plan(obs)
    intents = [pl for pl in out.payloads if isinstance(pl, Intent)]
    return out.plan, intents
