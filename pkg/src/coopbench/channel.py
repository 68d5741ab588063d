"""Inter-agent message bus with deterministic latency and pose-error noise.

Latency is a uniform tick delay (the deployment experiments use 6 ticks,
300 ms at 20 Hz). Pose noise is zero-mean Gaussian on the sender pose
attached to each spatial payload (position sigma in meters, rotation sigma
in degrees), redrawn per message by default.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, replace

from . import rng as rngmod
from .geometry import frame_to_world, world_to_frame, wrap_angle

Pose = tuple[float, float, float]


@dataclass(frozen=True)
class PerceptionShare:
    """Detections in the sender frame, plus the sender's believed pose.

    Negotiating agents piggyback their route remainder (sender frame) on the
    once-per-second beacon so peers can detect route conflicts; the field is
    None on the other ticks.
    """

    detections: tuple
    sender_pose: Pose
    route_remainder: tuple[tuple[float, float], ...] | None = None


@dataclass(frozen=True)
class Intent:
    """Claim on a route conflict: when the sender intends to occupy it."""

    conflict_id: str
    entry_time: float
    exit_time: float
    action: str  # "proceed" | "yield"
    priority_key: tuple
    sender_pose: Pose


@dataclass(frozen=True)
class V2XMessage:
    sender: str
    tick_sent: int
    seq: int
    payload: PerceptionShare | Intent
    delivery_tick: int = 0
    perturbed_pose: Pose | None = None


@dataclass(frozen=True)
class ChannelConfig:
    latency_ticks: int = 0
    pos_noise_sigma_m: float = 0.0
    rot_noise_sigma_deg: float = 0.0
    seed: int | None = None  # defaults to the episode seed
    noise_redraw: str = "per_message"  # or "per_episode"
    compute_delay_ticks: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.latency_ticks < 0:
            raise ValueError("latency_ticks must be >= 0")
        if self.pos_noise_sigma_m < 0 or self.rot_noise_sigma_deg < 0:
            raise ValueError("noise sigmas must be >= 0")

    def policy_delay(self, policy_name: str) -> int:
        return int(self.compute_delay_ticks.get(policy_name, 0))

    def digest_fields(self) -> dict:
        return {
            "latency_ticks": self.latency_ticks,
            "pos_noise_sigma_m": self.pos_noise_sigma_m,
            "rot_noise_sigma_deg": self.rot_noise_sigma_deg,
            "seed": self.seed,
            "noise_redraw": self.noise_redraw,
            "compute_delay_ticks": dict(sorted(self.compute_delay_ticks.items())),
        }


def perturb_pose(cfg: ChannelConfig, stream, pose: Pose) -> Pose:
    """Additive N(0, sigma) on x, y and on yaw (degrees converted)."""
    if cfg.pos_noise_sigma_m == 0.0 and cfg.rot_noise_sigma_deg == 0.0:
        return pose
    dx = stream.normal(0.0, cfg.pos_noise_sigma_m)
    dy = stream.normal(0.0, cfg.pos_noise_sigma_m)
    dyaw = math.radians(stream.normal(0.0, cfg.rot_noise_sigma_deg))
    return (pose[0] + dx, pose[1] + dy, wrap_angle(pose[2] + dyaw))


def transform_detections(payload: PerceptionShare, sender_pose: Pose,
                         receiver_pose: Pose) -> list:
    """Sender-frame detections -> world via sender_pose -> receiver frame."""
    out = []
    sx, sy, syaw = sender_pose
    rx, ry, ryaw = receiver_pose
    for det in payload.detections:
        wx, wy = frame_to_world(det.cx, det.cy, sx, sy, syaw)
        wyaw = det.yaw + syaw
        lx, ly = world_to_frame(wx, wy, rx, ry, ryaw)
        out.append(replace(det, cx=lx, cy=ly, yaw=wrap_angle(wyaw - ryaw)))
    return out


def transform_points_to_world(points, sender_pose: Pose) -> list[tuple[float, float]]:
    sx, sy, syaw = sender_pose
    return [frame_to_world(px, py, sx, sy, syaw) for px, py in points]


class Channel:
    """Owned by the episode loop; agents see immutable message snapshots."""

    def __init__(self, cfg: ChannelConfig, episode_seed: int):
        self.cfg = cfg
        self.seed = cfg.seed if cfg.seed is not None else episode_seed
        self._buckets: dict[int, list[V2XMessage]] = {}
        self._seq: dict[str, int] = {}
        self._consumed_through: dict[str, int] = {}
        self._episode_offsets: dict[str, Pose] = {}

    def _noise_pose(self, sender: str, seq: int, pose: Pose) -> Pose:
        if self.cfg.pos_noise_sigma_m == 0.0 and self.cfg.rot_noise_sigma_deg == 0.0:
            return pose
        if self.cfg.noise_redraw == "per_episode":
            if sender not in self._episode_offsets:
                stream = rngmod.substream(self.seed, "v2x-noise", sender)
                base = perturb_pose(self.cfg, stream, (0.0, 0.0, 0.0))
                self._episode_offsets[sender] = base
            dx, dy, dyaw = self._episode_offsets[sender]
            return (pose[0] + dx, pose[1] + dy, wrap_angle(pose[2] + dyaw))
        stream = rngmod.substream(self.seed, "v2x-noise", sender, seq)
        return perturb_pose(self.cfg, stream, pose)

    def send(self, sender: str, tick_sent: int, payload) -> V2XMessage:
        seq = self._seq.get(sender, 0)
        self._seq[sender] = seq + 1
        perturbed = None
        if isinstance(payload, (PerceptionShare, Intent)):
            perturbed = self._noise_pose(sender, seq, payload.sender_pose)
        msg = V2XMessage(
            sender=sender,
            tick_sent=tick_sent,
            seq=seq,
            payload=payload,
            delivery_tick=tick_sent + self.cfg.latency_ticks,
            perturbed_pose=perturbed,
        )
        self._buckets.setdefault(msg.delivery_tick, []).append(msg)
        return msg

    def deliver_due(self, now: int, receiver: str) -> list[V2XMessage]:
        """Messages due at or before `now` not yet seen by this receiver,
        in (delivery tick, sender id, seq) order. Excludes own messages."""
        start = self._consumed_through.get(receiver, -1) + 1
        out: list[V2XMessage] = []
        if start <= now:
            for t in range(start, now + 1):
                bucket = self._buckets.get(t)
                if bucket:
                    due = [m for m in bucket if m.sender != receiver]
                    due.sort(key=lambda m: (m.delivery_tick, m.sender, m.seq))
                    out.extend(due)
            self._consumed_through[receiver] = now
        return out

    # -- pause/resume support -------------------------------------------------

    def to_state(self) -> dict:
        def enc_payload(p):
            d = dataclasses.asdict(p)
            if isinstance(p, PerceptionShare):
                d["_kind"] = "perception"
                d["detections"] = [dataclasses.asdict(x) for x in p.detections]
            else:
                d["_kind"] = "intent"
            return d

        return {
            "seed": self.seed,
            "buckets": {
                str(t): [
                    {
                        "sender": m.sender, "tick_sent": m.tick_sent, "seq": m.seq,
                        "delivery_tick": m.delivery_tick,
                        "perturbed_pose": list(m.perturbed_pose) if m.perturbed_pose else None,
                        "payload": enc_payload(m.payload),
                    }
                    for m in msgs
                ]
                for t, msgs in self._buckets.items()
            },
            "seq": dict(self._seq),
            "consumed_through": dict(self._consumed_through),
            "episode_offsets": {k: list(v) for k, v in self._episode_offsets.items()},
        }

    @classmethod
    def from_state(cls, cfg: ChannelConfig, state: dict) -> "Channel":
        from .agents import Detection

        ch = cls(cfg, state["seed"])
        ch.seed = state["seed"]

        def dec_payload(d):
            kind = d.pop("_kind")
            if kind == "perception":
                dets = tuple(Detection(**x) for x in d["detections"])
                route = d.get("route_remainder")
                return PerceptionShare(
                    detections=dets,
                    sender_pose=tuple(d["sender_pose"]),
                    route_remainder=tuple(tuple(p) for p in route) if route else None,
                )
            d["sender_pose"] = tuple(d["sender_pose"])
            d["priority_key"] = tuple(d["priority_key"])
            return Intent(**d)

        for t, msgs in state["buckets"].items():
            ch._buckets[int(t)] = [
                V2XMessage(
                    sender=m["sender"], tick_sent=m["tick_sent"], seq=m["seq"],
                    payload=dec_payload(dict(m["payload"])),
                    delivery_tick=m["delivery_tick"],
                    perturbed_pose=tuple(m["perturbed_pose"]) if m["perturbed_pose"] else None,
                )
                for m in msgs
            ]
        ch._seq = dict(state["seq"])
        ch._consumed_through = dict(state["consumed_through"])
        ch._episode_offsets = {k: tuple(v) for k, v in state["episode_offsets"].items()}
        return ch
