"""Waypoint-tracking control stack: longitudinal and lateral PID.

Shipped profiles mirror the benchmark's published controller rows: the V2X
profile (long (5.0, 1.0, 0.1), lat (1.0, 0.2, 0.1), binary brake, steer clip
+-1.0, adaptive target speed capped at 8 or 5 m/s) and the rule-based profile
(lat (0.5, 0.05, 0.2), continuous brake max 0.5, clip +-0.8, fixed 6.0 m/s,
i.e. 21.6 km/h; the takeover variant targets 28.8 km/h).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .geometry import wrap_angle

THROTTLE_MAX = 0.75
DEFAULT_WINDUP_BOUND = 10.0
BINARY_BRAKE_MARGIN = 0.5  # m/s over target before the brake trips


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float
    kd: float


@dataclass
class PidState:
    integral: float = 0.0
    prev_error: float = 0.0
    windup_bound: float = DEFAULT_WINDUP_BOUND
    primed: bool = False  # no derivative kick on the first step


def pid_step(gains: PidGains, state: PidState, error: float, dt: float) -> tuple[float, PidState]:
    """One PID update: kp*e + ki*integral(e dt) + kd*de/dt, integral clamped."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    integral = state.integral + error * dt
    bound = state.windup_bound
    integral = min(max(integral, -bound), bound)
    derivative = (error - state.prev_error) / dt if state.primed else 0.0
    output = gains.kp * error + gains.ki * integral + gains.kd * derivative
    return output, PidState(integral, error, bound, True)


@dataclass(frozen=True)
class ControllerProfile:
    name: str
    longitudinal: PidGains
    lateral: PidGains
    steer_clip: float
    brake_mode: str  # "binary" | "continuous"
    brake_max: float = 1.0
    throttle_max: float = THROTTLE_MAX
    target_speed_mode: str = "adaptive"  # "adaptive" | "fixed"
    speed_cap: float = 8.0   # adaptive cap, m/s
    fixed_speed: float = 6.0  # m/s, used when target_speed_mode == "fixed"

    def with_cap(self, cap: float) -> "ControllerProfile":
        return replace(self, speed_cap=cap)


PROFILES: dict[str, ControllerProfile] = {
    "v2x_cap8": ControllerProfile(
        name="v2x_cap8",
        longitudinal=PidGains(5.0, 1.0, 0.1),
        lateral=PidGains(1.0, 0.2, 0.1),
        steer_clip=1.0,
        brake_mode="binary",
        target_speed_mode="adaptive",
        speed_cap=8.0,
    ),
    "v2x_cap5": ControllerProfile(
        name="v2x_cap5",
        longitudinal=PidGains(5.0, 1.0, 0.1),
        lateral=PidGains(1.0, 0.2, 0.1),
        steer_clip=1.0,
        brake_mode="binary",
        target_speed_mode="adaptive",
        speed_cap=5.0,
    ),
    "rule_based": ControllerProfile(
        name="rule_based",
        longitudinal=PidGains(5.0, 1.0, 0.1),
        lateral=PidGains(0.5, 0.05, 0.2),
        steer_clip=0.8,
        brake_mode="continuous",
        brake_max=0.5,
        target_speed_mode="fixed",
        fixed_speed=6.0,
    ),
    "takeover": ControllerProfile(
        name="takeover",
        longitudinal=PidGains(5.0, 1.0, 0.1),
        lateral=PidGains(0.5, 0.05, 0.2),
        steer_clip=0.8,
        brake_mode="continuous",
        brake_max=0.5,
        target_speed_mode="fixed",
        fixed_speed=8.0,
    ),
}

ADAPTIVE_SPEED_PAIRS = 4


def adaptive_target_speed(plan, cap: float) -> float:
    """Target speed from mean waypoint spacing over the first few plan pairs.

    `plan` is a sequence of (t, x, y) with strictly increasing t.
    """
    if len(plan) < 2:
        return 0.0
    total_d = 0.0
    total_t = 0.0
    pairs = min(ADAPTIVE_SPEED_PAIRS, len(plan) - 1)
    for k in range(pairs):
        t0, x0, y0 = plan[k][:3]
        t1, x1, y1 = plan[k + 1][:3]
        total_d += math.hypot(x1 - x0, y1 - y0)
        total_t += t1 - t0
    if total_t <= 0:
        return 0.0
    speed = total_d / total_t
    return min(max(speed, 0.0), cap)


def lookahead_distance(v: float) -> float:
    return max(4.0, 0.5 * v)


@dataclass
class ControllerState:
    longitudinal: PidState = field(default_factory=PidState)
    lateral: PidState = field(default_factory=PidState)


def lateral_control(profile: ControllerProfile, state: ControllerState,
                    ego_x: float, ego_y: float, ego_yaw: float, ego_v: float,
                    plan, dt: float) -> float:
    """Steering from PID over the heading error to a lookahead plan waypoint."""
    if not plan:
        return 0.0
    look = lookahead_distance(ego_v)
    target = plan[-1]
    for point in plan:
        _, x, y = point[:3]
        if math.hypot(x - ego_x, y - ego_y) >= look:
            target = point
            break
    _, tx, ty = target[:3]
    if math.hypot(tx - ego_x, ty - ego_y) < 0.3:
        # plan collapsed onto the ego (stopping in place): hold wheel
        error = 0.0
    else:
        bearing = math.atan2(ty - ego_y, tx - ego_x)
        error = wrap_angle(bearing - ego_yaw)
    out, state.lateral = pid_step(profile.lateral, state.lateral, error, dt)
    return min(max(out, -profile.steer_clip), profile.steer_clip)


STOP_TARGET_EPS = 0.01  # a zero target demands an actual stop, not a creep


def longitudinal_control(profile: ControllerProfile, state: ControllerState,
                         v: float, v_target: float, dt: float) -> tuple[float, float]:
    """(throttle, brake); binary mode trips brake at v > target + margin.

    The accumulated integral is discarded whenever the brake engages: the
    speed-tracking regime changed, and carrying acceleration-phase windup
    through a stop would push the car past its hold point.
    """
    error = v_target - v
    out, state.longitudinal = pid_step(profile.longitudinal, state.longitudinal, error, dt)
    if profile.brake_mode == "binary":
        if v_target <= STOP_TARGET_EPS:
            brake = 1.0 if v > 1e-9 else 0.0
        else:
            brake = 1.0 if v > v_target + BINARY_BRAKE_MARGIN else 0.0
        throttle = 0.0 if brake > 0 else min(max(out, 0.0), profile.throttle_max)
    else:
        if v_target <= STOP_TARGET_EPS and v > 1e-9:
            out = -profile.brake_max
        if out >= 0:
            throttle = min(out, profile.throttle_max)
            brake = 0.0
        else:
            throttle = 0.0
            brake = min(-out, profile.brake_max)
    if brake > 0.0:
        state.longitudinal = PidState(0.0, state.longitudinal.prev_error,
                                      state.longitudinal.windup_bound,
                                      state.longitudinal.primed)
    return throttle, brake


def plan_target_speed(profile: ControllerProfile, plan) -> float:
    if profile.target_speed_mode == "fixed":
        return profile.fixed_speed
    return adaptive_target_speed(plan, profile.speed_cap)
