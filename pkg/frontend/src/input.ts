// Input capture: gamepad axes or smoothed keyboard, mapped to the same
// throttle/brake/steer channels the policies use.
//
// Channel bounds are the policy bounds: throttle in [0, 0.75], brake in
// [0, 1], steer in [-1, 1]. Steering sign follows the device: a full-left
// stick (or the left key held) emits steer = -1.0. Set
// `bindings.invertSteer` if you prefer device-left to mean +1 under a
// north-up camera.

export const THROTTLE_MAX = 0.75;

// keyboard smoothing constants: binary keys are undrivable without ramps
export const THROTTLE_RAMP_S = 0.5; // 0 -> 0.75 held
export const THROTTLE_DECAY_S = 0.3; // 0.75 -> 0 released
export const STEER_RAMP_S = 0.4; // 0 -> +-1 held
export const STEER_DECAY_S = 0.25;
export const BRAKE_RAMP_S = 0.2;
export const BRAKE_DECAY_S = 0.15;

export interface KeyBindings {
  throttle: string;
  brake: string;
  left: string;
  right: string;
  takeoverToggle: string;
  invertSteer: boolean;
}

export const DEFAULT_BINDINGS: KeyBindings = {
  throttle: "ArrowUp",
  brake: "ArrowDown",
  left: "ArrowLeft",
  right: "ArrowRight",
  takeoverToggle: "Space",
  invertSteer: false,
};

export interface KeyboardState {
  throttle: boolean;
  brake: boolean;
  left: boolean;
  right: boolean;
}

export interface GamepadAxes {
  // hardware ranges: triggers in [0, 1], stick x in [-1, 1] (left negative)
  throttleTrigger: number;
  brakeTrigger: number;
  steerStick: number;
}

export interface ChannelValues {
  throttle: number;
  brake: number;
  steer: number;
}

const clamp = (v: number, lo: number, hi: number) =>
  Math.min(Math.max(v, lo), hi);

/** Press-ramp / release-decay integrator for binary keys. */
export class KeyboardSmoother {
  private values: ChannelValues = { throttle: 0, brake: 0, steer: 0 };

  step(keys: KeyboardState, dtS: number): ChannelValues {
    const ramp = (current: number, target: number, riseS: number, fallS: number,
                  lo: number, hi: number) => {
      const span = hi - lo === 0 ? 1 : Math.max(Math.abs(hi), Math.abs(lo));
      if (target > current) {
        return clamp(current + (span / riseS) * dtS, lo, target);
      }
      if (target < current) {
        return clamp(current - (span / fallS) * dtS, target, hi);
      }
      return current;
    };
    this.values.throttle = ramp(
      this.values.throttle, keys.throttle ? THROTTLE_MAX : 0,
      THROTTLE_RAMP_S, THROTTLE_DECAY_S, 0, THROTTLE_MAX);
    this.values.brake = ramp(
      this.values.brake, keys.brake ? 1 : 0,
      BRAKE_RAMP_S, BRAKE_DECAY_S, 0, 1);
    const steerTarget = keys.left === keys.right ? 0 : keys.left ? -1 : 1;
    this.values.steer = ramp(
      this.values.steer, steerTarget, STEER_RAMP_S, STEER_DECAY_S, -1, 1);
    return { ...this.values };
  }

  reset(): void {
    this.values = { throttle: 0, brake: 0, steer: 0 };
  }

  current(): ChannelValues {
    return { ...this.values };
  }
}

export function mapGamepad(axes: GamepadAxes): ChannelValues {
  return {
    throttle: clamp(axes.throttleTrigger, 0, 1) * THROTTLE_MAX,
    brake: clamp(axes.brakeTrigger, 0, 1),
    steer: clamp(axes.steerStick, -1, 1),
  };
}

export interface DeviceState {
  kind: "gamepad" | "keyboard";
  gamepad?: GamepadAxes;
  keyboard?: ChannelValues; // already smoothed
  invertSteer?: boolean;
}

export interface MappedControl {
  throttle: number;
  brake: number;
  steer: number;
}

/** Device state to control channels; always inside the policy bounds. */
export function mapInput(device: DeviceState): MappedControl {
  let values: ChannelValues;
  if (device.kind === "gamepad" && device.gamepad) {
    values = mapGamepad(device.gamepad);
  } else if (device.keyboard) {
    values = device.keyboard;
  } else {
    values = { throttle: 0, brake: 0, steer: 0 };
  }
  const steer = device.invertSteer ? -values.steer : values.steer;
  return {
    throttle: clamp(values.throttle, 0, THROTTLE_MAX),
    brake: clamp(values.brake, 0, 1),
    steer: clamp(steer, -1, 1),
  };
}

/** The one-shot failsafe frame emitted when the device drops mid-takeover. */
export function disconnectFailsafe(): MappedControl {
  return { throttle: 0, brake: 1, steer: 0 };
}
