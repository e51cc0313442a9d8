"""Point-mass drone model: flight modes, velocity-lag plant, sensors, controllers."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np


class FlightMode(str, enum.Enum):
    GROUNDED = "grounded"
    TAKING_OFF = "taking_off"
    HOVERING = "hovering"
    FLYING = "flying"
    LANDING = "landing"
    LANDED = "landed"


class DroneRole(str, enum.Enum):
    ANCHOR = "AD"
    MISSION = "MD"


_TRANSITIONS = {
    FlightMode.GROUNDED: {FlightMode.TAKING_OFF},
    FlightMode.TAKING_OFF: {FlightMode.HOVERING, FlightMode.FLYING},
    FlightMode.HOVERING: {FlightMode.FLYING, FlightMode.LANDING},
    FlightMode.FLYING: {FlightMode.HOVERING, FlightMode.LANDING},
    FlightMode.LANDING: {FlightMode.LANDED},
    FlightMode.LANDED: set(),
}

AIRBORNE = {FlightMode.TAKING_OFF, FlightMode.HOVERING, FlightMode.FLYING, FlightMode.LANDING}


class InvalidTransition(RuntimeError):
    pass


@dataclass(frozen=True)
class VehicleParams:
    velocity_lag: float = 0.3       # s
    max_speed: float = 1.5          # m/s, horizontal
    climb_rate: float = 0.5         # m/s, take-off and landing
    tracking_gain: float = 1.5      # 1/s
    cruise_speed: float = 0.5       # m/s, point-to-point flights
    arrival_radius: float = 0.10    # m, est. distance at which a flight ends
    flow_sigma: float = 0.05        # m/s per axis, white, at the odometry rate
    flow_bias_sigma: float = 0.028  # m/s per axis, constant over one flight (calibrated)
    # share of the bias variance common to every drone of a run (same floor, same optics)
    flow_bias_correlation: float = 0.9
    gust_sigma: float = 0.12        # m/s per axis, stationary std of the velocity disturbance
    gust_tau: float = 1.0           # s, disturbance correlation time
    altitude_sigma: float = 0.01    # m
    landing_sigma: float = 0.05     # m per horizontal axis
    takeoff_sigma: float = 0.0      # m per horizontal axis

    def __post_init__(self):
        if not 0.0 <= self.flow_bias_correlation <= 1.0:
            raise ValueError("flow_bias_correlation must be in [0, 1]")
        if self.gust_sigma < 0 or self.gust_tau <= 0:
            raise ValueError("gust_sigma must be >= 0 and gust_tau > 0")


@dataclass(frozen=True)
class DroneState:
    position: np.ndarray
    velocity: np.ndarray
    mode: FlightMode = FlightMode.GROUNDED
    role: DroneRole = DroneRole.MISSION

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(3))
        if self.position[2] < 0:
            raise ValueError("altitude below ground")

    @property
    def airborne(self) -> bool:
        return self.mode in AIRBORNE

    def with_mode(self, mode: FlightMode) -> "DroneState":
        mode = FlightMode(mode)
        if mode is self.mode:
            return self
        if mode not in _TRANSITIONS[self.mode]:
            raise InvalidTransition(f"{self.mode.value} -> {mode.value}")
        return replace(self, mode=mode)

    def reset(self) -> "DroneState":
        """Put a landed (or any) drone back on the ground, ready to fly again."""
        pos = self.position.copy()
        pos[2] = 0.0
        return DroneState(pos, np.zeros(3), FlightMode.GROUNDED, self.role)


@dataclass(frozen=True)
class OdometrySample:
    velocity: np.ndarray   # (vx, vy)
    altitude: float


@dataclass(frozen=True)
class TrajectoryRef:
    center: Tuple[float, float] = (0.0, 0.0)
    radius: float = 1.5
    speed: float = 0.95
    height: float = 0.8
    duration: float = 30.0
    phase: float = 0.0

    def __post_init__(self):
        if self.radius <= 0 or self.speed <= 0:
            raise ValueError("radius and speed must be positive")

    @property
    def angular_rate(self) -> float:
        return self.speed / self.radius

    def angle(self, t):
        return self.phase + self.angular_rate * np.asarray(t, dtype=float)

    def point(self, t) -> np.ndarray:
        th = self.angle(t)
        c = np.asarray(self.center, dtype=float)
        return np.stack([c[0] + self.radius * np.cos(th), c[1] + self.radius * np.sin(th)], axis=-1)

    def tangent_velocity(self, t) -> np.ndarray:
        th = self.angle(t)
        return self.speed * np.stack([-np.sin(th), np.cos(th)], axis=-1)

    def with_phase(self, phase: float) -> "TrajectoryRef":
        return replace(self, phase=phase)


def _clamp_norm(v: np.ndarray, limit: float) -> np.ndarray:
    n = math.hypot(v[0], v[1])
    if n > limit:
        return v * (limit / n)
    return v


def step_dynamics(state: DroneState, cmd_velocity, dt: float,
                  params: VehicleParams = VehicleParams(), disturbance=None) -> DroneState:
    """Advance the plant by ``dt``.

    Horizontal velocity follows the command through a first-order lag; the
    vertical command is applied directly. Position uses explicit Euler with
    the velocity at the start of the step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not state.airborne:
        return replace(state, velocity=np.zeros(3))
    cmd = np.zeros(3)
    c = np.asarray(cmd_velocity, dtype=float)
    cmd[: c.size] = c
    cmd[:2] = _clamp_norm(cmd[:2], params.max_speed)
    if disturbance is not None:
        # the attitude loop tracks command plus gust
        cmd[:2] += np.asarray(disturbance, dtype=float)[:2]
    alpha = 1.0 - math.exp(-dt / params.velocity_lag)
    v_old = state.velocity
    v_new = v_old.copy()
    v_new[:2] = v_old[:2] + alpha * (cmd[:2] - v_old[:2])
    v_new[2] = cmd[2]
    pos = state.position + v_old * dt
    if pos[2] < 0:
        pos[2] = 0.0
    return replace(state, position=pos, velocity=v_new)


def sense_odometry(state: DroneState, rng: np.random.Generator,
                   params: VehicleParams = VehicleParams(),
                   bias: Sequence[float] = (0.0, 0.0)) -> OdometrySample:
    """Optical-flow velocity and range-sensor altitude with additive noise."""
    v = state.velocity[:2] + np.asarray(bias, dtype=float)
    if params.flow_sigma > 0:
        v = v + rng.normal(0.0, params.flow_sigma, 2)
    z = state.position[2]
    if params.altitude_sigma > 0:
        z = z + rng.normal(0.0, params.altitude_sigma)
    return OdometrySample(velocity=v, altitude=max(float(z), 0.0))


def track_trajectory(est_position, ref: TrajectoryRef, t: float,
                     params: VehicleParams = VehicleParams()) -> np.ndarray:
    """Horizontal velocity command for following ``ref`` at trajectory time ``t``.

    The tangential feed-forward is taken one velocity-lag ahead so that the
    lag of the plant does not inflate the flown radius.
    """
    est = np.asarray(est_position, dtype=float)[:2]
    ff = ref.tangent_velocity(t + params.velocity_lag)
    return ff + params.tracking_gain * (ref.point(t) - est)


def goto_command(est_position, target, params: VehicleParams = VehicleParams()) -> np.ndarray:
    """Proportional point-to-point command, saturated at cruise speed."""
    err = np.asarray(target, dtype=float)[:2] - np.asarray(est_position, dtype=float)[:2]
    return _clamp_norm(params.tracking_gain * err, params.cruise_speed)


def land(state: DroneState, rng: np.random.Generator,
         params: VehicleParams = VehicleParams()) -> DroneState:
    """Touch down: altitude to zero, horizontal position bounced by Gaussian noise."""
    if state.mode is not FlightMode.LANDING:
        raise InvalidTransition(f"land() requires LANDING, drone is {state.mode.value}")
    pos = state.position.copy()
    pos[2] = 0.0
    if params.landing_sigma > 0:
        pos[:2] += rng.normal(0.0, params.landing_sigma, 2)
    return DroneState(pos, np.zeros(3), FlightMode.LANDED, state.role)


def take_off(state: DroneState, rng: np.random.Generator,
             params: VehicleParams = VehicleParams()) -> DroneState:
    state = state.with_mode(FlightMode.TAKING_OFF)
    if params.takeoff_sigma > 0:
        pos = state.position.copy()
        pos[:2] += rng.normal(0.0, params.takeoff_sigma, 2)
        state = replace(state, position=pos)
    return state


def draw_flow_bias(rng: np.random.Generator, params: VehicleParams = VehicleParams(),
                   common=None) -> np.ndarray:
    """Per-flight constant flow bias.

    ``common`` is a unit-variance 2-vector shared by the drones of one run;
    it carries ``flow_bias_correlation`` of the variance.
    """
    if params.flow_bias_sigma <= 0:
        return np.zeros(2)
    own = rng.normal(0.0, 1.0, 2)
    rho = params.flow_bias_correlation
    if common is None or rho <= 0:
        return params.flow_bias_sigma * own
    return params.flow_bias_sigma * (math.sqrt(rho) * np.asarray(common) + math.sqrt(1.0 - rho) * own)


class Gust:
    """Ornstein-Uhlenbeck horizontal velocity disturbance."""

    def __init__(self, rng: np.random.Generator, params: VehicleParams = VehicleParams()):
        self.rng = rng
        self.sigma = params.gust_sigma
        self.tau = params.gust_tau
        self.value = rng.normal(0.0, self.sigma, 2) if self.sigma > 0 else np.zeros(2)

    def step(self, dt: float) -> np.ndarray:
        if self.sigma > 0 and dt > 0:
            a = math.exp(-dt / self.tau)
            self.value = a * self.value + self.sigma * math.sqrt(1.0 - a * a) * self.rng.normal(0.0, 1.0, 2)
        return self.value
