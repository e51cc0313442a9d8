"""Planar range-only EKF.

State ``[px, py, vx, vy]``. Velocity comes straight from optical flow and
position is dead-reckoned from it; UWB ranges to anchors at known (believed)
coordinates correct the position. Altitude is passed through from the
altitude sensor and only enters the range model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence

import numpy as np

from .vehicle import OdometrySample


class DegenerateGeometry(ValueError):
    pass


@dataclass(frozen=True)
class EkfConfig:
    flow_sigma: float = 0.05        # m/s, odometry velocity noise
    process_noise: float = 0.5      # m^2/s, additional position random walk (calibrated)
    range_sigma: float = 0.10       # m
    gate: float = 3.0               # standard deviations; <= 0 disables gating
    min_range: float = 1e-6         # m
    init_sigma: float = 0.01        # m, initial position uncertainty
    # after this many consecutive rejections of one anchor its next range is
    # applied ungated, so a gate lock-out cannot silently drop anchors (0: off)
    gate_reset: int = 10


@dataclass(frozen=True)
class EkfState:
    x: np.ndarray
    P: np.ndarray
    pz: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x[0], self.x[1], self.pz])


def initial_state(position: Sequence[float], cfg: EkfConfig = EkfConfig()) -> EkfState:
    p = np.asarray(position, dtype=float)
    x = np.array([p[0], p[1], 0.0, 0.0])
    P = np.diag([cfg.init_sigma ** 2, cfg.init_sigma ** 2, cfg.flow_sigma ** 2, cfg.flow_sigma ** 2])
    return EkfState(x, P, float(p[2]) if p.size > 2 else 0.0)


def predict(state: EkfState, odom: OdometrySample, dt: float,
            cfg: EkfConfig = EkfConfig()) -> EkfState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    v = np.asarray(odom.velocity, dtype=float)
    x = np.empty(4)
    x[:2] = state.x[:2] + v * dt
    x[2:] = v
    P = state.P
    # F = [[I, 0], [0, 0]]; input Jacobian G = [dt*I; I]
    Ppp = P[:2, :2]
    su2 = cfg.flow_sigma ** 2
    Pn = np.zeros((4, 4))
    q = cfg.process_noise * dt
    Pn[:2, :2] = Ppp + (su2 * dt * dt + q) * np.eye(2)
    Pn[:2, 2:] = su2 * dt * np.eye(2)
    Pn[2:, :2] = Pn[:2, 2:]
    Pn[2:, 2:] = su2 * np.eye(2)
    return EkfState(x, Pn, float(odom.altitude))


def _range_model(state: EkfState, anchor, eps: float):
    a = np.asarray(anchor, dtype=float)
    dx = state.x[0] - a[0]
    dy = state.x[1] - a[1]
    dz = state.pz - (a[2] if a.size > 2 else 0.0)
    h = math.sqrt(dx * dx + dy * dy + dz * dz)
    if h < eps:
        raise DegenerateGeometry(f"predicted range {h:.3g} m below {eps:g} m")
    H = np.array([dx / h, dy / h, 0.0, 0.0])
    return h, H


def innovation_gate(state: EkfState, anchor, measured: float, sigma_r: float,
                    gate: float = 3.0, eps: float = 1e-6) -> bool:
    """True iff the normalised squared innovation is within ``gate**2``."""
    h, H = _range_model(state, anchor, eps)
    S = float(H @ state.P @ H) + sigma_r * sigma_r
    y = measured - h
    return y * y <= gate * gate * S


def update_range(state: EkfState, anchor, measured: float, sigma_r: float,
                 eps: float = 1e-6) -> EkfState:
    if sigma_r <= 0:
        raise ValueError("sigma_r must be positive")
    h, H = _range_model(state, anchor, eps)
    P = state.P
    PH = P @ H
    S = float(H @ PH) + sigma_r * sigma_r
    K = PH / S
    x = state.x + K * (measured - h)
    IKH = np.eye(4) - np.outer(K, H)
    Pn = IKH @ P @ IKH.T + (sigma_r * sigma_r) * np.outer(K, K)
    Pn = 0.5 * (Pn + Pn.T)
    return EkfState(x, Pn, state.pz)


class RangeEkf:
    """Stateful wrapper used by the simulation: keeps the last odometry so
    range updates can be applied at arbitrary instants between samples."""

    def __init__(self, position, t: float, cfg: EkfConfig = EkfConfig()):
        self.cfg = cfg
        self.state = initial_state(position, cfg)
        self.t = t
        self._last_odom: Optional[OdometrySample] = None
        self.accepted = 0
        self.rejected = 0
        self.degenerate = 0
        self.forced = 0
        self._streak: Dict[tuple, int] = {}

    @property
    def position(self) -> np.ndarray:
        return self.state.position

    def reset(self, position, t: float):
        self.state = initial_state(position, self.cfg)
        self.t = t

    def propagate(self, t: float, odom: Optional[OdometrySample] = None):
        """Dead-reckon to ``t`` with the most recent odometry, then adopt ``odom``."""
        if t > self.t and self._last_odom is not None:
            self.state = predict(self.state, self._last_odom, t - self.t, self.cfg)
        if t > self.t:
            self.t = t
        if odom is not None:
            self._last_odom = odom
            self.state = replace(self.state, pz=float(odom.altitude))

    def range_update(self, t: float, anchor, measured: float) -> bool:
        self.propagate(t)
        cfg = self.cfg
        key = tuple(float(c) for c in np.asarray(anchor, dtype=float).ravel())
        streak = self._streak.get(key, 0)
        try:
            gated = cfg.gate > 0 and not (0 < cfg.gate_reset <= streak)
            if gated and not innovation_gate(self.state, anchor, measured,
                                             cfg.range_sigma, cfg.gate, cfg.min_range):
                self.rejected += 1
                self._streak[key] = streak + 1
                return False
            self.state = update_range(self.state, anchor, measured, cfg.range_sigma, cfg.min_range)
        except DegenerateGeometry:
            self.degenerate += 1
            return False
        if cfg.gate > 0 and not gated:
            self.forced += 1
        self._streak[key] = 0
        self.accepted += 1
        return True
