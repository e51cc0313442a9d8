"""Swarm configuration and its TOML representation.

Every section of the file mirrors one dataclass below; unknown keys are an
error. Environment variables ``LANDLOC__<SECTION>__<KEY>`` override file
values, e.g. ``LANDLOC__SWARM__MISSION_DRONES=8``.
"""

from __future__ import annotations

import dataclasses
import enum
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .estimator import EkfConfig
from .sim import ChannelModel
from .vehicle import TrajectoryRef, VehicleParams

ENV_PREFIX = "LANDLOC__"


class ScenarioKind(str, enum.Enum):
    IDEAL_LANDING = "ideal_landing"
    AUTOMATIC_LANDING = "automatic_landing"
    SELF_LOCALIZING = "self_localizing"


@dataclass(frozen=True)
class AslConfig:
    dt: float = 0.004
    n_meas: int = 100
    retry_budget: int = 10
    # how many of AD0, AD1, ... anchor the relative frame to the mission frame
    align_anchors: int = 2
    settle: float = 0.5     # s of hovering before ranging starts


@dataclass(frozen=True)
class PowerModel:
    rx_power: float = 0.357
    tx_power: float = 0.120
    idle_power: float = 0.010

    def __post_init__(self):
        if not self.rx_power > self.tx_power > self.idle_power >= 0:
            raise ValueError("power model needs rx > tx > idle >= 0")


@dataclass(frozen=True)
class SwarmConfig:
    mission_drones: int = 4
    target_landings: Tuple[Tuple[float, float], ...] = ((-2.0, 2.0), (2.0, -2.0), (2.0, 2.0), (-2.0, -2.0))
    takeoff_positions: Tuple[Tuple[float, float], ...] = ((-1.0, 0.0), (1.0, 0.0), (0.0, 1.0), (0.0, -1.0))
    anchor_height: float = 0.5      # m, AD cruise altitude
    slot: float = 0.003             # s, one MD-AD DS-TWR exchange
    odometry_rate: float = 100.0    # Hz
    sample_period: float = 0.01     # s, log grid
    md_settle: float = 0.5          # s, hover between MD take-off and mission start
    md_init_sigma: float = 0.0      # m, error of the MD estimator's initial position
    trim_fraction: float = 0.1
    seed: int = 0
    trajectory: TrajectoryRef = field(default_factory=TrajectoryRef)
    channel: ChannelModel = field(default_factory=ChannelModel)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    ekf: EkfConfig = field(default_factory=EkfConfig)
    asl: AslConfig = field(default_factory=AslConfig)
    power: PowerModel = field(default_factory=PowerModel)

    def __post_init__(self):
        object.__setattr__(self, "target_landings", tuple(tuple(map(float, p)) for p in self.target_landings))
        object.__setattr__(self, "takeoff_positions", tuple(tuple(map(float, p)) for p in self.takeoff_positions))
        if self.anchors < 3:
            raise ValueError("at least 3 anchor drones are required")
        if self.mission_drones < 1:
            raise ValueError("at least 1 mission drone is required")
        if len(self.takeoff_positions) != self.anchors:
            raise ValueError("takeoff_positions and target_landings must have the same length")
        if self.anchors + self.mission_drones > 256:
            raise ValueError("node ids are one byte")
        if not 0 <= self.trim_fraction < 0.5:
            raise ValueError("trim_fraction must be in [0, 0.5)")
        if not 2 <= self.asl.align_anchors <= self.anchors:
            raise ValueError("asl.align_anchors must be between 2 and the number of anchors")

    @property
    def anchors(self) -> int:
        return len(self.target_landings)

    def with_overrides(self, **kw) -> "SwarmConfig":
        return replace(self, **kw)


# --- TOML mapping ------------------------------------------------------------

_SECTIONS = {
    "trajectory": TrajectoryRef,
    "channel": ChannelModel,
    "vehicle": VehicleParams,
    "ekf": EkfConfig,
    "asl": AslConfig,
    "power": PowerModel,
}


class ConfigError(ValueError):
    pass


def _coerce(value: Any, current: Any, where: str):
    if isinstance(current, bool):
        if isinstance(value, str):
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if isinstance(current, int):
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                raise ConfigError(f"{where}: expected an integer, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"{where}: expected a number, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(current, tuple):
        if isinstance(value, str):
            try:
                value = tomllib.loads(f"v = {value}")["v"]
            except tomllib.TOMLDecodeError:
                raise ConfigError(f"{where}: expected an array, got {value!r}") from None
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected an array, got {value!r}")
        try:
            if current and isinstance(current[0], tuple) or (value and isinstance(value[0], (list, tuple))):
                return tuple(tuple(float(c) for c in p) for p in value)
            return tuple(float(c) for c in value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: malformed array {value!r}") from None
    return value


def _apply(obj, values: Mapping[str, Any], section: str):
    known = {f.name: f for f in fields(obj)}
    changes = {}
    for key, value in values.items():
        where = f"[{section}] {key}" if section else key
        if key not in known or dataclasses.is_dataclass(getattr(obj, key)):
            raise ConfigError(f"{where}: unknown field")
        changes[key] = _coerce(value, getattr(obj, key), where)
    try:
        return replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section or 'swarm'}] {exc}") from None


def config_from_mapping(data: Mapping[str, Any], base: Optional[SwarmConfig] = None) -> SwarmConfig:
    cfg = base or SwarmConfig()
    data = dict(data)
    data.pop("run", None)
    top = dict(data.pop("swarm", {}))
    nested = {}
    for name, section in data.items():
        if name not in _SECTIONS:
            raise ConfigError(f"[{name}]: unknown section")
        if not isinstance(section, Mapping):
            raise ConfigError(f"[{name}]: expected a table")
        nested[name] = _apply(getattr(cfg, name), section, name)
    try:
        cfg = replace(cfg, **nested)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return _apply(cfg, top, "swarm")


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Dict[str, str]]:
    environ = os.environ if environ is None else environ
    out: Dict[str, Dict[str, str]] = {}
    for key, value in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        parts = key[len(ENV_PREFIX):].lower().split("__")
        if len(parts) != 2:
            raise ConfigError(f"{key}: expected {ENV_PREFIX}<SECTION>__<KEY>")
        out.setdefault(parts[0], {})[parts[1]] = value
    return out


def read_toml(path) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: config file not found")
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path, environ: Optional[Mapping[str, str]] = None) -> SwarmConfig:
    data = read_toml(path)
    try:
        cfg = config_from_mapping(data)
        overrides = {k: v for k, v in env_overrides(environ).items() if k != "run"}
        if overrides:
            cfg = config_from_mapping(overrides, base=cfg)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return cfg


def config_to_dict(cfg: SwarmConfig) -> Dict[str, Any]:
    """Plain-data snapshot, in the same shape the TOML loader accepts."""
    out: Dict[str, Any] = {"swarm": {}}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            out[f.name] = {
                g.name: _plain(getattr(value, g.name)) for g in fields(value)
            }
        else:
            out["swarm"][f.name] = _plain(value)
    return out


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, enum.Enum):
        return value.value
    return value
