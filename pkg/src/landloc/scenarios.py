"""End-to-end runs of the three anchor deployment designs.

Timeline of a run:

1. anchor deployment (depends on the scenario, see :func:`deploy_anchors`);
2. once every anchor has landed, mission drones take off from their start
   points on the reference circle and ranging rounds begin;
3. after the MDs settle, they fly the circle for ``trajectory.duration``
   seconds. Metrics are evaluated on this window.

Ranging rounds: AD ``i`` ranges with MD ``j`` in slot ``j * M + i`` of a
round lasting ``N * M`` slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import codec
from .asl import AslProcess, AslResult, acquisition_schedule, align_to_mission_frame
from .config import ScenarioKind, SwarmConfig
from .estimator import RangeEkf
from .sim import MS, NS, Channel, RadioLog, RadioState, RangingFailed, Simulator, seconds, to_ns
from .uwb_node import Medium, UwbNode, four_way_ranging
from .vehicle import (
    DroneRole,
    DroneState,
    FlightMode,
    TrajectoryRef,
    Gust,
    draw_flow_bias,
    goto_command,
    land,
    sense_odometry,
    step_dynamics,
    take_off,
    track_trajectory,
)

# rng stream identifiers; deployment streams do not depend on N
_STREAM_AD = 1
_STREAM_MD = 2
_STREAM_ASL_CHANNEL = 3
_STREAM_MD_CHANNEL = 4
_STREAM_GUST = 5
_STREAM_COMMON_BIAS = 6


class ScenarioError(RuntimeError):
    def __init__(self, phase: str, cause: Exception):
        super().__init__(f"{phase}: {cause}")
        self.phase = phase
        self.cause = cause


def stream(seed: int, kind: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, kind, index])


@dataclass
class LandingRecord:
    index: int
    node_id: int
    target: Tuple[float, float]
    believed: Tuple[float, float]
    actual: Tuple[float, float]
    landed_at: float

    @property
    def error(self) -> float:
        return math.dist(self.believed, self.actual)


@dataclass
class Event:
    t: int
    node: int
    kind: str
    detail: str = ""


@dataclass
class DroneSeries:
    drone_id: int
    role: DroneRole
    t: List[float] = field(default_factory=list)
    true: List[Tuple[float, float, float]] = field(default_factory=list)
    est: List[Tuple[float, float]] = field(default_factory=list)

    def arrays(self):
        return np.asarray(self.t), np.asarray(self.true).reshape(-1, 3), np.asarray(self.est).reshape(-1, 2)


@dataclass
class ExperimentLog:
    scenario: ScenarioKind
    config: SwarmConfig
    series: Dict[int, DroneSeries]
    landings: List[LandingRecord]
    events: List[Event]
    radio_log: RadioLog
    slots: List[Tuple[int, int, int, int, bool]]   # (start, end, ad, md, ok)
    mission_start: int                           # ns, circle flight begins
    mission_end: int
    ranging_start: int
    round_period: int                            # ns
    references: Dict[int, TrajectoryRef]         # MD id -> its circle
    asl: Optional[AslResult] = None
    ekf_stats: Dict[int, Dict[str, int]] = field(default_factory=dict)

    @property
    def anchor_ids(self) -> List[int]:
        return [d for d, s in sorted(self.series.items()) if s.role is DroneRole.ANCHOR]

    @property
    def mission_ids(self) -> List[int]:
        return [d for d, s in sorted(self.series.items()) if s.role is DroneRole.MISSION]

    def window(self, drone_id: int):
        """(t, true xyz, est xy) restricted to the circle-flight window."""
        t, tru, est = self.series[drone_id].arrays()
        lo, hi = seconds(self.mission_start), seconds(self.mission_end)
        sel = (t >= lo - 1e-12) & (t < hi - 1e-12)
        return t[sel], tru[sel], est[sel]


class Drone:
    """Simulation entity: true state, onboard estimator and mode logic."""

    def __init__(self, index: int, node_id: int, role: DroneRole, position, cfg: SwarmConfig,
                 rng: np.random.Generator, common_bias=None):
        self.index = index
        self.node_id = node_id
        self.role = role
        self.cfg = cfg
        self.params = cfg.vehicle
        self.rng = rng
        self.common_bias = common_bias
        self.gust = Gust(stream(cfg.seed, _STREAM_GUST, node_id), cfg.vehicle)
        self.state = DroneState(position, np.zeros(3), FlightMode.GROUNDED, role)
        self.t = 0                       # ns, time of self.state
        self.cmd = np.zeros(3)
        self.bias = np.zeros(2)
        self.ekf: Optional[RangeEkf] = None
        self.goal: Optional[np.ndarray] = None
        self.height = 0.0
        self.behaviour: Callable[["Drone", int], None] = lambda d, t: None
        self.node = UwbNode(node_id)

    def position_at(self, t: int) -> np.ndarray:
        dt = (t - self.t) / NS
        if dt == 0 or not self.state.airborne:
            return self.state.position
        return self.state.position + self.state.velocity * dt

    @property
    def estimate(self) -> np.ndarray:
        if self.ekf is None:
            return self.state.position.copy()
        return self.ekf.position

    def start_estimator(self, position, t: int):
        self.ekf = RangeEkf(position, seconds(t), self.cfg.ekf)

    def launch(self, t: int, height: float):
        self.bias = draw_flow_bias(self.rng, self.params, self.common_bias)
        self.state = take_off(self.state, self.rng, self.params)
        self.height = height
        if self.goal is None:
            self.goal = self.estimate[:2].copy()

    def advance(self, t: int):
        if t > self.t and self.state.airborne:
            dt = (t - self.t) / NS
            self.state = step_dynamics(self.state, self.cmd, dt, self.params, self.gust.step(dt))
            if self.state.mode is FlightMode.LANDING and self.state.position[2] <= 0.0:
                self.state = land(self.state, self.rng, self.params)
                self.cmd = np.zeros(3)
                self.on_landed(t)
        self.t = t

    def on_landed(self, t: int):
        pass

    def sense(self, t: int):
        if self.ekf is None:
            return
        if self.state.airborne:
            odom = sense_odometry(self.state, self.rng, self.params, self.bias)
        else:
            odom = None
        self.ekf.propagate(seconds(t), odom)

    def hold(self, goal_xy, vz: float = 0.0):
        self.cmd = np.zeros(3)
        self.cmd[:2] = goto_command(self.estimate, goal_xy, self.params)
        self.cmd[2] = vz

    def vertical_phase(self) -> bool:
        """Handle take-off and landing; returns True while either is active."""
        st = self.state
        climb = self.params.climb_rate
        if st.mode is FlightMode.TAKING_OFF:
            est_z = self.ekf.state.pz if self.ekf is not None else st.position[2]
            if est_z >= self.height:
                self.state = st.with_mode(FlightMode.HOVERING)
                self.hold(self.goal)
                return False
            self.hold(self.goal, climb)
            return True
        if st.mode is FlightMode.LANDING:
            self.hold(self.goal, -climb)
            return True
        return False


class _Run:
    def __init__(self, kind: ScenarioKind, cfg: SwarmConfig):
        self.kind = ScenarioKind(kind)
        self.cfg = cfg
        self.sim = Simulator()
        self.radio_log = RadioLog()
        self.channel = Channel(self.sim, cfg.channel, radio_log=self.radio_log)
        self.medium = Medium()
        self.events: List[Event] = []
        self.tick_ns = to_ns(1.0 / cfg.odometry_rate)
        self.sample_ns = to_ns(cfg.sample_period)
        self.slot_ns = to_ns(cfg.slot)
        m, n = cfg.anchors, cfg.mission_drones
        common = stream(cfg.seed, _STREAM_COMMON_BIAS).normal(0.0, 1.0, 2)
        self.anchors: List[Drone] = []
        for i in range(m):
            start = cfg.target_landings[i] if self.kind is ScenarioKind.IDEAL_LANDING else cfg.takeoff_positions[i]
            d = Drone(i, i, DroneRole.ANCHOR, (*start, 0.0), cfg, stream(cfg.seed, _STREAM_AD, i), common)
            self.anchors.append(d)
        self.references: Dict[int, TrajectoryRef] = {}
        self.missions: List[Drone] = []
        for j in range(n):
            ref = cfg.trajectory.with_phase(cfg.trajectory.phase + 2 * math.pi * j / n)
            start = ref.point(0.0)
            d = Drone(j, m + j, DroneRole.MISSION, (start[0], start[1], 0.0), cfg,
                      stream(cfg.seed, _STREAM_MD, j), common)
            self.references[d.node_id] = ref
            self.missions.append(d)
        for d in self.anchors + self.missions:
            self.channel.register(d.node_id, d.position_at)
            self.medium.attach(d.node)
        self.series = {d.node_id: DroneSeries(d.node_id, d.role) for d in self.anchors + self.missions}
        self.landings: Dict[int, LandingRecord] = {}
        self.believed: Dict[int, np.ndarray] = {}
        self.slots: List[Tuple[int, int, int, int, bool]] = []
        self.asl_result: Optional[AslResult] = None
        self.failure: Optional[ScenarioError] = None
        self.deployed_at: Optional[int] = None
        self.mission_start = None
        self.mission_end = None
        self.ranging_start = None
        self.md_channel_rng = stream(cfg.seed, _STREAM_MD_CHANNEL)
        self.round_period = n * m * self.slot_ns

    # -- bookkeeping --------------------------------------------------------

    def trace(self, t: int, node: int, kind: str, detail: str = ""):
        self.events.append(Event(int(t), int(node), kind, detail))

    def fail(self, phase: str, exc: Exception):
        if self.failure is None:
            self.failure = ScenarioError(phase, exc)

    def _tick(self):
        t = self.sim.now
        for d in self.active:
            d.advance(t)
        if t % self.sample_ns == 0:
            for d in self.anchors + self.missions:
                p = d.position_at(t)
                e = d.estimate
                s = self.series[d.node_id]
                s.t.append(seconds(t))
                s.true.append((float(p[0]), float(p[1]), float(p[2])))
                s.est.append((float(e[0]), float(e[1])))
        for d in self.active:
            d.sense(t)
            d.behaviour(d, t)
        if self.failure is None and (self.mission_end is None or t < self.mission_end):
            self.sim.schedule(t + self.tick_ns, self._tick)

    @property
    def active(self) -> List[Drone]:
        return [d for d in self.anchors + self.missions if d.state.airborne]

    # -- anchor deployment ----------------------------------------------------

    def _record_landing(self, d: Drone, t: int, believed):
        p = d.state.position
        rec = LandingRecord(d.index, d.node_id, tuple(self.cfg.target_landings[d.index]),
                            (float(believed[0]), float(believed[1])), (float(p[0]), float(p[1])),
                            seconds(t))
        self.landings[d.index] = rec
        self.believed[d.index] = np.array([believed[0], believed[1], 0.0])
        self.trace(t, d.node_id, "landed", f"error_m={rec.error:.6f}")
        if len(self.landings) == len(self.anchors):
            self._deployed(t)

    def _fly_to_target(self, d: Drone, t: int):
        d.goal = np.asarray(self.cfg.target_landings[d.index], dtype=float)
        d.state = d.state.with_mode(FlightMode.FLYING)
        self.trace(t, d.node_id, "fly_to_target")

    def _anchor_behaviour(self, d: Drone, t: int):
        if d.vertical_phase():
            return
        st = d.state
        if st.mode is FlightMode.HOVERING:
            if self.kind is ScenarioKind.AUTOMATIC_LANDING:
                self._fly_to_target(d, t)
            else:
                d.hold(d.goal)
                if all(a.state.mode is FlightMode.HOVERING for a in self.anchors) and not self._asl_started:
                    self._start_asl(t)
                return
        if d.state.mode is FlightMode.FLYING:
            est = d.estimate
            if math.dist(est[:2], d.goal) <= d.params.arrival_radius:
                d.state = d.state.with_mode(FlightMode.LANDING)
                d.hold(d.goal, -d.params.climb_rate)
                self.trace(t, d.node_id, "landing")
            else:
                d.hold(d.goal)

    def _deploy_ideal(self):
        for d in self.anchors:
            target = self.cfg.target_landings[d.index]
            d.state = DroneState((*target, 0.0), np.zeros(3), FlightMode.LANDED, DroneRole.ANCHOR)
            d.goal = np.asarray(target)
            self._record_landing(d, 0, target)

    def _deploy_flying(self):
        cfg = self.cfg
        self._asl_started = False
        for d in self.anchors:
            if self.kind is ScenarioKind.AUTOMATIC_LANDING:
                d.start_estimator((*cfg.takeoff_positions[d.index], 0.0), 0)
            else:
                # only a local frame centred on the take-off spot is known
                d.start_estimator((0.0, 0.0, 0.0), 0)
            d.behaviour = self._anchor_behaviour
            d.on_landed = (lambda t, d=d: self._record_landing(d, t, d.estimate))
            d.goal = None
            d.launch(0, cfg.anchor_height)
            self.trace(0, d.node_id, "takeoff")

    def _start_asl(self, t: int):
        self._asl_started = True
        cfg = self.cfg
        sch = acquisition_schedule(cfg.anchors, cfg.asl.dt, cfg.asl.n_meas)
        start = t + to_ns(cfg.asl.settle)
        self.asl_proc = AslProcess(self.channel, self.medium, [a.node for a in self.anchors], sch,
                                   stream(cfg.seed, _STREAM_ASL_CHANNEL),
                                   retry_budget=cfg.asl.retry_budget,
                                   on_done=self._asl_done,
                                   on_error=lambda exc: self.fail("asl", exc),
                                   trace=self.trace)
        self.sim.schedule(start, self.asl_proc.start)

    def _asl_done(self, result: AslResult):
        cfg = self.cfg
        self.asl_result = result
        t = self.sim.now
        k = cfg.asl.align_anchors
        for d in self.anchors:
            held = result.coordinates[d.index]
            transform = align_to_mission_frame(held, cfg.takeoff_positions[:k], indices=range(k))
            believed = transform.apply(held[d.index])
            d.ekf.reset((believed[0], believed[1], d.ekf.state.pz), seconds(t))
            self._fly_to_target(d, t)

    def _deployed(self, t: int):
        self.deployed_at = t
        self.trace(t, self.anchors[0].node_id, "anchors_deployed")
        start = t - t % self.tick_ns + self.tick_ns if t % self.tick_ns else t
        self.sim.schedule(start, self._start_mission)

    # -- mission --------------------------------------------------------------

    def _start_mission(self):
        t = self.sim.now
        cfg = self.cfg
        climb_ns = to_ns(cfg.trajectory.height / cfg.vehicle.climb_rate)
        mission_start = t + climb_ns + to_ns(cfg.md_settle) + self.tick_ns
        mission_start += (-mission_start) % self.tick_ns
        self.mission_start = mission_start
        self.mission_end = mission_start + to_ns(cfg.trajectory.duration)
        for d in self.missions:
            init = d.state.position.copy()
            if cfg.md_init_sigma > 0:
                init[:2] += d.rng.normal(0.0, cfg.md_init_sigma, 2)
            d.start_estimator(init, t)
            d.behaviour = self._mission_behaviour
            d.launch(t, cfg.trajectory.height)
            self.radio_log.set_background(d.node_id, RadioState.RX, t)
            self.trace(t, d.node_id, "takeoff")
        self.ranging_start = t
        self.sim.schedule(t, self._round, 0)
        if not self._ticking:
            self._ticking = True
            self.sim.schedule(t, self._tick)
        self.sim.schedule(self.mission_end, self._finish)

    def _mission_behaviour(self, d: Drone, t: int):
        if d.vertical_phase():
            return
        ref = self.references[d.node_id]
        if t < self.mission_start:
            d.hold(d.goal)
            return
        if d.state.mode is FlightMode.HOVERING:
            d.state = d.state.with_mode(FlightMode.FLYING)
        cmd = track_trajectory(d.estimate, ref, seconds(t - self.mission_start), d.params)
        d.cmd = np.array([cmd[0], cmd[1], 0.0])

    def _round(self, k: int):
        t = self.sim.now
        if t >= self.mission_end:
            return
        m = self.cfg.anchors
        self.trace(t, self.anchors[0].node_id, "round_start", f"round={k}")
        # every AD derives its own slots from the round start
        for ad in self.anchors:
            for j, md in enumerate(self.missions):
                self.sim.schedule(t + (j * m + ad.index) * self.slot_ns, self._slot, ad, md, k)
        self.sim.schedule(t + self.round_period, self._round, k + 1)

    def _slot(self, ad: Drone, md: Drone, k: int):
        t = self.sim.now
        coords = self.believed[ad.index]
        try:
            meas, extra = four_way_ranging(self.channel, self.medium, ad.node, md.node,
                                           self.md_channel_rng, start=t,
                                           extra=codec.pack_fixed(coords), seq=k)
        except RangingFailed as exc:
            end = t + self.channel.timing.duration(4)
            self.slots.append((t, end, ad.node_id, md.node_id, False))
            self.trace(t, md.node_id, "range_failed", f"ad={ad.node_id} {exc.reason}")
            return
        end = t + self.channel.timing.duration(4)
        anchor = codec.unpack_fixed(extra, 3)
        ok = md.ekf.range_update(seconds(end), anchor, meas.distance)
        self.slots.append((t, end, ad.node_id, md.node_id, ok))
        self.trace(t, md.node_id, "range", f"ad={ad.node_id} d={meas.distance:.6f} used={int(ok)}")

    def _finish(self):
        t = self.sim.now
        self.trace(t, self.anchors[0].node_id, "mission_end")

    # -- driver ---------------------------------------------------------------

    def run(self) -> ExperimentLog:
        self._ticking = False
        if self.kind is ScenarioKind.IDEAL_LANDING:
            self._deploy_ideal()
        else:
            self._deploy_flying()
            self._ticking = True
            self.sim.schedule(0, self._tick)
        while self.failure is None:
            nxt = self.sim.peek()
            if nxt is None:
                break
            if self.mission_end is not None and nxt > self.mission_end:
                break
            self.sim.run_until(nxt)
            if self.mission_end is None and self.sim.now > to_ns(600):
                self.fail("deployment", RuntimeError("anchors did not land within 600 s"))
        if self.failure is not None:
            raise self.failure
        self.radio_log.close(self.mission_end)
        stats = {d.node_id: {"accepted": d.ekf.accepted, "rejected": d.ekf.rejected,
                             "degenerate": d.ekf.degenerate, "forced": d.ekf.forced} for d in self.missions}
        return ExperimentLog(
            scenario=self.kind, config=self.cfg, series=self.series,
            landings=[self.landings[i] for i in sorted(self.landings)],
            events=self.events, radio_log=self.radio_log, slots=self.slots,
            mission_start=self.mission_start, mission_end=self.mission_end,
            ranging_start=self.ranging_start, round_period=self.round_period,
            references=self.references, asl=self.asl_result, ekf_stats=stats,
        )


def run_scenario(kind: ScenarioKind, cfg: SwarmConfig) -> ExperimentLog:
    return _Run(kind, cfg).run()


def deploy_anchors(kind: ScenarioKind, cfg: SwarmConfig) -> List[LandingRecord]:
    """Run only the deployment phase and return the anchors' landing records."""
    run = _Run(kind, cfg)
    run._ticking = False
    run._start_mission = lambda: None
    if run.kind is ScenarioKind.IDEAL_LANDING:
        run._deploy_ideal()
    else:
        run._deploy_flying()
        run.sim.schedule(0, run._tick)
        while run.failure is None and run.deployed_at is None:
            nxt = run.sim.peek()
            if nxt is None:
                break
            run.sim.run_until(nxt)
            if run.sim.now > to_ns(600):
                run.fail("deployment", RuntimeError("anchors did not land within 600 s"))
    if run.failure is not None:
        raise run.failure
    return [run.landings[i] for i in sorted(run.landings)]


def slot_start(round_start: int, ad_index: int, md_index: int, anchors: int, slot_ns: int) -> int:
    return round_start + (md_index * anchors + ad_index) * slot_ns
