"""Deterministic discrete-event engine, clocks, ranging channel and radio ledger.

Simulation time is an integer count of nanoseconds on the global truth
timeline. Ties are executed in insertion order.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .twr import RangeMeasurement

NS = 1_000_000_000
MS = 1_000_000

# DW1000-style timestamp resolution: 1 / (128 * 499.2 MHz) ~ 15.65 ps
TICK_SECONDS = 1.0 / (128 * 499.2e6)


def seconds(t_ns: int) -> float:
    return t_ns / NS


def to_ns(t_s: float) -> int:
    return int(round(t_s * NS))


class PastEvent(ValueError):
    pass


class RangingFailed(RuntimeError):
    def __init__(self, reason: str, initiator: int, responder: int):
        super().__init__(f"ranging {initiator}->{responder} failed: {reason}")
        self.reason = reason
        self.initiator = initiator
        self.responder = responder


class EmptyWindow(ValueError):
    pass


class EventHandle:
    __slots__ = ("time", "callback", "args", "cancelled")

    def __init__(self, time: int, callback: Callable, args: tuple):
        self.time = time
        self.callback = callback
        self.args = args
        self.cancelled = False

    def cancel(self):
        self.cancelled = True


class Simulator:
    def __init__(self):
        self.now = 0
        self._queue: list = []
        self._seq = itertools.count()

    def schedule(self, at: int, callback: Callable, *args) -> EventHandle:
        at = int(at)
        if at < self.now:
            raise PastEvent(f"cannot schedule at {at} ns, now is {self.now} ns")
        handle = EventHandle(at, callback, args)
        heapq.heappush(self._queue, (at, next(self._seq), handle))
        return handle

    def schedule_in(self, delay: int, callback: Callable, *args) -> EventHandle:
        return self.schedule(self.now + int(delay), callback, *args)

    def peek(self) -> Optional[int]:
        """Time of the next live event, or None when the queue is empty."""
        while self._queue and self._queue[0][2].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0][0] if self._queue else None

    def pending(self) -> int:
        return sum(1 for _, _, h in self._queue if not h.cancelled)

    def run_until(self, t: int) -> int:
        """Process every event with time <= ``t`` and leave the clock at ``t``."""
        t = int(t)
        if t < self.now:
            raise PastEvent(f"run_until({t}) is before now ({self.now})")
        processed = 0
        queue = self._queue
        while queue and queue[0][0] <= t:
            at, _, handle = heapq.heappop(queue)
            if handle.cancelled:
                continue
            self.now = at
            handle.callback(*handle.args)
            processed += 1
        self.now = t
        return processed

    def run(self, limit: Optional[int] = None) -> int:
        """Drain the queue (optionally stopping at ``limit`` ns)."""
        processed = 0
        while self._queue:
            at = self._queue[0][0]
            if limit is not None and at > limit:
                break
            processed += self.run_until(at)
        return processed


@dataclass(frozen=True)
class NodeClock:
    drift_ppm: float = 0.0
    offset: float = 0.0

    def __post_init__(self):
        if 1.0 + self.drift_ppm * 1e-6 <= 0:
            raise ValueError("clock rate must stay positive")

    @property
    def rate(self) -> float:
        return 1.0 + self.drift_ppm * 1e-6

    def local(self, t: float) -> float:
        return t * self.rate + self.offset

    def ticks(self, t: float) -> int:
        """Local time as a 40-bit radio timestamp."""
        return int(math.floor(self.local(t) / TICK_SECONDS)) & ((1 << 40) - 1)


@dataclass(frozen=True)
class ChannelModel:
    range_noise_sigma: float = 0.10
    range_bias: float = 0.0
    drop_probability: float = 0.0
    max_range: float = 50.0
    # derive ranges from the exchanged 40-bit timestamps instead of the
    # direct noise model; exposes clock drift and tick quantisation
    timestamp_ranging: bool = False

    def __post_init__(self):
        if self.range_noise_sigma < 0:
            raise ValueError("range_noise_sigma must be >= 0")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must be in [0, 1]")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")


class RadioState(str, enum.Enum):
    TX = "TX"
    RX = "RX"
    IDLE = "IDLE"


@dataclass(frozen=True)
class TwrTiming:
    """Message airtime and turnaround of one ranging exchange (ns)."""

    airtime: int = 200_000
    turnaround: int = 500_000

    def message_start(self, k: int) -> int:
        return k * (self.airtime + self.turnaround)

    def duration(self, messages: int) -> int:
        return self.message_start(messages - 1) + self.airtime


class RadioLog:
    """Per-node radio state intervals.

    Nodes have a background state (IDLE, or RX while listening) that fills
    every gap between explicitly recorded intervals, so the recorded
    sequence is gap-free and non-overlapping from ``start`` onward.
    """

    def __init__(self, start: int = 0):
        self.start = start
        self._intervals: Dict[int, List[List]] = {}
        self._cursor: Dict[int, int] = {}
        self._background: Dict[int, RadioState] = {}
        self.closed_at: Optional[int] = None

    def add_node(self, node: int, background: RadioState = RadioState.IDLE):
        self._intervals.setdefault(node, [])
        self._cursor.setdefault(node, self.start)
        self._background.setdefault(node, background)

    @property
    def nodes(self) -> List[int]:
        return sorted(self._intervals)

    def _append(self, node: int, state: RadioState, start: int, end: int):
        if end <= start:
            return
        seq = self._intervals[node]
        if seq and seq[-1][0] is state and seq[-1][2] == start:
            seq[-1][2] = end
        else:
            seq.append([state, start, end])

    def _fill_to(self, node: int, t: int):
        cur = self._cursor[node]
        if t > cur:
            self._append(node, self._background[node], cur, t)
            self._cursor[node] = t

    def record(self, node: int, state: RadioState, start: int, end: int):
        if node not in self._intervals:
            self.add_node(node)
        if start < self._cursor[node]:
            raise ValueError(
                f"node {node}: interval at {start} overlaps radio activity up to {self._cursor[node]}"
            )
        self._fill_to(node, start)
        self._append(node, RadioState(state), start, end)
        self._cursor[node] = max(self._cursor[node], end)

    def set_background(self, node: int, state: RadioState, at: int):
        if node not in self._intervals:
            self.add_node(node)
        if at < self._cursor[node]:
            raise ValueError(f"node {node}: background change at {at} is in the past")
        self._fill_to(node, at)
        self._background[node] = RadioState(state)

    def close(self, t: int):
        for node in self._intervals:
            self._fill_to(node, t)
        self.closed_at = t

    def intervals(self, node: int) -> List[Tuple[RadioState, int, int]]:
        return [tuple(iv) for iv in self._intervals.get(node, [])]

    def busy_time(self, node: int, window: Tuple[int, int]) -> Dict[RadioState, int]:
        lo, hi = window
        out = {s: 0 for s in RadioState}
        for state, start, end in self._intervals.get(node, []):
            if end <= lo:
                continue
            if start >= hi:
                break
            out[state] += min(end, hi) - max(start, lo)
        return out


def radio_busy_fractions(log: RadioLog, node: int, window: Tuple[int, int]) -> Tuple[float, float, float]:
    """(tx, rx, idle) fractions of ``window`` for ``node``.

    Time inside the window not yet covered by the log counts as idle.
    """
    lo, hi = int(window[0]), int(window[1])
    if hi <= lo:
        raise EmptyWindow(f"window [{lo}, {hi}) is empty")
    busy = log.busy_time(node, (lo, hi))
    span = hi - lo
    tx = busy[RadioState.TX] / span
    rx = busy[RadioState.RX] / span
    return tx, rx, 1.0 - tx - rx


PositionFn = Callable[[int], np.ndarray]


@dataclass
class Channel:
    """Shared radio medium: knows where every node is and draws range errors."""

    sim: Simulator
    model: ChannelModel = field(default_factory=ChannelModel)
    timing: TwrTiming = field(default_factory=TwrTiming)
    radio_log: RadioLog = field(default_factory=RadioLog)

    def __post_init__(self):
        self._positions: Dict[int, PositionFn] = {}

    def register(self, node: int, position: PositionFn, background: RadioState = RadioState.IDLE):
        if node in self._positions:
            raise ValueError(f"node {node} already registered")
        self._positions[node] = position
        self.radio_log.add_node(node, background)

    def position(self, node: int, t: Optional[int] = None) -> np.ndarray:
        return np.asarray(self._positions[node](self.sim.now if t is None else t), dtype=float)

    def true_distance(self, a: int, b: int, t: Optional[int] = None) -> float:
        return float(np.linalg.norm(self.position(a, t) - self.position(b, t)))

    def log_exchange(self, initiator: int, responder: int, start: int, messages: int = 4) -> int:
        """Record radio activity of a DS-TWR exchange; returns its end time.

        Even-numbered messages go initiator -> responder, odd ones back. The
        initiator powers its receiver only while awaiting replies and the
        responder receives throughout the exchange except while sending.
        """
        a = self.timing.airtime
        log = self.radio_log
        end = start + self.timing.duration(messages)
        starts = [start + self.timing.message_start(k) for k in range(messages)]
        for k in range(0, messages, 2):
            log.record(initiator, RadioState.TX, starts[k], starts[k] + a)
            if k + 1 < messages:
                log.record(initiator, RadioState.RX, starts[k] + a, starts[k + 1] + a)
        cursor = start
        for k in range(1, messages, 2):
            log.record(responder, RadioState.RX, cursor, starts[k])
            log.record(responder, RadioState.TX, starts[k], starts[k] + a)
            cursor = starts[k] + a
        log.record(responder, RadioState.RX, cursor, end)
        return end

    def sample_range(self, a: int, b: int, rng: np.random.Generator, t: Optional[int] = None) -> float:
        """Raw, unclamped noisy distance; raises RangingFailed on drop/out-of-range."""
        m = self.model
        d = self.true_distance(a, b, t)
        if d > m.max_range:
            raise RangingFailed("out of range", a, b)
        if m.drop_probability > 0 and rng.random() < m.drop_probability:
            raise RangingFailed("dropped", a, b)
        noise = rng.normal(0.0, m.range_noise_sigma) if m.range_noise_sigma > 0 else 0.0
        return d + m.range_bias + noise

    def measure_range(
        self,
        a: int,
        b: int,
        rng: np.random.Generator,
        start: Optional[int] = None,
        messages: int = 4,
    ) -> RangeMeasurement:
        start = self.sim.now if start is None else int(start)
        end = self.log_exchange(a, b, start, messages)
        raw = self.sample_range(a, b, rng, start)
        return RangeMeasurement(
            distance=max(raw, 0.0), initiator=a, responder=b, time=seconds(end), clamped=raw < 0
        )
