"""Anchor self-localization: slotted pairwise ranging between hovering anchor
drones, averaging, classical MDS and frame canonicalisation.

Data-message payloads exchanged during the procedure (all little-endian,
distances and coordinates as Q32.32 fixed-point millimetres)::

    measurement report   0x01 | count | count x (peer_id u8, distance i64)
    coordinate share     0x02 | first_index | count | count x (x i64, y i64)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import codec
from .codec import MessageKind, UwbMessage
from .eigen import jacobi_eigh
from .sim import MS, Channel, RadioState, RangingFailed, Simulator, seconds
from .uwb_node import Medium, UwbNode, four_way_ranging

REPORT_SCHEMA = 0x01
SHARE_SCHEMA = 0x02
SHARE_PER_MESSAGE = 7
RANK_EPS = 1e-9


class TooFewAnchors(ValueError):
    pass


class NoSamples(ValueError):
    pass


class DegenerateConfiguration(ValueError):
    pass


class ReflectionAmbiguous(DegenerateConfiguration):
    pass


class UnderdeterminedFrame(ValueError):
    pass


class AslFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class AslSchedule:
    offsets: Tuple[float, ...]      # seconds, per AD index
    dt: float = 0.004
    n_meas: int = 100

    @property
    def anchors(self) -> int:
        return len(self.offsets)

    @property
    def total(self) -> float:
        m = self.anchors
        return m * (m - 1) / 2 * self.dt * self.n_meas

    def peers(self, i: int) -> range:
        return range(i + 1, self.anchors)

    # integer-nanosecond views used by the simulator
    @property
    def dt_ns(self) -> int:
        return int(round(self.dt * 1e9))

    def offset_ns(self, i: int) -> int:
        m = self.anchors
        return i * (2 * m - i - 1) // 2 * self.dt_ns * self.n_meas

    def sample_ns(self, i: int, peer: int, k: int) -> int:
        """Start of the ``k``-th exchange between AD ``i`` and AD ``peer``."""
        return self.offset_ns(i) + ((peer - i - 1) * self.n_meas + k) * self.dt_ns

    @property
    def total_ns(self) -> int:
        m = self.anchors
        return m * (m - 1) // 2 * self.dt_ns * self.n_meas


def acquisition_schedule(m: int, dt: float = 0.004, n_meas: int = 100) -> AslSchedule:
    if m < 3:
        raise TooFewAnchors(f"need at least 3 anchors, got {m}")
    if n_meas < 0 or dt <= 0:
        raise ValueError("n_meas must be >= 0 and dt > 0")
    offsets = tuple(i * (2 * m - i - 1) / 2 * dt * n_meas for i in range(m))
    return AslSchedule(offsets=offsets, dt=dt, n_meas=n_meas)


def average_pair(samples: Sequence[float]) -> float:
    if len(samples) == 0:
        raise NoSamples("no range samples for this pair")
    return float(np.mean(np.asarray(samples, dtype=float)))


def _check_distance_matrix(D: np.ndarray):
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("distance matrix must be square")
    scale = max(float(np.abs(D).max()), 1.0)
    if not np.allclose(D, D.T, rtol=0, atol=1e-9 * scale):
        raise ValueError("distance matrix must be symmetric")
    if np.any(np.abs(np.diag(D)) > 1e-9 * scale):
        raise ValueError("distance matrix must have a zero diagonal")
    if np.any(D < 0):
        raise ValueError("distances must be non-negative")


def mds_localize(D) -> np.ndarray:
    """Planar classical MDS: top-2 eigenpairs of the double-centred Gram matrix."""
    D = np.asarray(D, dtype=float)
    _check_distance_matrix(D)
    m = D.shape[0]
    if m < 3:
        raise TooFewAnchors(f"need at least 3 points, got {m}")
    J = np.eye(m) - np.full((m, m), 1.0 / m)
    B = -0.5 * J @ (D * D) @ J
    w, V = jacobi_eigh(B)
    if w[0] <= 0 or w[1] <= RANK_EPS * w[0]:
        raise DegenerateConfiguration(
            f"configuration is (nearly) collinear: eigenvalues {w[0]:.3g}, {w[1]:.3g}"
        )
    return V[:, :2] * np.sqrt(w[:2])


def fix_frame(raw) -> np.ndarray:
    """AD0 at the origin, AD1 on the positive X axis, AD2 in the upper half-plane."""
    P = np.array(raw, dtype=float)
    if P.ndim != 2 or P.shape[1] != 2 or P.shape[0] < 3:
        raise ValueError("expected an (M >= 3, 2) coordinate array")
    P = P - P[0]
    r = math.hypot(P[1, 0], P[1, 1])
    scale = max(float(np.abs(P).max()), 1.0)
    if r <= 1e-12 * scale:
        raise DegenerateConfiguration("AD0 and AD1 coincide")
    c, s = P[1, 0] / r, P[1, 1] / r
    R = np.array([[c, s], [-s, c]])
    P = P @ R.T
    P[1, 1] = 0.0
    P[0] = 0.0
    if abs(P[2, 1]) <= 1e-9 * scale:
        raise ReflectionAmbiguous("AD2 lies on the AD0-AD1 axis")
    if P[2, 1] < 0:
        P[:, 1] = -P[:, 1]
    return P


@dataclass(frozen=True)
class FrameTransform:
    """Rigid planar transform ``p -> R(theta) p + t``."""

    theta: float
    translation: Tuple[float, float]

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def apply(self, points) -> np.ndarray:
        P = np.asarray(points, dtype=float)
        return P @ self.rotation.T + np.asarray(self.translation)


def align_to_mission_frame(coords, known_positions, indices: Optional[Sequence[int]] = None) -> FrameTransform:
    """Least-squares rotation + translation mapping relative ASL coordinates
    onto known positions of the same drones in the mission frame.

    ``indices`` selects which rows of ``coords`` correspond to
    ``known_positions`` (default: the first ``len(known_positions)``).
    """
    C = np.asarray(coords, dtype=float)
    K = np.asarray(known_positions, dtype=float).reshape(-1, 2)
    if indices is None:
        indices = range(len(K))
    src = C[list(indices)]
    if len(src) < 2 or len(src) != len(K):
        raise UnderdeterminedFrame(f"need >= 2 correspondences, got {len(src)}")
    cs, ck = src.mean(axis=0), K.mean(axis=0)
    a, b = src - cs, K - ck
    dot = float(np.sum(a * b))
    cross = float(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]))
    if abs(dot) + abs(cross) == 0.0:
        raise UnderdeterminedFrame("correspondences coincide")
    theta = math.atan2(cross, dot)
    c, s = math.cos(theta), math.sin(theta)
    t = ck - np.array([c * cs[0] - s * cs[1], s * cs[0] + c * cs[1]])
    return FrameTransform(theta, (float(t[0]), float(t[1])))


def trilaterate_frame(D) -> np.ndarray:
    """Closed-form fixed-frame coordinates from exact distances (test oracle)."""
    D = np.asarray(D, dtype=float)
    m = D.shape[0]
    d01 = D[0, 1]
    out = np.zeros((m, 2))
    out[1] = (d01, 0.0)
    for i in range(2, m):
        x = (d01 ** 2 + D[0, i] ** 2 - D[1, i] ** 2) / (2 * d01)
        y = math.sqrt(max(D[0, i] ** 2 - x * x, 0.0))
        out[i] = (x, y)
    for i in range(3, m):
        up, down = out[i].copy(), out[i] * (1, -1)
        if abs(np.linalg.norm(down - out[2]) - D[2, i]) < abs(np.linalg.norm(up - out[2]) - D[2, i]):
            out[i] = down
    return out


# --- payload schemas -------------------------------------------------------

def encode_report(measurements: Dict[int, float]) -> bytes:
    body = bytearray((REPORT_SCHEMA, len(measurements)))
    for peer in sorted(measurements):
        body.append(peer)
        body += codec.pack_fixed([measurements[peer]])
    return bytes(body)


def decode_report(payload: bytes) -> Dict[int, float]:
    if len(payload) < 2 or payload[0] != REPORT_SCHEMA:
        raise codec.CodecError("not a measurement report")
    count = payload[1]
    if len(payload) != 2 + 9 * count:
        raise codec.Truncated("measurement report length mismatch")
    out = {}
    for k in range(count):
        base = 2 + 9 * k
        out[payload[base]] = codec.unpack_fixed(payload, 1, base + 1)[0]
    return out


def encode_shares(coords: np.ndarray) -> List[bytes]:
    coords = np.asarray(coords, dtype=float)
    chunks = []
    for first in range(0, len(coords), SHARE_PER_MESSAGE):
        block = coords[first:first + SHARE_PER_MESSAGE]
        body = bytes((SHARE_SCHEMA, first, len(block))) + codec.pack_fixed(block.ravel())
        chunks.append(body)
    return chunks


def decode_share(payload: bytes) -> Tuple[int, np.ndarray]:
    if len(payload) < 3 or payload[0] != SHARE_SCHEMA:
        raise codec.CodecError("not a coordinate share")
    first, count = payload[1], payload[2]
    if len(payload) != 3 + 16 * count:
        raise codec.Truncated("coordinate share length mismatch")
    vals = codec.unpack_fixed(payload, 2 * count, 3)
    return first, np.asarray(vals).reshape(count, 2)


# --- the distributed procedure ----------------------------------------------

@dataclass
class AslResult:
    coordinates: Dict[int, np.ndarray]      # AD index -> (M, 2) array held by that AD
    distance_matrix: np.ndarray
    raw: np.ndarray
    acquisition_start: int                  # ns
    acquisition_end: int
    done: int
    exchanges: List[Tuple[int, int, int, int]] = field(default_factory=list)  # (start, end, i, peer)
    failures: int = 0

    @property
    def fixed(self) -> np.ndarray:
        return self.coordinates[0]


class AslProcess:
    """Event-driven ASL over a simulated channel.

    ``nodes[i]`` is AD ``i``'s radio. Every AD ranges with all higher-index
    ADs in its scheduled window, reports its averages to AD0 once the whole
    acquisition is over, AD0 runs MDS and shares the fixed-frame coordinates.
    """

    def __init__(self, channel: Channel, medium: Medium, nodes: Sequence[UwbNode],
                 schedule: AslSchedule, rng: np.random.Generator,
                 retry_budget: int = 10,
                 on_done: Optional[Callable[[AslResult], None]] = None,
                 on_error: Optional[Callable[[Exception], None]] = None,
                 trace: Optional[Callable[[int, int, str, str], None]] = None):
        if len(nodes) != schedule.anchors:
            raise ValueError("one node per scheduled anchor required")
        if len(nodes) < 3:
            raise TooFewAnchors(f"need at least 3 anchors, got {len(nodes)}")
        self.channel = channel
        self.sim: Simulator = channel.sim
        self.medium = medium
        self.nodes = list(nodes)
        self.schedule = schedule
        self.rng = rng
        self.retry_budget = retry_budget
        self.on_done = on_done
        self.on_error = on_error
        self.trace = trace or (lambda t, node, event, detail: None)
        m = len(nodes)
        self.samples: Dict[Tuple[int, int], List[float]] = {
            (i, k): [] for i in range(m) for k in range(i + 1, m)
        }
        self.fails: Dict[Tuple[int, int], int] = {key: 0 for key in self.samples}
        self.exchanges: List[Tuple[int, int, int, int]] = []
        self.D = np.zeros((m, m))
        self.held: Dict[int, np.ndarray] = {}
        self.result: Optional[AslResult] = None
        self.error: Optional[Exception] = None
        self._reports_seen = 0
        self._id_to_index = {n.node_id: i for i, n in enumerate(self.nodes)}
        for i, node in enumerate(self.nodes):
            node.on(MessageKind.DATA, self._make_data_handler(i))

    def start(self, at: Optional[int] = None):
        t0 = self.sim.now if at is None else int(at)
        self.t0 = t0
        self.trace(t0, self.nodes[0].node_id, "asl_start", f"anchors={len(self.nodes)}")
        sch = self.schedule
        for i in range(len(self.nodes)):
            for peer in sch.peers(i):
                for k in range(sch.n_meas):
                    self.sim.schedule(t0 + sch.sample_ns(i, peer, k), self._exchange, i, peer, k)
        self.sim.schedule(t0 + sch.total_ns, self._acquisition_done)

    def _fail(self, exc: Exception):
        if self.error is None:
            self.error = exc
            self.trace(self.sim.now, self.nodes[0].node_id, "asl_failed", str(exc))
            if self.on_error is not None:
                self.on_error(exc)

    def _exchange(self, i: int, peer: int, k: int):
        if self.error is not None:
            return
        start = self.sim.now
        try:
            meas, _ = four_way_ranging(self.channel, self.medium, self.nodes[i], self.nodes[peer],
                                       self.rng, start=start, seq=k)
        except RangingFailed:
            self.fails[(i, peer)] += 1
            if self.fails[(i, peer)] > self.retry_budget:
                self._fail(AslFailed(f"AD{i}-AD{peer}: more than {self.retry_budget} failed exchanges"))
            return
        self.exchanges.append((start, start + self.channel.timing.duration(4), i, peer))
        self.samples[(i, peer)].append(meas.distance)

    def _acquisition_done(self):
        if self.error is not None:
            return
        end = self.sim.now
        self.acquisition_end = end
        self.trace(end, self.nodes[0].node_id, "asl_acquired", f"span_s={seconds(end - self.t0):.6f}")
        m = len(self.nodes)
        # AD0 keeps its own averages and listens for the others' reports
        for peer in range(1, m):
            self._store(0, peer, self._average(0, peer))
        self.channel.radio_log.set_background(self.nodes[0].node_id, RadioState.RX, end)
        dt = self.schedule.dt_ns
        senders = [i for i in range(1, m) if i < m - 1]
        for slot, i in enumerate(senders):
            self.sim.schedule(end + slot * dt, self._send_report, i)
        self._expected_reports = len(senders)
        if not senders:
            self.sim.schedule(end, self._solve)

    def _average(self, i: int, peer: int) -> float:
        try:
            return average_pair(self.samples[(i, peer)])
        except NoSamples:
            self._fail(AslFailed(f"AD{i}-AD{peer}: no successful exchanges"))
            return float("nan")

    def _store(self, i: int, peer: int, value: float):
        self.D[i, peer] = self.D[peer, i] = value

    def _send_report(self, i: int):
        if self.error is not None:
            return
        m = len(self.nodes)
        avgs = {self.nodes[k].node_id: self._average(i, k) for k in range(i + 1, m)}
        if self.error is not None:
            return
        node, ad0 = self.nodes[i], self.nodes[0]
        t = self.sim.now
        self.channel.radio_log.record(node.node_id, RadioState.TX, t, t + self.channel.timing.airtime)
        self.medium.send(UwbMessage(node.node_id, ad0.node_id, MessageKind.DATA, encode_report(avgs)))

    def _make_data_handler(self, index: int):
        def handle(msg: UwbMessage):
            payload = msg.payload
            if not payload:
                return
            if payload[0] == REPORT_SCHEMA and index == 0:
                sender = self._id_to_index[msg.src]
                for peer_id, value in decode_report(payload).items():
                    self._store(sender, self._id_to_index[peer_id], value)
                self._reports_seen += 1
                if self._reports_seen == self._expected_reports:
                    self.sim.schedule(self.sim.now + self.channel.timing.airtime, self._solve)
            elif payload[0] == SHARE_SCHEMA:
                first, block = decode_share(payload)
                held = self.held.setdefault(index, np.full((len(self.nodes), 2), np.nan))
                held[first:first + len(block)] = block
                if not np.isnan(held).any():
                    self._coordinates_complete()
        return handle

    def _solve(self):
        if self.error is not None:
            return
        ad0 = self.nodes[0]
        t = self.sim.now
        self.channel.radio_log.set_background(ad0.node_id, RadioState.IDLE, t)
        try:
            raw = mds_localize(self.D)
            fixed = fix_frame(raw)
        except DegenerateConfiguration as exc:
            self._fail(exc)
            return
        self.raw = raw
        self.trace(t, ad0.node_id, "asl_mds", "ok")
        chunks = encode_shares(fixed)
        # AD0 holds exactly what it broadcasts
        held = np.full((len(self.nodes), 2), np.nan)
        for chunk in chunks:
            first, block = decode_share(chunk)
            held[first:first + len(block)] = block
        self.held[0] = held
        dt = self.schedule.dt_ns
        slot = 0
        for i in range(1, len(self.nodes)):
            for chunk in chunks:
                self.sim.schedule(t + slot * dt, self._send_share, i, chunk)
                slot += 1

    def _send_share(self, i: int, chunk: bytes):
        ad0, node = self.nodes[0], self.nodes[i]
        t = self.sim.now
        log = self.channel.radio_log
        log.record(ad0.node_id, RadioState.TX, t, t + self.channel.timing.airtime)
        log.record(node.node_id, RadioState.RX, t, t + self.channel.timing.airtime)
        self.medium.send(UwbMessage(ad0.node_id, node.node_id, MessageKind.DATA, chunk))

    def _coordinates_complete(self):
        if self.result is not None or len(self.held) < len(self.nodes):
            return
        if any(np.isnan(h).any() for h in self.held.values()):
            return
        t = self.sim.now
        self.result = AslResult(
            coordinates={i: self.held[i].copy() for i in range(len(self.nodes))},
            distance_matrix=self.D.copy(),
            raw=self.raw,
            acquisition_start=self.t0,
            acquisition_end=self.acquisition_end,
            done=t + self.channel.timing.airtime,
            exchanges=list(self.exchanges),
            failures=sum(self.fails.values()),
        )
        self.trace(t, self.nodes[0].node_id, "asl_done", f"failures={self.result.failures}")
        if self.on_done is not None:
            self.on_done(self.result)


def run_asl(channel: Channel, nodes: Sequence[UwbNode], schedule: AslSchedule,
            rng: np.random.Generator, medium: Optional[Medium] = None,
            retry_budget: int = 10) -> AslResult:
    """Run the procedure to completion on ``channel``'s simulator.

    Nodes must already be registered on the channel; they are attached to
    ``medium`` (a fresh one by default) if not already.
    """
    if medium is None:
        medium = Medium()
    for node in nodes:
        if node.node_id not in medium.nodes:
            medium.attach(node)
    proc = AslProcess(channel, medium, nodes, schedule, rng, retry_budget=retry_budget)
    proc.start()
    sim = channel.sim
    while proc.result is None and proc.error is None:
        nxt = sim.peek()
        if nxt is None:
            break
        sim.run_until(nxt)
    if proc.error is not None:
        raise proc.error
    if proc.result is None:
        raise AslFailed("procedure stalled")
    return proc.result


def static_anchors(channel: Channel, positions, first_id: int = 0) -> List[UwbNode]:
    """Register fixed anchor positions on ``channel`` and return their radios."""
    nodes = []
    for k, p in enumerate(np.asarray(positions, dtype=float)):
        pos = np.zeros(3)
        pos[: p.size] = p
        node = UwbNode(first_id + k)
        channel.register(node.node_id, lambda t, pos=pos: pos)
        nodes.append(node)
    return nodes
