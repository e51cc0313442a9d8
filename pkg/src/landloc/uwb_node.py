"""USL-style node behaviour on top of the simulated channel.

A four-message exchange between an initiator and a responder::

    RANGING_INIT      initiator -> responder   seq
    RANGING_RESPONSE  responder -> initiator   seq
    RANGING_FINAL     initiator -> responder   seq, poll_tx, resp_rx, final_tx, extra
    RANGING_REPORT    responder -> initiator   seq, distance

The responder computes the range when the final message arrives and reports
it back, so both parties end up holding the measurement. ``extra`` is an
opaque initiator payload (anchors put their believed coordinates there).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import codec
from .codec import MessageKind, UwbMessage
from .sim import TICK_SECONDS, Channel, NodeClock, RangingFailed, seconds
from .twr import SPEED_OF_LIGHT, RangeMeasurement, RangingTimestamps, dstwr_tof, tof_to_distance


class Role(str, enum.Enum):
    INITIATOR = "initiator"
    RESPONDER = "responder"


@dataclass
class UwbNode:
    node_id: int
    clock: NodeClock = field(default_factory=NodeClock)
    role: Role = Role.RESPONDER

    def __post_init__(self):
        if not 0 <= self.node_id <= 0xFF:
            raise ValueError(f"node id {self.node_id} outside [0, 255]")
        self.handlers: Dict[MessageKind, Callable[[UwbMessage], None]] = {}
        self.inbox: List[UwbMessage] = []
        self.keep_inbox = False
        self.ignored = 0
        self.foreign = 0

    def on(self, kind: MessageKind, handler: Callable[[UwbMessage], None]):
        self.handlers[kind] = handler

    def receive(self, frame: bytes) -> Optional[UwbMessage]:
        try:
            msg = codec.decode(frame)
        except codec.CodecError:
            self.foreign += 1
            return None
        if not codec.accepts(msg, self.node_id):
            self.ignored += 1
            return None
        if self.keep_inbox:
            self.inbox.append(msg)
        handler = self.handlers.get(msg.kind)
        if handler is not None:
            handler(msg)
        return msg


class Medium:
    """Delivers encoded frames to the addressed node and any eavesdroppers."""

    def __init__(self):
        self.nodes: Dict[int, UwbNode] = {}
        self.promiscuous: List[UwbNode] = []
        self.frames_sent = 0

    def attach(self, node: UwbNode, promiscuous: bool = False):
        if node.node_id in self.nodes:
            raise ValueError(f"duplicate node id {node.node_id}")
        self.nodes[node.node_id] = node
        if promiscuous:
            self.promiscuous.append(node)

    def transmit(self, frame: bytes) -> Optional[UwbMessage]:
        self.frames_sent += 1
        delivered = None
        for node in self.promiscuous:
            got = node.receive(frame)
            if got is not None:
                delivered = got
        dst = self.nodes.get(frame[2]) if len(frame) > 2 else None
        if dst is not None and dst not in self.promiscuous:
            delivered = dst.receive(frame)
        return delivered

    def send(self, msg: UwbMessage) -> Optional[UwbMessage]:
        return self.transmit(codec.encode(msg))


def _local_seconds(ticks: int) -> float:
    return ticks * TICK_SECONDS


def four_way_ranging(
    channel: Channel,
    medium: Medium,
    initiator: UwbNode,
    responder: UwbNode,
    rng: np.random.Generator,
    start: Optional[int] = None,
    extra: bytes = b"",
    seq: int = 0,
) -> tuple[RangeMeasurement, bytes]:
    """Run one DS-TWR exchange plus report; returns the measurement and the
    ``extra`` bytes as received by the responder.

    Raises RangingFailed when the channel drops the exchange.
    """
    sim = channel.sim
    start = sim.now if start is None else int(start)
    a_id, b_id = initiator.node_id, responder.node_id
    timing = channel.timing
    end = channel.log_exchange(a_id, b_id, start, messages=4)
    eff = channel.sample_range(a_id, b_id, rng, start)

    initiator.role = Role.INITIATOR
    try:
        tof = eff / SPEED_OF_LIGHT
        tx = [seconds(start + timing.message_start(k)) for k in range(3)]
        poll_tx = initiator.clock.ticks(tx[0])
        poll_rx = responder.clock.ticks(tx[0] + tof)
        resp_tx = responder.clock.ticks(tx[1])
        resp_rx = initiator.clock.ticks(tx[1] + tof)
        final_tx = initiator.clock.ticks(tx[2])
        final_rx = responder.clock.ticks(tx[2] + tof)

        s = bytes((seq & 0xFF,))
        medium.send(UwbMessage(a_id, b_id, MessageKind.RANGING_INIT, s))
        medium.send(UwbMessage(b_id, a_id, MessageKind.RANGING_RESPONSE, s))
        final = UwbMessage(
            a_id, b_id, MessageKind.RANGING_FINAL,
            s + codec.pack_timestamps([poll_tx, resp_rx, final_tx]) + extra,
        )
        frame = codec.encode(final)
        got = medium.transmit(frame)
        if got is None:
            got = codec.decode(frame)

        if channel.model.timestamp_ranging:
            i_poll, i_resp, i_final = codec.unpack_timestamps(got.payload, 3, offset=1)
            ts = RangingTimestamps(
                t_round1=_local_seconds(codec.tick_delta(i_resp, i_poll)),
                t_reply1=_local_seconds(codec.tick_delta(resp_tx, poll_rx)),
                t_round2=_local_seconds(codec.tick_delta(final_rx, resp_tx)),
                t_reply2=_local_seconds(codec.tick_delta(i_final, i_resp)),
            )
            distance, clamped = tof_to_distance(dstwr_tof(ts))
        else:
            distance, clamped = max(eff, 0.0), eff < 0

        medium.send(UwbMessage(b_id, a_id, MessageKind.RANGING_REPORT, s + codec.pack_fixed([distance])))
    finally:
        initiator.role = Role.RESPONDER

    received_extra = got.payload[1 + 3 * codec.TIMESTAMP_BYTES:]
    meas = RangeMeasurement(distance=distance, initiator=a_id, responder=b_id,
                            time=seconds(end), clamped=clamped)
    return meas, received_extra


__all__ = ["Role", "UwbNode", "Medium", "four_way_ranging", "RangingFailed"]
