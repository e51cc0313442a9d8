"""Two-way ranging arithmetic.

Durations are measured on each party's own clock:

* ``t_round1``: initiator, from sending the poll to receiving the response
* ``t_reply1``: responder, from receiving the poll to sending the response
* ``t_round2``: responder, from sending the response to receiving the final
* ``t_reply2``: initiator, from receiving the response to sending the final
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

SPEED_OF_LIGHT = 299_792_458.0


class InvalidTiming(ValueError):
    pass


@dataclass(frozen=True)
class RangingTimestamps:
    t_round1: float
    t_reply1: float
    t_round2: Optional[float] = None
    t_reply2: Optional[float] = None

    def __post_init__(self):
        for name in ("t_round1", "t_reply1", "t_round2", "t_reply2"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise InvalidTiming(f"{name}={value} is negative")

    @property
    def double_sided(self) -> bool:
        return self.t_round2 is not None and self.t_reply2 is not None


@dataclass(frozen=True)
class RangeMeasurement:
    distance: float
    initiator: int
    responder: int
    time: float
    clamped: bool = False


def sstwr_tof(ts: RangingTimestamps) -> float:
    if ts.t_round1 < ts.t_reply1:
        raise InvalidTiming(f"round {ts.t_round1} shorter than reply {ts.t_reply1}")
    return (ts.t_round1 - ts.t_reply1) / 2.0


def dstwr_tof(ts: RangingTimestamps) -> float:
    """Asymmetric double-sided estimator; first-order insensitive to clock drift."""
    if not ts.double_sided:
        raise InvalidTiming("DS-TWR needs all four durations")
    ra, da, rb, db = ts.t_round1, ts.t_reply1, ts.t_round2, ts.t_reply2
    denom = ra + rb + da + db
    if denom <= 0:
        raise InvalidTiming("sum of durations must be positive")
    return (ra * rb - da * db) / denom


def tof_to_distance(tof: float) -> tuple[float, bool]:
    """Return ``(distance, clamped)``; negative distances are clamped to 0."""
    d = SPEED_OF_LIGHT * tof
    if d < 0:
        return 0.0, True
    return d, False


def simulate_exchange(
    distance: float,
    reply1: float,
    reply2: float,
    initiator_scale: float = 1.0,
    responder_scale: float = 1.0,
) -> RangingTimestamps:
    """Locally measured durations of an ideal three-message exchange.

    ``*_scale`` is each clock's rate relative to true time, e.g. ``1 + 10e-6``
    for a clock running 10 ppm fast. Reply delays are nominal durations on the
    respective party's own clock.
    """
    tof = distance / SPEED_OF_LIGHT
    reply1_true = reply1 / responder_scale
    reply2_true = reply2 / initiator_scale
    round1_true = 2 * tof + reply1_true
    round2_true = 2 * tof + reply2_true
    return RangingTimestamps(
        t_round1=round1_true * initiator_scale,
        t_reply1=reply1,
        t_round2=round2_true * responder_scale,
        t_reply2=reply2,
    )
