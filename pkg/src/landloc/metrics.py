"""Evaluation metrics over experiment logs and the duty-cycle energy model."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import PowerModel
from .sim import RadioLog, radio_busy_fractions, seconds
from .vehicle import TrajectoryRef

# l-RMSE of a fixed-infrastructure UWB system, carried into reports for comparison
LPS_L_RMSE = 0.103


class GridMismatch(ValueError):
    pass


class TooFewSamples(ValueError):
    pass


class DegenerateBaseline(ValueError):
    pass


def _xy(points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or p.shape[1] < 2:
        raise ValueError("expected an (n, 2) or (n, 3) array of positions")
    return p[:, :2]


def l_rmse(est, truth) -> float:
    """RMS planar distance between two trajectories sampled on the same grid."""
    a, b = _xy(est), _xy(truth)
    if a.shape != b.shape:
        raise GridMismatch(f"{len(a)} estimate samples vs {len(b)} truth samples")
    if len(a) == 0:
        raise GridMismatch("empty trajectories")
    return float(math.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


def trimmed_mean(x, fraction: float) -> float:
    if not 0 <= fraction < 0.5:
        raise ValueError("trim fraction must be in [0, 0.5)")
    x = np.sort(np.asarray(x, dtype=float))
    k = int(math.floor(fraction * len(x)))
    kept = x[k: len(x) - k]
    if len(kept) == 0:
        raise TooFewSamples("no samples left after trimming")
    return float(kept.mean())


def shift_vector(a, b, trim_fraction: float = 0.1) -> np.ndarray:
    """Per-axis trimmed mean of ``b - a``."""
    pa, pb = _xy(a), _xy(b)
    if pa.shape != pb.shape:
        raise GridMismatch(f"{len(pa)} vs {len(pb)} samples")
    d = pb - pa
    return np.array([trimmed_mean(d[:, 0], trim_fraction), trimmed_mean(d[:, 1], trim_fraction)])


def align(real, ideal, trim_fraction: float = 0.1) -> Tuple[np.ndarray, np.ndarray]:
    """Translate ``real`` onto ``ideal``; returns (aligned, shift) with aligned = real + shift."""
    s = shift_vector(real, ideal, trim_fraction)
    return _xy(real) + s, s


def c_rmse(real, t, ref: TrajectoryRef, trim_fraction: float = 0.1) -> float:
    """RMS radial deviation from the reference circle after shift alignment."""
    ideal = ref.point(np.asarray(t, dtype=float))
    aligned, _ = align(real, ideal, trim_fraction)
    r = np.linalg.norm(aligned - np.asarray(ref.center, dtype=float), axis=1)
    return float(math.sqrt(np.mean((r - ref.radius) ** 2)))


def landing_error(believed, actual) -> float:
    return float(math.dist(tuple(believed)[:2], tuple(actual)[:2]))


def relative_distance_error(ti, tj) -> Tuple[float, float]:
    """Largest deviation of the inter-drone distance from its initial value.

    Returns (metres, percent of the initial distance).
    """
    a, b = _xy(ti), _xy(tj)
    if a.shape != b.shape:
        raise GridMismatch(f"{len(a)} vs {len(b)} samples")
    d = np.linalg.norm(a - b, axis=1)
    if d[0] == 0:
        raise DegenerateBaseline("trajectories start at the same point")
    dev = float(np.max(np.abs(d - d[0])))
    return dev, 100.0 * dev / float(d[0])


@dataclass(frozen=True)
class EnergyReport:
    node: int
    tx_fraction: float
    rx_fraction: float
    idle_fraction: float
    avg_power: float      # W
    energy: float         # J
    window: Tuple[int, int]


def energy_report(log: RadioLog, pm: PowerModel, window: Tuple[int, int],
                  nodes: Optional[Sequence[int]] = None) -> Dict[int, EnergyReport]:
    out = {}
    span = seconds(window[1] - window[0])
    for node in (log.nodes if nodes is None else nodes):
        tx, rx, idle = radio_busy_fractions(log, node, window)
        p = tx * pm.tx_power + rx * pm.rx_power + idle * pm.idle_power
        out[node] = EnergyReport(node, tx, rx, idle, p, p * span, (int(window[0]), int(window[1])))
    return out


# --- per-run summary -----------------------------------------------------------

def summarize(log) -> Dict[str, object]:
    """All metrics of one ExperimentLog as plain data."""
    cfg = log.config
    trim = cfg.trim_fraction
    l_vals, c_vals, shifts = {}, {}, {}
    for d in log.mission_ids:
        t, tru, est = log.window(d)
        l_vals[d] = l_rmse(est, tru)
        c_vals[d] = c_rmse(tru, t - seconds(log.mission_start), log.references[d], trim)
        shifts[d] = shift_vector(est, tru, trim)
    rel = []
    ids = log.mission_ids
    if len(ids) >= 2:
        for a, b in zip(ids, ids[1:] + ids[:1]):
            if len(ids) == 2 and a > b:
                continue
            rel.append(relative_distance_error(log.window(a)[1], log.window(b)[1]))
    window = (log.mission_start, log.mission_end)
    energy = energy_report(log.radio_log, cfg.power, window)
    md_power = [energy[d].avg_power for d in log.mission_ids]
    ad_power = [energy[d].avg_power for d in log.anchor_ids]
    landing = [rec.error for rec in log.landings]
    return {
        "scenario": log.scenario.value,
        "seed": cfg.seed,
        "mission_drones": cfg.mission_drones,
        "anchors": cfg.anchors,
        "round_period_ms": log.round_period / 1e6,
        "l_rmse": float(np.mean(list(l_vals.values()))),
        "l_rmse_per_md": {str(k): v for k, v in l_vals.items()},
        "c_rmse": float(np.mean(list(c_vals.values()))),
        "c_rmse_per_md": {str(k): v for k, v in c_vals.items()},
        "shift_vectors": {str(k): [float(v[0]), float(v[1])] for k, v in shifts.items()},
        "landing_error_mean": float(np.mean(landing)),
        "landing_errors": landing,
        "rel_dist_error_m": max((r[0] for r in rel), default=0.0),
        "rel_dist_error_pct": max((r[1] for r in rel), default=0.0),
        "md_avg_power_w": float(np.mean(md_power)),
        "ad_avg_power_w": float(np.mean(ad_power)),
        "md_energy_j": float(np.mean([energy[d].energy for d in log.mission_ids])),
        "energy_per_node": {
            str(n): {"tx": e.tx_fraction, "rx": e.rx_fraction, "idle": e.idle_fraction,
                     "avg_power_w": e.avg_power, "energy_j": e.energy}
            for n, e in sorted(energy.items())
        },
        "ekf": {str(k): v for k, v in sorted(log.ekf_stats.items())},
        "lps_l_rmse": LPS_L_RMSE,
    }


METRIC_UNITS = {
    "l_rmse": "m",
    "c_rmse": "m",
    "landing_error_mean": "m",
    "rel_dist_error_m": "m",
    "rel_dist_error_pct": "%",
    "md_avg_power_w": "W",
    "ad_avg_power_w": "W",
    "md_energy_j": "J",
    "round_period_ms": "ms",
}


def metric_rows(summary: Dict[str, object]) -> List[Tuple[str, float, str, int, str]]:
    """(metric, value, units, seed, scenario) rows of the headline metrics."""
    return [(name, float(summary[name]), unit, int(summary["seed"]), str(summary["scenario"]))
            for name, unit in METRIC_UNITS.items()]
