"""End-to-end acceptance checks, one test per criterion."""

import math

import numpy as np
import pytest

from landloc import codec
from landloc.asl import acquisition_schedule, run_asl, static_anchors, trilaterate_frame
from landloc.cli import main
from landloc.codec import MessageKind, UwbMessage
from landloc.config import ScenarioKind, SwarmConfig
from landloc.estimator import DegenerateGeometry, EkfConfig, RangeEkf, initial_state, predict, update_range
from landloc.metrics import c_rmse, summarize
from landloc.scenarios import deploy_anchors, run_scenario
from landloc.sim import Channel, ChannelModel, Simulator
from landloc.twr import SPEED_OF_LIGHT as C, dstwr_tof, simulate_exchange, sstwr_tof
from landloc.vehicle import OdometrySample, TrajectoryRef

KINDS = (ScenarioKind.IDEAL_LANDING, ScenarioKind.AUTOMATIC_LANDING, ScenarioKind.SELF_LOCALIZING)
SEEDS = range(5)


@pytest.fixture(scope="module")
def sweep():
    """Mean summaries over 5 seeds for every scenario at N=4 and N=8."""
    out = {}
    for kind in KINDS:
        for n in (4, 8):
            sums = [summarize(run_scenario(kind, SwarmConfig(mission_drones=n, seed=s))) for s in SEEDS]
            out[kind, n] = {k: float(np.mean([s[k] for s in sums])) for k in ("l_rmse", "c_rmse")}
    return out


def test_1_schedule_exactness(report):
    sch = acquisition_schedule(4, 0.004, 100)
    offsets_ok = [sch.offset_ns(i) for i in range(4)] == [0, 1_200_000_000, 2_000_000_000, 2_400_000_000]
    total_ok = sch.total_ns == 2_400_000_000
    periods = {}
    for n in (4, 8):
        log = run_scenario(ScenarioKind.IDEAL_LANDING, SwarmConfig(mission_drones=n))
        starts = [e.t for e in log.events if e.kind == "round_start"]
        periods[n] = set(np.diff(starts).tolist())
    ok = offsets_ok and total_ok and periods == {4: {48_000_000}, 8: {96_000_000}}
    report(1, "schedule exactness", ok, f"offsets {sch.offsets}, round periods {periods}")
    assert ok


def _random_config(rng):
    while True:
        P = rng.uniform(-5, 5, (4, 2))
        d = np.linalg.norm(P[:, None] - P[None], axis=-1) + np.eye(4)
        base = (P[1] - P[0]) / np.linalg.norm(P[1] - P[0])
        rel = P[2:] - P[0]
        off = np.abs(base[0] * rel[:, 1] - base[1] * rel[:, 0])
        if d.min() > 0.2 and off.min() > 0.2:
            return P


def _noiseless_asl(P, seed=0):
    ch = Channel(Simulator(), ChannelModel(range_noise_sigma=0.0))
    sch = acquisition_schedule(len(P), 0.004, 10)
    return run_asl(ch, static_anchors(ch, P), sch, np.random.default_rng(seed)).fixed


def test_2_mds_oracle_equivalence(report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for k in range(1000):
        P = _random_config(rng)
        D = np.linalg.norm(P[:, None] - P[None], axis=-1)
        worst = max(worst, float(np.abs(_noiseless_asl(P, k) - trilaterate_frame(D)).max()))
    square = _noiseless_asl(np.array([(-2.0, 2.0), (2.0, -2.0), (2.0, 2.0), (-2.0, -2.0)]))
    r = math.sqrt(32)
    square_ok = np.allclose(square, [(0, 0), (r, 0), (r / 2, r / 2), (r / 2, -r / 2)], atol=1e-9)
    ok = worst < 1e-9 and square_ok
    report(2, "MDS oracle equivalence", ok, f"max coordinate deviation {worst:.2e} m over 1000 configs")
    assert ok


def test_3_dstwr_drift_immunity(report):
    d, reply = 5.0, 1e-3
    grid = np.linspace(-50e-6, 50e-6, 11)
    ds_err = max(abs(C * dstwr_tof(simulate_exchange(d, reply, reply, 1 + a, 1 + b)) - d)
                 for a in grid for b in grid)
    ss_err = abs(C * sstwr_tof(simulate_exchange(d, reply, reply, 1.0, 1 + 10e-6)) - d)
    ok = ds_err < 0.01 and ss_err > 1.0
    report(3, "DS-TWR drift immunity", ok, f"DS max error {ds_err * 1e3:.3f} mm, SS error at 10 ppm {ss_err:.3f} m")
    assert ok


def test_4_scenario_ordering(report, sweep):
    l = {k: v["l_rmse"] for k, v in sweep.items()}
    order = all(l[KINDS[0], n] <= l[KINDS[1], n] <= l[KINDS[2], n] for n in (4, 8))
    growth = all(l[k, 8] > l[k, 4] for k in KINDS)
    band = 0.08 <= l[ScenarioKind.IDEAL_LANDING, 4] <= 0.25
    ok = order and growth and band
    detail = ", ".join(f"{k.value} N={n}: {l[k, n]:.3f}" for k in KINDS for n in (4, 8))
    report(4, "scenario ordering", ok, detail)
    assert ok


def test_5_landing_error(report):
    mean = {}
    for kind in KINDS[1:]:
        errs = [r.error for s in range(20) for r in deploy_anchors(kind, SwarmConfig(seed=s))]
        mean[kind] = float(np.mean(errs))
    auto, self_loc = mean[ScenarioKind.AUTOMATIC_LANDING], mean[ScenarioKind.SELF_LOCALIZING]
    ok = 0.15 <= auto <= 0.35 and self_loc > auto
    report(5, "landing error", ok, f"automatic {auto:.3f} m, self-localizing {self_loc:.3f} m")
    assert ok


def test_6_control_robustness(report, sweep):
    spreads = {}
    for n in (4, 8):
        c = [sweep[k, n]["c_rmse"] for k in KINDS]
        spreads[n] = (max(c) - min(c)) / float(np.mean(c))
    ref = TrajectoryRef()
    t = np.arange(0, ref.duration, 0.01)
    translated = c_rmse(ref.point(t) + (0.37, -1.25), t, ref)
    ok = max(spreads.values()) < 0.5 and translated < 1e-12
    report(6, "control robustness", ok,
           f"relative spread N=4 {spreads[4]:.1%}, N=8 {spreads[8]:.1%}, translated c-RMSE {translated:.1e}")
    assert ok


def test_7_ekf_properties(report):
    rng = np.random.default_rng(7)
    anchors = np.array([(-2.0, 2.0, 0.0), (2.0, -2.0, 0.0), (2.0, 2.0, 0.0), (-2.0, -2.0, 0.0)])
    cfg = EkfConfig(gate=0)
    s = initial_state(np.zeros(3), cfg)
    worst_asym, worst_eig = 0.0, math.inf
    for k in range(100_000):
        if k % 2000 == 0:
            s = initial_state(rng.uniform(-3, 3, 3), cfg)
        if rng.random() < 0.5:
            s = predict(s, OdometrySample(rng.normal(0, 1, 2), float(rng.uniform(0, 2))),
                        float(rng.uniform(1e-3, 0.1)), cfg)
        else:
            try:
                s = update_range(s, anchors[rng.integers(4)], float(rng.uniform(0.5, 6)), float(rng.uniform(0.05, 0.5)))
            except DegenerateGeometry:
                continue
        worst_asym = max(worst_asym, float(np.abs(s.P - s.P.T).max()))
        worst_eig = min(worst_eig, float(np.linalg.eigvalsh(s.P).min()))
    psd = worst_asym <= 1e-9 and worst_eig >= -1e-9

    shift = np.array([0.6, -0.4, 0.0])
    truth = np.array([0.3, -0.5, 0.8])
    ends = []
    for offset in (np.zeros(3), shift):
        noise = np.random.default_rng(11)
        ekf = RangeEkf(truth + offset, 0.0, EkfConfig(init_sigma=0.2))
        for k in range(400):
            a = anchors[k % 4]
            ekf.range_update(0.0, a + offset, float(np.linalg.norm(truth - a) + noise.normal(0, 0.1)))
        ends.append(ekf.position[:2])
    moved = float(np.linalg.norm(ends[1] - ends[0] - shift[:2]))
    ok = psd and moved < 0.03
    report(7, "EKF properties", ok,
           f"max asymmetry {worst_asym:.1e}, min eigenvalue {worst_eig:.1e}, shift residual {moved * 100:.2f} cm")
    assert ok


def test_8_codec(report):
    rng = np.random.default_rng(8)
    kinds = list(MessageKind)
    bad = 0
    for _ in range(100_000):
        n = int(rng.integers(0, codec.MAX_PAYLOAD + 1))
        msg = UwbMessage(int(rng.integers(256)), int(rng.integers(256)), kinds[rng.integers(len(kinds))],
                         rng.bytes(n))
        if codec.decode(codec.encode(msg)) != msg:
            bad += 1
    frames = [codec.encode(UwbMessage(1, dst, MessageKind.DATA, b"x")) for dst in (3, 4, 3)]
    foreign = bytearray(frames[0])
    foreign[0] = 0xAB
    kept = list(codec.filter_stream(frames + [bytes(foreign)], 3))
    ok = bad == 0 and len(kept) == 2 and all(m.dst == 3 for m in kept)
    report(8, "codec", ok, f"{bad} roundtrip mismatches in 1e5, kept {len(kept)} of 4 frames")
    assert ok


def test_9_energy_direction(report):
    power = []
    for n in (1, 4, 8):
        power.append(summarize(run_scenario(ScenarioKind.IDEAL_LANDING, SwarmConfig(mission_drones=n)))["md_avg_power_w"])
    ok = power[0] < power[1] < power[2]
    report(9, "energy direction", ok, "MD power " + " < ".join(f"{p * 1e3:.1f} mW" for p in power))
    assert ok


def test_10_determinism(report, tmp_path):
    cfg = tmp_path / "swarm.toml"
    cfg.write_text("[run]\nseeds = [3]\n")
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert main(["run", "--config", str(cfg), "--out", str(d)]) == 0
    files = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*") if p.is_file())
    same = [(dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes() for f in files]
    ok = len(files) == 12 and all(same)
    report(10, "determinism", ok, f"{sum(same)}/{len(files)} files byte-identical")
    assert ok
