import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from landloc import asl
from landloc.asl import (
    AslFailed, DegenerateConfiguration, NoSamples, ReflectionAmbiguous, TooFewAnchors,
    UnderdeterminedFrame, acquisition_schedule, align_to_mission_frame, average_pair,
    fix_frame, mds_localize, run_asl, static_anchors, trilaterate_frame,
)
from landloc.sim import Channel, ChannelModel, Simulator

SQUARE = np.array([(-2.0, 2.0), (2.0, -2.0), (2.0, 2.0), (-2.0, -2.0)])


def dist(P):
    P = np.asarray(P, float)
    return np.linalg.norm(P[:, None, :] - P[None, :, :], axis=-1)


def rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def test_schedule_default_swarm():
    sch = acquisition_schedule(4, 0.004, 100)
    assert sch.offsets == pytest.approx((0.0, 1.2, 2.0, 2.4), abs=1e-12)
    assert sch.total == pytest.approx(2.4)
    assert [sch.offset_ns(i) for i in range(4)] == [0, 1_200_000_000, 2_000_000_000, 2_400_000_000]
    assert sch.total_ns == 2_400_000_000


def test_schedule_three_anchors_one_sample():
    sch = acquisition_schedule(3, 0.004, 1)
    assert sch.offsets == pytest.approx((0.0, 0.008, 0.012))


def test_schedule_empty():
    sch = acquisition_schedule(5, 0.004, 0)
    assert set(sch.offsets) == {0.0} and sch.total == 0


def test_schedule_too_few():
    with pytest.raises(TooFewAnchors):
        acquisition_schedule(2)


def test_schedule_slots_disjoint():
    sch = acquisition_schedule(5, 0.004, 20)
    starts = sorted(sch.sample_ns(i, p, k) for i in range(5) for p in sch.peers(i) for k in range(20))
    assert len(set(starts)) == len(starts)
    assert np.all(np.diff(starts) == sch.dt_ns)


def test_average_pair():
    assert average_pair([4.0] * 100) == 4.0
    with pytest.raises(NoSamples):
        average_pair([])


def test_average_pair_three_sigma():
    rng = np.random.default_rng(0)
    inside = [abs(average_pair(rng.normal(4.0, 0.1, 100)) - 4.0) <= 0.03 for _ in range(2000)]
    assert np.mean(inside) >= 0.99


def test_mds_equilateral():
    P = np.array([(0, 0), (1, 0), (0.5, math.sqrt(3) / 2)])
    X = mds_localize(dist(P))
    assert np.allclose(dist(X), 1 - np.eye(3), atol=1e-9)


def test_mds_collinear():
    with pytest.raises(DegenerateConfiguration):
        mds_localize(dist([(0, 0), (1, 0), (2, 0)]))


def test_mds_square_distances():
    D = dist(SQUARE)
    assert sorted(D[np.triu_indices(4, 1)]) == pytest.approx([4, 4, 4, 4, math.sqrt(32), math.sqrt(32)])
    assert np.allclose(dist(mds_localize(D)), D, atol=1e-9)


def test_mds_rejects_bad_matrix():
    with pytest.raises(ValueError):
        mds_localize([[0, 1], [2, 0]])


def test_fix_frame_square():
    F = fix_frame(mds_localize(dist(SQUARE)))
    r = math.sqrt(32)
    expected = [(0, 0), (r, 0), (r / 2, r / 2), (r / 2, -r / 2)]
    assert np.allclose(F, expected, atol=1e-9)
    assert np.allclose(F, trilaterate_frame(dist(SQUARE)), atol=1e-9)


def test_fix_frame_identity():
    P = np.array([(0.0, 0.0), (3.0, 0.0), (1.0, 2.0), (2.5, -1.0)])
    assert np.allclose(fix_frame(P), P, atol=1e-15)


def test_fix_frame_errors():
    with pytest.raises(DegenerateConfiguration):
        fix_frame([(1, 1), (1, 1), (0, 3)])
    with pytest.raises(ReflectionAmbiguous):
        fix_frame([(0, 0), (1, 0), (3, 0), (0, 1)])


points = st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=3, max_size=8)


def _well_posed(P):
    P = np.asarray(P)
    d = dist(P) + np.eye(len(P))
    if d.min() < 0.5:
        return False
    F = (P - P[0]) @ rot(-math.atan2(*(P[1] - P[0])[::-1])).T
    return np.all(np.abs(F[2:, 1]) > 0.1) and abs(F[2, 1]) > 0.5 and np.linalg.svd(P - P.mean(0), compute_uv=False)[1] > 0.5


@settings(max_examples=200, deadline=None)
@given(points.filter(_well_posed), st.floats(-math.pi, math.pi), st.tuples(st.floats(-50, 50), st.floats(-50, 50)),
       st.booleans())
def test_fix_frame_is_canonical(P, theta, t, mirror):
    P = np.asarray(P)
    Q = P @ rot(theta).T + np.asarray(t)
    if mirror:
        Q[:, 1] = -Q[:, 1]
    assert np.allclose(fix_frame(P), fix_frame(Q), atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(points.filter(_well_posed))
def test_mds_exact_distances(P):
    D = dist(P)
    X = mds_localize(D)
    assert np.linalg.norm(dist(X) - D) / np.linalg.norm(D) < 1e-9


@settings(max_examples=200, deadline=None)
@given(points.filter(_well_posed))
def test_fixed_frame_matches_oracle(P):
    D = dist(P)
    assert np.allclose(fix_frame(mds_localize(D)), trilaterate_frame(D), atol=1e-8)


def test_align_identity_and_translation():
    K = np.array([(-1.0, 0.0), (1.0, 0.0)])
    T = align_to_mission_frame(K, K)
    assert T.theta == 0.0 and T.translation == (0.0, 0.0)
    T = align_to_mission_frame(K - (3.0, -2.0), K)
    assert np.allclose(T.translation, (3.0, -2.0)) and abs(T.theta) < 1e-15


@settings(max_examples=100, deadline=None)
@given(points.filter(_well_posed), st.floats(-3.1, 3.1), st.tuples(st.floats(-20, 20), st.floats(-20, 20)))
def test_align_recovers_rigid_motion(P, theta, t):
    P = np.asarray(P)
    K = P @ rot(theta).T + np.asarray(t)
    T = align_to_mission_frame(P, K[:2])
    assert np.allclose(T.apply(P), K, atol=1e-9)


def test_align_underdetermined():
    with pytest.raises(UnderdeterminedFrame):
        align_to_mission_frame([(0, 0)], [(1, 1)])


def test_payload_schemas_roundtrip():
    rep = {3: 4.25, 1: 5.656854249}
    assert asl.decode_report(asl.encode_report(rep)) == pytest.approx(rep, abs=1e-12)
    coords = np.random.default_rng(0).normal(0, 5, (9, 2))
    got = np.full_like(coords, np.nan)
    chunks = asl.encode_shares(coords)
    assert len(chunks) == 2 and all(len(c) <= 127 for c in chunks)
    for c in chunks:
        first, block = asl.decode_share(c)
        got[first:first + len(block)] = block
    assert np.allclose(got, coords, atol=1e-12)


def _run(P, sigma=0.0, seed=0, n_meas=100, drop=0.0, retry_budget=10):
    ch = Channel(Simulator(), ChannelModel(range_noise_sigma=sigma, drop_probability=drop))
    nodes = static_anchors(ch, P)
    sch = acquisition_schedule(len(nodes), 0.004, n_meas)
    return run_asl(ch, nodes, sch, np.random.default_rng(seed), retry_budget=retry_budget)


def test_run_asl_square_noiseless():
    res = _run(SQUARE)
    assert np.allclose(res.fixed, trilaterate_frame(dist(SQUARE)), atol=1e-9)
    for held in res.coordinates.values():
        assert np.array_equal(held, res.fixed)
    assert res.acquisition_end - res.acquisition_start == 2_400_000_000


def test_run_asl_exchanges_disjoint():
    res = _run(SQUARE, sigma=0.1)
    ex = sorted(res.exchanges)
    assert len(ex) == 6 * 100
    for (s0, e0, *_), (s1, _, *_) in zip(ex, ex[1:]):
        assert e0 <= s1


def test_run_asl_noise_level():
    oracle = trilaterate_frame(dist(SQUARE))
    errs = []
    for seed in range(100):
        res = _run(SQUARE, sigma=0.10, seed=seed)
        errs.append(np.linalg.norm(res.fixed - oracle, axis=1).mean())
    assert np.mean(errs) < 0.05


def test_run_asl_retry_budget():
    with pytest.raises(AslFailed):
        _run(SQUARE, drop=0.5, n_meas=40, retry_budget=3)
    res = _run(SQUARE, drop=0.05, n_meas=40, retry_budget=40, seed=3)
    assert res.failures > 0


def test_noise_scaling_with_sample_count():
    oracle = trilaterate_frame(dist(SQUARE))
    D0 = dist(SQUARE)
    rng = np.random.default_rng(9)
    err = {}
    for n in (1, 10, 100):
        e = []
        for _ in range(300):
            noise = rng.normal(0, 0.1, (4, 4, n)).mean(axis=2)
            noise = np.triu(noise, 1)
            D = D0 + noise + noise.T
            e.append(np.linalg.norm(fix_frame(mds_localize(D)) - oracle, axis=1).mean())
        err[n] = np.mean(e)
    assert err[1] > err[10] > err[100]
    assert err[1] / err[10] == pytest.approx(math.sqrt(10), rel=0.3)
    assert err[10] / err[100] == pytest.approx(math.sqrt(10), rel=0.3)
