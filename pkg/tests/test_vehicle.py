import math

import numpy as np
import pytest

from landloc.vehicle import (
    DroneRole, DroneState, FlightMode, InvalidTransition, TrajectoryRef, VehicleParams,
    goto_command, land, sense_odometry, step_dynamics, take_off, track_trajectory,
)


def flying(pos=(0.0, 0.0, 0.8), vel=(0.0, 0.0, 0.0)):
    return DroneState(np.array(pos, float), np.array(vel, float), FlightMode.FLYING, DroneRole.MISSION)


def test_steady_state_straight_line():
    s = flying(vel=(0.4, -0.2, 0.0))
    out = step_dynamics(s, [0.4, -0.2, 0.0], 0.1)
    assert np.allclose(out.position, [0.04, -0.02, 0.8])
    assert np.allclose(out.velocity, [0.4, -0.2, 0.0])


def test_zero_command_from_rest():
    out = step_dynamics(flying(), [0.0, 0.0, 0.0], 0.5)
    assert np.array_equal(out.position, [0.0, 0.0, 0.8])


def test_step_response_time_constant():
    p = VehicleParams()
    s = flying()
    dt = 0.001
    for _ in range(int(round(p.velocity_lag / dt))):
        s = step_dynamics(s, [1.0, 0.0, 0.0], dt, p)
    assert s.velocity[0] == pytest.approx(1 - math.exp(-1), rel=1e-9)


def test_speed_limit():
    p = VehicleParams()
    s = flying()
    for _ in range(500):
        s = step_dynamics(s, [10.0, 10.0, 0.0], 0.01, p)
    assert np.hypot(*s.velocity[:2]) == pytest.approx(p.max_speed, rel=1e-6)


def test_grounded_ignores_commands():
    s = DroneState(np.zeros(3), np.zeros(3))
    assert np.array_equal(step_dynamics(s, [1, 1, 1], 0.1).position, np.zeros(3))


def test_transitions():
    s = DroneState(np.zeros(3), np.zeros(3))
    with pytest.raises(InvalidTransition):
        s.with_mode(FlightMode.FLYING)
    s = take_off(s, np.random.default_rng(0))
    assert s.mode is FlightMode.TAKING_OFF
    s = s.with_mode(FlightMode.HOVERING).with_mode(FlightMode.LANDING)
    with pytest.raises(InvalidTransition):
        land(flying(), np.random.default_rng(0))
    landed = land(s, np.random.default_rng(0))
    assert landed.mode is FlightMode.LANDED and landed.position[2] == 0.0
    with pytest.raises(InvalidTransition):
        landed.with_mode(FlightMode.TAKING_OFF)


def test_landing_noise_scale():
    p = VehicleParams(landing_sigma=0.05)
    rng = np.random.default_rng(3)
    s = flying().with_mode(FlightMode.LANDING)
    d = np.array([land(s, rng, p).position[:2] for _ in range(4000)])
    assert d.std(axis=0) == pytest.approx([0.05, 0.05], rel=0.06)


def test_exact_odometry_without_noise():
    p = VehicleParams(flow_sigma=0.0, altitude_sigma=0.0)
    s = flying(vel=(0.3, 0.1, 0.0))
    o = sense_odometry(s, np.random.default_rng(0), p)
    assert np.array_equal(o.velocity, [0.3, 0.1]) and o.altitude == 0.8


def test_odometry_same_stream_same_samples():
    s = flying(vel=(0.3, 0.1, 0.0))
    a = [sense_odometry(s, np.random.default_rng([5, 2, 1])).velocity for _ in range(1)]
    b = [sense_odometry(s, np.random.default_rng([5, 2, 1])).velocity for _ in range(1)]
    assert np.array_equal(a, b)


def test_track_on_reference_gives_feed_forward():
    ref = TrajectoryRef()
    p = VehicleParams(velocity_lag=0.0)
    cmd = track_trajectory(ref.point(2.0), ref, 2.0, p)
    assert np.allclose(cmd, ref.tangent_velocity(2.0))
    assert np.hypot(*cmd) == pytest.approx(0.95)


def test_track_from_centre_points_at_reference():
    ref = TrajectoryRef()
    p = VehicleParams(velocity_lag=0.0)
    t = 1.3
    cmd = track_trajectory(np.zeros(2), ref, t, p) - ref.tangent_velocity(t)
    target = ref.point(t)
    cross = cmd[0] * target[1] - cmd[1] * target[0]
    assert abs(cross) < 1e-12 and cmd @ target > 0


def test_noise_free_tracking_stays_on_circle():
    p = VehicleParams()
    ref = TrajectoryRef()
    s = flying(pos=(*ref.point(0.0), 0.8))
    dt = 0.01
    err = []
    for k in range(3000):
        t = k * dt
        cmd = track_trajectory(s.position, ref, t, p)
        s = step_dynamics(s, [*cmd, 0.0], dt, p)
        err.append(abs(np.hypot(*s.position[:2]) - ref.radius))
    assert max(err[500:]) < 0.03


def test_goto_saturates():
    p = VehicleParams()
    assert np.hypot(*goto_command([0, 0], [10, 0], p)) == pytest.approx(p.cruise_speed)
    assert np.allclose(goto_command([0, 0], [0.1, 0], p), [p.tracking_gain * 0.1, 0])


def test_reference_geometry():
    ref = TrajectoryRef(phase=math.pi / 2)
    assert np.allclose(ref.point(0.0), [0.0, 1.5])
    period = 2 * math.pi * ref.radius / ref.speed
    assert np.allclose(ref.point(period), ref.point(0.0))
    with pytest.raises(ValueError):
        TrajectoryRef(radius=0.0)
