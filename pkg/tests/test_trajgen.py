import math

import numpy as np
import pytest

from trilift import geom, trajgen
from trilift.flightctl import NODE_OFFSETS
from trilift.trajgen import (PoseGoal, PoseToPoseTrajectory, TrajSpec,
                             eval_reference, make_ref_window, make_trajectory,
                             sample_pose_goal)


def fd_check(traj, times, tol=1e-5):
    for t in times:
        s = traj.sample(t)
        h = 1e-6
        v_fd = (traj.sample(t + h).p - traj.sample(t - h).p) / (2 * h)
        assert np.abs(s.v - v_fd).max() < tol * max(1.0, np.abs(s.v).max()), t
        h = 1e-4  # larger step: the 2nd difference amplifies roundoff by 1/h^2
        a_fd = (traj.sample(t + h).p - 2 * s.p + traj.sample(t - h).p) / (h * h)
        assert np.abs(s.a - a_fd).max() < 1e-4 * max(1.0, np.abs(s.a).max()), t


class TestEight:
    def test_starts_at_crossing(self):
        spec = TrajSpec(kind="eight", ramp_s=0.0, base_height=1.0)
        s = eval_reference(spec, 0.0)
        assert np.allclose(s.p, [0, 0, 1.0])

    def test_derivative_consistency(self):
        traj = make_trajectory(TrajSpec(kind="eight", z_amp=0.2, ramp_s=2.0))
        fd_check(traj, np.linspace(0.5, 15.0, 40))

    def test_soft_start_from_rest(self):
        traj = make_trajectory(TrajSpec(kind="eight", ramp_s=2.0))
        s = traj.sample(0.0)
        assert np.allclose(s.v, 0.0, atol=1e-9)
        assert np.allclose(s.a, 0.0, atol=1e-6)

    def test_no_ramp_periodicity(self):
        traj = make_trajectory(TrajSpec(kind="eight", ramp_s=0.0, period=8.0))
        a = traj.sample(1.0)
        b = traj.sample(9.0)
        assert np.allclose(a.p, b.p, atol=1e-9)


class TestCircle:
    def test_constant_speed(self):
        spec = TrajSpec(kind="circle", radius=2.0, period=10.0, ramp_s=0.0)
        traj = make_trajectory(spec)
        for t in np.linspace(0, 10, 17):
            s = traj.sample(t)
            assert np.linalg.norm(s.v) == pytest.approx(2.0 * 2 * math.pi / 10.0)

    def test_derivative_consistency(self):
        traj = make_trajectory(TrajSpec(kind="circle", radius=1.5, z_amp=0.1,
                                        ramp_s=1.0))
        fd_check(traj, np.linspace(0.3, 12.0, 30))


class TestSquare:
    def test_c2_acceleration_continuous(self):
        traj = make_trajectory(TrajSpec(kind="square", side=2.0, period=12.0,
                                        ramp_s=0.0))
        ts = np.linspace(0.0, 12.0, 4801)
        accs = np.array([traj.sample(t).a for t in ts])
        da = np.linalg.norm(np.diff(accs, axis=0), axis=1)
        # acceleration may move quickly inside blends but must not jump
        assert da.max() < 20.0 * (ts[1] - ts[0]) * 60

    def test_closes_loop(self):
        traj = make_trajectory(TrajSpec(kind="square", side=2.0, period=12.0,
                                        ramp_s=0.0))
        a = traj.sample(0.0)
        b = traj.sample(12.0)
        assert np.allclose(a.p, b.p, atol=1e-9)

    def test_derivative_consistency(self):
        traj = make_trajectory(TrajSpec(kind="square", side=2.0, period=12.0,
                                        ramp_s=0.0))
        fd_check(traj, np.linspace(0.1, 11.9, 60))

    def test_corners_reached(self):
        traj = make_trajectory(TrajSpec(kind="square", side=2.0, period=12.0,
                                        ramp_s=0.0))
        ts = np.linspace(0, 12, 2000)
        pts = np.array([traj.sample(t).p[:2] for t in ts])
        assert pts[:, 0].max() == pytest.approx(1.0, abs=1e-6)
        assert pts[:, 1].min() == pytest.approx(-1.0, abs=1e-6)


class TestZeroSideslip:
    def test_yaw_follows_velocity(self):
        spec = TrajSpec(kind="circle", radius=2.0, period=10.0, ramp_s=0.0,
                        orientation="zero_sideslip")
        traj = make_trajectory(spec)
        s = traj.sample(2.5)
        yaw = math.atan2(s.v[1], s.v[0])
        _, _, yaw_q = geom.quat_to_euler(s.q)
        assert yaw_q == pytest.approx(yaw, abs=1e-9)

    def test_diagonal_velocity_gives_45deg(self):
        # at t=0 an unramped circle moves along +y; rotate phase via period
        class Diag(trajgen.ReferenceTrajectory):
            def _path(self, w):
                v = np.array([1.0, 1.0, 0.0])
                return v * w, v, np.zeros(3)

        traj = Diag(TrajSpec(kind="eight", ramp_s=0.0, orientation="zero_sideslip"))
        s = traj.sample(1.0)
        _, _, yaw = geom.quat_to_euler(s.q)
        assert yaw == pytest.approx(math.radians(45.0), abs=1e-12)

    def test_omega_matches_fd_yaw(self):
        spec = TrajSpec(kind="eight", x_amp=1.1, y_amp=1.0, period=10.0,
                        ramp_s=0.0, orientation="zero_sideslip")
        traj = make_trajectory(spec)
        h = 1e-5
        for t in np.linspace(0.8, 4.2, 15):
            s = traj.sample(t)
            if np.hypot(*s.v[:2]) < 0.2:
                continue
            _, _, y0 = geom.quat_to_euler(traj.sample(t - h).q)
            _, _, y1 = geom.quat_to_euler(traj.sample(t + h).q)
            dy = (y1 - y0 + math.pi) % (2 * math.pi) - math.pi
            assert s.omega[2] == pytest.approx(dy / (2 * h), abs=1e-4)

    def test_low_speed_guard_holds_yaw(self):
        spec = TrajSpec(kind="eight", ramp_s=2.0, orientation="zero_sideslip")
        traj = make_trajectory(spec)
        s = traj.sample(0.0)  # at rest inside the guard
        assert np.allclose(s.omega, 0.0)
        _, _, yaw0 = geom.quat_to_euler(s.q)
        # held yaw equals the yaw of the first moving instant
        for t in np.linspace(0.01, 2.0, 50):
            sm = traj.sample(t)
            if np.hypot(*sm.v[:2]) >= trajgen.YAW_SPEED_GUARD:
                _, _, yaw_move = geom.quat_to_euler(sm.q)
                break
        assert yaw0 == pytest.approx(yaw_move, abs=0.2)


class TestPoseToPose:
    def test_quintic_time_scaling(self):
        goal = PoseGoal(np.array([1.0, 0, 1.0]), duration=11.0)
        traj = PoseToPoseTrajectory(np.zeros(3), geom.QUAT_IDENTITY, goal)
        s0 = traj.sample(0.0)
        sT = traj.sample(11.0)
        sm = traj.sample(5.5)
        assert np.allclose(s0.p, 0.0) and np.allclose(s0.v, 0.0) and np.allclose(s0.a, 0.0, atol=1e-12)
        assert np.allclose(sT.p, goal.position) and np.allclose(sT.v, 0.0)
        assert np.allclose(sm.p, 0.5 * goal.position)

    def test_start_equals_goal_constant(self):
        q = geom.quat_from_euler(0.1, -0.1, 0.7)
        goal = PoseGoal(np.array([1.0, 2, 1]), roll_deg=math.degrees(0.1))
        goal.position = np.array([1.0, 2, 1])
        traj = PoseToPoseTrajectory(np.array([1.0, 2, 1]), goal.quat(), goal)
        for t in (0.0, 3.3, 11.0):
            s = traj.sample(t)
            assert np.allclose(s.p, [1, 2, 1])
            assert np.allclose(s.v, 0.0)
            assert np.allclose(s.omega, 0.0)

    def test_orientation_slerp_endpoints(self):
        goal = PoseGoal(np.zeros(3), roll_deg=10.0, pitch_deg=-12.0, yaw_deg=160.0)
        q0 = geom.quat_from_euler(0.05, 0.0, -1.0)
        traj = PoseToPoseTrajectory(np.zeros(3), q0, goal)
        assert geom.geodesic_deg(traj.sample(0.0).q, q0) < 1e-9
        assert geom.geodesic_deg(traj.sample(11.0).q, goal.quat()) < 1e-9

    def test_hold_after_duration(self):
        goal = PoseGoal(np.array([0.5, 0, 1]))
        traj = PoseToPoseTrajectory(np.zeros(3), geom.QUAT_IDENTITY, goal)
        s = traj.sample(14.0)
        assert np.allclose(s.p, goal.position)
        assert np.allclose(s.v, 0.0)

    def test_goal_sampler_ranges(self):
        rng = np.random.default_rng(0)
        goals = [sample_pose_goal(rng) for _ in range(500)]
        rolls = np.array([g.roll_deg for g in goals])
        pitches = np.array([g.pitch_deg for g in goals])
        yaws = np.array([g.yaw_deg for g in goals])
        assert np.abs(rolls).max() <= 15.0 and np.abs(pitches).max() <= 15.0
        assert yaws.min() < -150 and yaws.max() > 150
        assert np.abs(rolls).max() > 10.0  # actually spans the range


class TestCsvTrack:
    def _write(self, tmp_path, rows, header="t,x,y,z"):
        path = tmp_path / "track.csv"
        path.write_text(header + "\n" + "\n".join(rows) + "\n")
        return path

    def test_straight_line_constant_speed(self, tmp_path):
        path = self._write(tmp_path, ["0,0,0,1", "1,1,0,1", "2,2,0,1"])
        traj = trajgen.CsvTrackTrajectory(path)
        for t in (0.2, 0.9, 1.7):
            s = traj.sample(t)
            assert np.allclose(s.v, [1, 0, 0], atol=1e-9)

    def test_knots_reproduced(self, tmp_path):
        rows = ["0,0,0,1", "1,1,0.5,1.2", "2,1.5,1.5,0.9", "3,0.2,2.0,1.1"]
        path = self._write(tmp_path, rows)
        traj = trajgen.CsvTrackTrajectory(path)
        for row in rows:
            t, x, y, z = (float(v) for v in row.split(","))
            assert np.allclose(traj.sample(t).p, [x, y, z], atol=1e-12)

    def test_non_monotonic_time(self, tmp_path):
        path = self._write(tmp_path, ["0,0,0,1", "2,1,0,1", "1,2,0,1"])
        with pytest.raises(trajgen.NonMonotonicTime):
            trajgen.CsvTrackTrajectory(path)

    def test_malformed_header(self, tmp_path):
        path = self._write(tmp_path, ["0,0,0"], header="t,x,y")
        with pytest.raises(trajgen.MalformedCsv):
            trajgen.CsvTrackTrajectory(path)

    def test_malformed_value(self, tmp_path):
        path = self._write(tmp_path, ["0,0,0,1", "1,a,0,1", "2,1,0,1"])
        with pytest.raises(trajgen.MalformedCsv):
            trajgen.CsvTrackTrajectory(path)


class TestRefWindow:
    def test_node_times(self):
        traj = make_trajectory(TrajSpec(kind="eight"))
        win = make_ref_window(traj, 3.0, np.zeros(3))
        assert win.timestamps[0] == 3.0
        assert win.timestamps[-1] == pytest.approx(5.10, abs=1e-12)

    def test_hover_window_is_zero(self):
        p0 = np.array([0.3, -0.2, 1.1])
        traj = trajgen.HoverTrajectory(p0)
        win = make_ref_window(traj, 0.0, p0)
        assert np.allclose(win.p, 0.0)
        assert np.allclose(win.v, 0.0)

    def test_matches_direct_eval(self):
        spec = TrajSpec(kind="circle", radius=1.0, period=8.0)
        traj = make_trajectory(spec)
        load_p = np.array([0.1, 0.2, 0.9])
        win = make_ref_window(traj, 1.5, load_p)
        for j in (0, 7, 21):
            s = traj.sample(1.5 + NODE_OFFSETS[j])
            assert np.allclose(win.p[j], s.p - load_p)
            assert np.allclose(win.v[j], s.v)
            assert np.allclose(win.q[j], s.q)
