"""Load reference trajectories: analytic shapes, set-point moves, CSV tracks.

Every generator produces a ReferenceTrajectory whose sample(t) returns
(p, v, a, q, omega) with analytic derivatives. Periodic shapes get a C2
soft start so the reference leaves rest smoothly; orientation is either
held constant or slaved to the horizontal velocity direction
(zero sideslip), with a low-speed guard that holds the last good yaw.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from . import geom
from .flightctl import NODE_COUNT, NODE_OFFSETS

ORIENT_CONSTANT = "constant"
ORIENT_ZERO_SIDESLIP = "zero_sideslip"

YAW_SPEED_GUARD = 0.05  # m/s; below this the yaw reference is held


class MalformedCsv(ValueError):
    pass


class NonMonotonicTime(ValueError):
    pass


@dataclass
class RefSample:
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    q: np.ndarray
    omega: np.ndarray  # body frame


@dataclass
class TrajSpec:
    kind: str = "eight"               # eight | circle | square | track_csv | pose_to_pose
    x_amp: float = 1.1                # eight: sine amplitude, m
    y_amp: float = 1.0                # eight: cosine-product amplitude, m
    radius: float = 2.0               # circle
    side: float = 2.0                 # square
    period: float = 10.0              # s per lap
    laps: float = 2.0
    z_amp: float = 0.0                # vertical oscillation amplitude, m
    z_freq: float = 0.1               # Hz
    base_height: float = 1.0          # m
    orientation: str = ORIENT_CONSTANT
    ramp_s: float = 2.0               # soft-start duration; 0 disables
    csv_path: str | None = None

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("period must be > 0")
        if min(self.x_amp, self.y_amp, self.radius, self.side) <= 0:
            raise ValueError("trajectory geometry must be > 0")


@dataclass
class PoseGoal:
    position: np.ndarray
    roll_deg: float = 0.0
    pitch_deg: float = 0.0
    yaw_deg: float = 0.0
    duration: float = 11.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if self.duration <= 0:
            raise ValueError("duration must be > 0")

    def quat(self) -> np.ndarray:
        return geom.quat_from_euler(math.radians(self.roll_deg),
                                    math.radians(self.pitch_deg),
                                    math.radians(self.yaw_deg))


def sample_pose_goal(rng: np.random.Generator, box=((-1.5, 1.5), (-1.5, 1.5), (0.8, 1.6)),
                     duration: float = 11.0) -> PoseGoal:
    """Random goal: roll/pitch within +-15 deg, yaw over the full circle."""
    p = np.array([rng.uniform(*box[k]) for k in range(3)])
    return PoseGoal(p,
                    roll_deg=float(rng.uniform(-15.0, 15.0)),
                    pitch_deg=float(rng.uniform(-15.0, 15.0)),
                    yaw_deg=float(rng.uniform(-180.0, 180.0)),
                    duration=duration)


def _soft_start_warp(t: float, ramp: float) -> tuple[float, float, float]:
    """Time warp w(t) with w(0)=w'(0)=w''(0)=0 and w'=1 after the ramp."""
    if ramp <= 0.0 or t >= ramp:
        return t - 0.5 * ramp if ramp > 0 else t, 1.0, 0.0
    r2, r3 = ramp * ramp, ramp ** 3
    w = t ** 3 / r2 - 0.5 * t ** 4 / r3
    wd = 3 * t * t / r2 - 2 * t ** 3 / r3
    wdd = 6 * t / r2 - 6 * t * t / r3
    return w, wd, wdd


def quintic_coeffs(p0, v0, a0, p1, v1, a1, T):
    """Quintic with full position/velocity/acceleration boundary conditions."""
    T2, T3, T4, T5 = T * T, T ** 3, T ** 4, T ** 5
    A = np.array([
        [1, 0, 0, 0, 0, 0],
        [0, 1, 0, 0, 0, 0],
        [0, 0, 2, 0, 0, 0],
        [1, T, T2, T3, T4, T5],
        [0, 1, 2 * T, 3 * T2, 4 * T3, 5 * T4],
        [0, 0, 2, 6 * T, 12 * T2, 20 * T3],
    ])
    return np.linalg.solve(A, np.array([p0, v0, a0, p1, v1, a1], dtype=float))


def eval_quintic(c, t):
    p = c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))))
    v = c[1] + t * (2 * c[2] + t * (3 * c[3] + t * (4 * c[4] + t * 5 * c[5])))
    a = 2 * c[2] + t * (6 * c[3] + t * (12 * c[4] + t * 20 * c[5]))
    return p, v, a


class ReferenceTrajectory:
    """Base: positional path plus orientation mode and soft start."""

    def __init__(self, spec: TrajSpec):
        self.spec = spec
        self.duration = spec.laps * spec.period + 0.5 * spec.ramp_s

    def _path(self, w: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def sample(self, t: float) -> RefSample:
        t = max(0.0, t)
        w, wd, wdd = _soft_start_warp(t, self.spec.ramp_s)
        w = max(0.0, w)
        p, dp, ddp = self._path(w)
        v = dp * wd
        a = ddp * wd * wd + dp * wdd
        q, om = self._orientation(t)
        return RefSample(p, v, a, q, om)

    # orientation ------------------------------------------------------------

    def _horizontal_vel(self, t: float):
        w, wd, wdd = _soft_start_warp(max(0.0, t), self.spec.ramp_s)
        w = max(0.0, w)
        p, dp, ddp = self._path(w)
        v = dp * wd
        a = ddp * wd * wd + dp * wdd
        return v, a

    def _yaw_at(self, t: float) -> float | None:
        v, _ = self._horizontal_vel(t)
        if math.hypot(v[0], v[1]) < YAW_SPEED_GUARD:
            return None
        return math.atan2(v[1], v[0])

    def _held_yaw(self, t: float) -> float:
        # scan for the most recent time the speed cleared the guard
        step = 0.005
        tt = t
        while tt > 0.0 and t - tt < 2.0:
            y = self._yaw_at(tt)
            if y is not None:
                return y
            tt -= step
        tt = t
        while tt < min(self.duration, t + 2.0):
            y = self._yaw_at(tt)
            if y is not None:
                return y
            tt += step
        return 0.0

    def _orientation(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        if self.spec.orientation == ORIENT_CONSTANT:
            return geom.QUAT_IDENTITY.copy(), np.zeros(3)
        v, a = self._horizontal_vel(t)
        sp2 = v[0] * v[0] + v[1] * v[1]
        if math.sqrt(sp2) < YAW_SPEED_GUARD:
            yaw = self._held_yaw(t)
            return geom.quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw), np.zeros(3)
        yaw = math.atan2(v[1], v[0])
        yaw_rate = (v[0] * a[1] - v[1] * a[0]) / sp2
        q = geom.quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
        return q, np.array([0.0, 0.0, yaw_rate])


class EightTrajectory(ReferenceTrajectory):
    """Gerono lemniscate: x = Xa sin(wt), y = Ya sin(wt) cos(wt)."""

    def _path(self, w):
        s = self.spec
        om = 2.0 * math.pi / s.period
        sw, cw = math.sin(om * w), math.cos(om * w)
        p = np.array([s.x_amp * sw, s.y_amp * sw * cw, 0.0])
        dp = np.array([s.x_amp * om * cw, s.y_amp * om * (cw * cw - sw * sw), 0.0])
        ddp = np.array([-s.x_amp * om * om * sw, -4.0 * s.y_amp * om * om * sw * cw, 0.0])
        return self._with_z(w, p, dp, ddp)

    def _with_z(self, w, p, dp, ddp):
        s = self.spec
        wz = 2.0 * math.pi * s.z_freq
        p[2] = s.base_height + s.z_amp * math.sin(wz * w)
        dp[2] = s.z_amp * wz * math.cos(wz * w)
        ddp[2] = -s.z_amp * wz * wz * math.sin(wz * w)
        return p, dp, ddp


class CircleTrajectory(EightTrajectory):
    def _path(self, w):
        s = self.spec
        om = 2.0 * math.pi / s.period
        r = s.radius
        p = np.array([r * math.cos(om * w), r * math.sin(om * w), 0.0])
        dp = np.array([-r * om * math.sin(om * w), r * om * math.cos(om * w), 0.0])
        ddp = np.array([-r * om * om * math.cos(om * w), -r * om * om * math.sin(om * w), 0.0])
        return self._with_z(w, p, dp, ddp)


class SquareTrajectory(EightTrajectory):
    """Square with quintic corner blends; acceleration stays continuous."""

    BLEND_FRACTION = 0.5  # of each quarter period

    def __init__(self, spec: TrajSpec):
        super().__init__(spec)
        S = spec.side
        quarter = spec.period / 4.0
        self._tb = self.BLEND_FRACTION * quarter
        self._ts = quarter - self._tb
        self._u = S / quarter  # cruise speed, from closure of the lap
        d = 0.5 * self._u * self._tb
        h = S / 2.0
        # corner k blends axis (k % 2) to a stop and starts the other axis
        self._segments = []
        starts = [np.array([-h + d, -h]), np.array([h, -h + d]),
                  np.array([h - d, h]), np.array([-h, h - d])]
        dirs = [np.array([1.0, 0.0]), np.array([0.0, 1.0]),
                np.array([-1.0, 0.0]), np.array([0.0, -1.0])]
        for k in range(4):
            u_vec = dirs[k] * self._u
            p_start = starts[k]
            p_blend = p_start + u_vec * self._ts
            nxt = dirs[(k + 1) % 4] * self._u
            p_end = starts[(k + 1) % 4]
            cx = [quintic_coeffs(p_blend[ax], u_vec[ax], 0.0,
                                 p_end[ax], nxt[ax], 0.0, self._tb)
                  for ax in range(2)]
            self._segments.append((p_start, u_vec, cx))

    def _path(self, w):
        s = self.spec
        tq = w % s.period
        k = min(3, int(tq // (s.period / 4.0)))
        tl = tq - k * s.period / 4.0
        p_start, u_vec, cx = self._segments[k]
        p = np.zeros(3)
        dp = np.zeros(3)
        ddp = np.zeros(3)
        if tl <= self._ts:
            p[:2] = p_start + u_vec * tl
            dp[:2] = u_vec
        else:
            tb = tl - self._ts
            for ax in range(2):
                p[ax], dp[ax], ddp[ax] = eval_quintic(cx[ax], tb)
        return self._with_z(w, p, dp, ddp)


class PoseToPoseTrajectory:
    """Smooth move between two full poses with zero endpoint twist."""

    def __init__(self, start_p, start_q, goal: PoseGoal):
        self.p0 = np.asarray(start_p, dtype=float)
        self.q0 = geom.quat_normalize(start_q)
        self.goal = goal
        self.p1 = goal.position
        self.q1 = goal.quat()
        self.duration = goal.duration
        q_rel = geom.quat_multiply(geom.quat_conjugate(self.q0), self.q1)
        self._rotvec = geom.quat_to_rotvec(q_rel)

    def sample(self, t: float) -> RefSample:
        T = self.duration
        tau = min(max(t / T, 0.0), 1.0)
        s = 10 * tau ** 3 - 15 * tau ** 4 + 6 * tau ** 5
        sd = (30 * tau ** 2 - 60 * tau ** 3 + 30 * tau ** 4) / T
        sdd = (60 * tau - 180 * tau ** 2 + 120 * tau ** 3) / (T * T)
        if t < 0.0 or t > T:
            sd = sdd = 0.0
        dp = self.p1 - self.p0
        q = geom.quat_multiply(self.q0, geom.quat_from_rotvec(s * self._rotvec))
        return RefSample(self.p0 + s * dp, sd * dp, sdd * dp, q, sd * self._rotvec)


class HoverTrajectory:
    """Constant pose reference."""

    def __init__(self, p, q=None, duration: float = 1e9):
        self.p = np.asarray(p, dtype=float)
        self.q = geom.QUAT_IDENTITY.copy() if q is None else geom.quat_normalize(q)
        self.duration = duration

    def sample(self, t: float) -> RefSample:
        return RefSample(self.p.copy(), np.zeros(3), np.zeros(3), self.q.copy(),
                         np.zeros(3))


class CsvTrackTrajectory(ReferenceTrajectory):
    """C2 cubic-spline fit of a t,x,y,z track file."""

    def __init__(self, path: str | Path, orientation: str = ORIENT_CONSTANT):
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or \
                    not {"t", "x", "y", "z"}.issubset(set(reader.fieldnames)):
                raise MalformedCsv("track CSV needs a header with t,x,y,z columns")
            for rec in reader:
                try:
                    rows.append([float(rec[k]) for k in ("t", "x", "y", "z")])
                except (TypeError, ValueError) as exc:
                    raise MalformedCsv(f"non-numeric row {rec!r}") from exc
        if len(rows) < 3:
            raise MalformedCsv("need at least 3 track points")
        data = np.asarray(rows)
        t = data[:, 0]
        if not (np.diff(t) > 0).all():
            raise NonMonotonicTime("time column must be strictly increasing")
        self._t0 = float(t[0])
        self._t1 = float(t[-1])
        self._spline = CubicSpline(t, data[:, 1:4], axis=0, bc_type="natural")
        self._dspline = self._spline.derivative(1)
        self._ddspline = self._spline.derivative(2)
        self.spec = TrajSpec(kind="track_csv", orientation=orientation, ramp_s=0.0,
                             csv_path=str(path))
        self.duration = self._t1 - self._t0

    def _path(self, w):
        tw = min(max(w + self._t0, self._t0), self._t1)
        p = self._spline(tw)
        if w + self._t0 < self._t0 or w + self._t0 > self._t1:
            return p, np.zeros(3), np.zeros(3)
        return p, self._dspline(tw), self._ddspline(tw)


def make_trajectory(spec: TrajSpec):
    if spec.kind == "eight":
        return EightTrajectory(spec)
    if spec.kind == "circle":
        return CircleTrajectory(spec)
    if spec.kind == "square":
        return SquareTrajectory(spec)
    if spec.kind == "track_csv":
        if spec.csv_path is None:
            raise ValueError("track_csv spec needs csv_path")
        return CsvTrackTrajectory(spec.csv_path, spec.orientation)
    raise ValueError(f"unknown trajectory kind {spec.kind!r}")


def eval_reference(spec_or_traj, t: float) -> RefSample:
    traj = make_trajectory(spec_or_traj) if isinstance(spec_or_traj, TrajSpec) \
        else spec_or_traj
    return traj.sample(t)


# -- reference windows ---------------------------------------------------------

@dataclass
class RefWindow:
    """22 future reference nodes expressed relative to the current load position."""

    t0: float
    p: np.ndarray       # (22, 3), reference position minus current load position
    v: np.ndarray
    a: np.ndarray
    q: np.ndarray       # (22, 4)
    omega: np.ndarray   # (22, 3)

    @property
    def timestamps(self) -> np.ndarray:
        return self.t0 + NODE_OFFSETS


def make_ref_window(traj, t_now: float, load_p: np.ndarray) -> RefWindow:
    load_p = np.asarray(load_p, dtype=float)
    p = np.zeros((NODE_COUNT, 3))
    v = np.zeros((NODE_COUNT, 3))
    a = np.zeros((NODE_COUNT, 3))
    q = np.zeros((NODE_COUNT, 4))
    om = np.zeros((NODE_COUNT, 3))
    for j, tau in enumerate(NODE_OFFSETS):
        s = traj.sample(t_now + tau)
        p[j] = s.p - load_p
        v[j] = s.v
        a[j] = s.a
        q[j] = s.q
        om[j] = s.omega
    return RefWindow(t_now, p, v, a, q, om)
