"""Per-UAV low-level tracking of a 22-node plan.

A plan covers 2.10 s with node spacing that starts at 10 ms and grows by
9 ms per interval. Between 10 Hz plan updates the controller samples the
active plan at its own rate (100 Hz by default), computes thrust and
attitude from differential flatness, and compensates estimated external
force (cable pull) with an INDI-style low-pass estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import math

import numpy as np

from . import geom
from .world import EZ, RigidBodyState, _cross3

NODE_COUNT = 22
PLAN_HORIZON = 2.1


def node_time_offsets() -> np.ndarray:
    """The 22 node times relative to plan start: 0, 0.01, 0.029, ... 2.10."""
    tau = np.zeros(NODE_COUNT)
    for j in range(1, NODE_COUNT):
        tau[j] = tau[j - 1] + 0.01 + 0.009 * (j - 1)
    return tau


NODE_OFFSETS = node_time_offsets()

FRAME_LOAD = "load-frame-at-t0"
FRAME_INERTIAL = "inertial"


class OutOfHorizon(Warning):
    pass


@dataclass
class PlanTrajectory:
    """22 nodes of (position, body rate, velocity, acceleration)."""

    t0: float
    p: np.ndarray       # (22, 3)
    omega: np.ndarray   # (22, 3)
    v: np.ndarray       # (22, 3)
    a: np.ndarray       # (22, 3)
    frame: str = FRAME_LOAD

    def __post_init__(self):
        for arr in (self.p, self.omega, self.v, self.a):
            if arr.shape != (NODE_COUNT, 3):
                raise ValueError(f"plan arrays must be ({NODE_COUNT}, 3)")

    @property
    def timestamps(self) -> np.ndarray:
        return self.t0 + NODE_OFFSETS

    def to_inertial(self, load_p: np.ndarray) -> "PlanTrajectory":
        if self.frame == FRAME_INERTIAL:
            return self
        return PlanTrajectory(self.t0, self.p + np.asarray(load_p, dtype=float),
                              self.omega, self.v, self.a, FRAME_INERTIAL)

    @staticmethod
    def hold(t0: float, p: np.ndarray, frame: str = FRAME_INERTIAL) -> "PlanTrajectory":
        """Constant-position plan with zero rates: hover in place."""
        tile = np.tile(np.asarray(p, dtype=float), (NODE_COUNT, 1))
        z = np.zeros((NODE_COUNT, 3))
        return PlanTrajectory(t0, tile, z.copy(), z.copy(), z.copy(), frame)


def sample_plan(plan: PlanTrajectory, t: float):
    """(p, v, a, omega, out_of_horizon) at time t.

    Position/velocity come from the cubic Hermite through the node (p, v)
    pairs; acceleration and body rate are interpolated linearly. Beyond the
    last node the sample clamps there and raises the out-of-horizon flag.
    """
    ts = plan.timestamps
    if t >= ts[-1]:
        return (plan.p[-1].copy(), plan.v[-1].copy(), plan.a[-1].copy(),
                plan.omega[-1].copy(), t > ts[-1] + 1e-12)
    t = max(t, ts[0])
    j = int(np.searchsorted(ts, t, side="right") - 1)
    j = min(max(j, 0), NODE_COUNT - 2)
    h = ts[j + 1] - ts[j]
    s = (t - ts[j]) / h
    s2, s3 = s * s, s * s * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    p = h00 * plan.p[j] + h10 * h * plan.v[j] + h01 * plan.p[j + 1] + h11 * h * plan.v[j + 1]
    d00 = (6 * s2 - 6 * s) / h
    d10 = 3 * s2 - 4 * s + 1
    d01 = (-6 * s2 + 6 * s) / h
    d11 = 3 * s2 - 2 * s
    v = d00 * plan.p[j] + d10 * plan.v[j] + d01 * plan.p[j + 1] + d11 * plan.v[j + 1]
    a = (1 - s) * plan.a[j] + s * plan.a[j + 1]
    om = (1 - s) * plan.omega[j] + s * plan.omega[j + 1]
    return p, v, a, om, False


@dataclass
class CtlCommand:
    thrust: float            # N, collective, >= 0
    torque: np.ndarray       # N*m, body frame


@dataclass
class CtlGains:
    kp: float = 6.0          # position, 1/s^2
    kd: float = 4.0          # velocity, 1/s
    k_att: float = 150.0     # attitude, 1/s^2; ~10x the position loop bandwidth
    k_rate: float = 25.0     # body rate, 1/s
    k_att_i: float = 40.0    # attitude integral, 1/s^3; rejects the constant
                             # torque bias from the cable pulling below the CoM
    att_i_limit: float = 0.5  # rad*s anti-windup clamp
    torque_limit: float = 0.5   # N*m per axis
    # the force estimate must stay well below the load-swing frequency
    # (~0.56 Hz at 1 m cables): compensating the oscillating component of
    # the cable pull removes the swing's only damping path and pumps it
    indi_cutoff_hz: float = 0.08
    rate_hz: float = 100.0


def desired_attitude(f_des: np.ndarray, yaw: float = 0.0) -> np.ndarray:
    """Rotation matrix whose body z axis aligns with f_des, at the given yaw."""
    zb = f_des / math.sqrt(float(f_des @ f_des))
    xc = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    yb = _cross3(zb, xc)
    n = math.sqrt(float(yb @ yb))
    if n < 1e-8:
        # thrust along the heading: fall back to the world y axis
        yb = _cross3(zb, np.array([0.0, 1.0, 0.0]))
        n = math.sqrt(float(yb @ yb))
    yb = yb / n
    xb = _cross3(yb, zb)
    return np.stack([xb, yb, zb], axis=1)


class FreeFallSingularity(Warning):
    pass


@dataclass
class FlightController:
    """Inner-loop controller for one UAV. Owns its plan and filter state."""

    mass: float
    inertia: np.ndarray
    gains: CtlGains = field(default_factory=CtlGains)
    g: float = 9.81

    plan: PlanTrajectory | None = None
    f_ext_hat: np.ndarray = field(default_factory=lambda: np.zeros(3))
    _a_filt: np.ndarray = field(default_factory=lambda: np.zeros(3))
    _att_int: np.ndarray = field(default_factory=lambda: np.zeros(3))
    _prev_v: np.ndarray | None = None
    _prev_thrust_dir: np.ndarray = field(default_factory=lambda: EZ.copy())
    _prev_thrust: float = 0.0
    _prev_R_des: np.ndarray | None = None
    out_of_horizon: bool = False

    def set_plan(self, plan: PlanTrajectory) -> None:
        """Replace the active plan atomically (called at most once per tick)."""
        self.plan = plan

    def update_force_estimate(self, state: RigidBodyState, dt: float) -> np.ndarray:
        """INDI external-force estimate from filtered velocity differences.

        f_ext = m*a_meas + m*g*ez - T*(R ez); a_meas is a lightly filtered
        finite difference of velocity, and the estimate itself is first-order
        low-passed at the (slow) INDI cutoff. Returns zero until history fills.
        """
        if self._prev_v is None:
            self._prev_v = state.v.copy()
            return self.f_ext_hat
        a_raw = (state.v - self._prev_v) / dt
        self._prev_v = state.v.copy()
        tau_a = 1.0 / (2.0 * np.pi * 10.0 * self.gains.indi_cutoff_hz)
        self._a_filt = self._a_filt + (dt / (tau_a + dt)) * (a_raw - self._a_filt)
        f_raw = self.mass * self._a_filt \
            + np.array([0.0, 0.0, self.mass * self.g]) \
            - self._prev_thrust * self._prev_thrust_dir
        tau = 1.0 / (2.0 * np.pi * self.gains.indi_cutoff_hz)
        alpha = dt / (tau + dt)
        self.f_ext_hat = self.f_ext_hat + alpha * (f_raw - self.f_ext_hat)
        return self.f_ext_hat

    def command(self, state: RigidBodyState, t: float) -> CtlCommand:
        """Flatness control toward the active plan sample at time t."""
        if self.plan is None:
            ref_p, ref_v, ref_a, ref_om = state.p, np.zeros(3), np.zeros(3), np.zeros(3)
        else:
            ref_p, ref_v, ref_a, ref_om, ooh = sample_plan(self.plan, t)
            self.out_of_horizon = ooh
        return self.track(state, ref_p, ref_v, ref_a, ref_om)

    def track(self, state: RigidBodyState, ref_p, ref_v, ref_a, ref_om) -> CtlCommand:
        g = self.gains
        a_des = ref_a + g.kp * (ref_p - state.p) + g.kd * (ref_v - state.v)
        f_des = self.mass * (a_des + np.array([0.0, 0.0, self.g])) - self.f_ext_hat
        R = geom.quat_to_matrix(state.q)
        if np.linalg.norm(f_des) < 1e-6:
            R_des = self._prev_R_des if self._prev_R_des is not None else R
            thrust = 0.0
        else:
            R_des = desired_attitude(f_des)
            thrust = max(0.0, float(f_des @ (R @ EZ)))
        self._prev_R_des = R_des
        self._prev_thrust = thrust
        self._prev_thrust_dir = R @ EZ

        e_att = geom.quat_to_rotvec(geom.matrix_to_quat(R.T @ R_des))
        self._att_int = np.clip(self._att_int + e_att / g.rate_hz,
                                -g.att_i_limit, g.att_i_limit)
        ang_acc = g.k_att * e_att + g.k_att_i * self._att_int \
            + g.k_rate * (ref_om - state.omega)
        torque = self.inertia @ ang_acc \
            + _cross3(state.omega, self.inertia @ state.omega)
        torque = np.clip(torque, -g.torque_limit, g.torque_limit)
        return CtlCommand(thrust, torque)
