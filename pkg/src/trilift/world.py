"""Deterministic rigid-body simulator: 3 UAVs + tension-only cables + 6-DOF load.

The cable model is a stiff unilateral spring-damper: a cable transmits
force only along its own axis, only while stretched, and never a moment.
Integration is fixed-step RK4 on the packed state of all bodies;
quaternions are renormalized after each step. Everything is float64 and
fully determined by the initial state, the inputs, and the rng.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import geom

GRAVITY = 9.81
EZ = np.array([0.0, 0.0, 1.0])


class CoincidentAttachPoints(ValueError):
    """Cable endpoints closer than 1e-9 m; the cable direction is undefined."""


class NumericalBlowup(RuntimeError):
    """A state magnitude exceeded 1e6; the integration has diverged."""


@dataclass
class RigidBodyState:
    p: np.ndarray          # position, m, inertial
    v: np.ndarray          # velocity, m/s, inertial
    q: np.ndarray          # unit quaternion, scalar-first, body->world
    omega: np.ndarray      # angular velocity, rad/s, body frame

    def copy(self) -> "RigidBodyState":
        return RigidBodyState(self.p.copy(), self.v.copy(), self.q.copy(),
                              self.omega.copy())

    @staticmethod
    def at_rest(p, q=None) -> "RigidBodyState":
        return RigidBodyState(np.asarray(p, dtype=float),
                              np.zeros(3),
                              geom.QUAT_IDENTITY.copy() if q is None else np.asarray(q, dtype=float),
                              np.zeros(3))


@dataclass
class CableSpec:
    rho_load: np.ndarray   # attach point on load, load body frame, m
    r_uav: np.ndarray      # attach point on UAV, UAV body frame, m
    length: float          # natural length, m
    stiffness: float       # N/m
    damping: float         # N*s/m

    def __post_init__(self):
        self.rho_load = np.asarray(self.rho_load, dtype=float)
        self.r_uav = np.asarray(self.r_uav, dtype=float)
        if self.length <= 0 or self.stiffness <= 0 or self.damping < 0:
            raise ValueError("cable spec requires l > 0, k > 0, c >= 0")


def _cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross has ~30x overhead for single 3-vectors; this runs in the
    # innermost integration loop
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


@dataclass
class WorldParams:
    m_uav: float = 0.6
    m_load: float = 1.4
    j_uav: np.ndarray = field(default_factory=lambda: np.diag([2.5e-3, 2.5e-3, 4e-3]))
    j_load: np.ndarray = field(default_factory=lambda: 0.02 * np.eye(3))
    g: float = GRAVITY

    def __post_init__(self):
        self.j_uav_inv = np.linalg.inv(self.j_uav)
        self.j_load_inv = np.linalg.inv(self.j_load)


@dataclass
class SloshSpec:
    mass: float = 0.6
    half_extent: float = 0.1   # cubic box half side, m, in the load frame
    stiffness: float = 5000.0
    damping: float = 50.0


@dataclass
class SloshState:
    spec: SloshSpec
    p: np.ndarray              # ball position, inertial
    v: np.ndarray


@dataclass
class DisturbanceSpec:
    force_dir: np.ndarray
    torque_dir: np.ndarray
    force_max: float
    torque_max: float
    active: bool = True

    @staticmethod
    def none() -> "DisturbanceSpec":
        return DisturbanceSpec(EZ.copy(), EZ.copy(), 0.0, 0.0, active=False)


@dataclass
class WorldState:
    t: float
    uavs: list[RigidBodyState]
    load: RigidBodyState
    cables: list[CableSpec]
    tensions: np.ndarray
    params: WorldParams
    slosh: SloshState | None = None

    def copy(self) -> "WorldState":
        slosh = None
        if self.slosh is not None:
            slosh = SloshState(self.slosh.spec, self.slosh.p.copy(), self.slosh.v.copy())
        return WorldState(self.t, [u.copy() for u in self.uavs], self.load.copy(),
                          list(self.cables), self.tensions.copy(), self.params, slosh)


def attach_points(uav: RigidBodyState, load: RigidBodyState,
                  spec: CableSpec) -> tuple[np.ndarray, np.ndarray]:
    """(p_on_load, p_on_uav) cable endpoints in the inertial frame."""
    p1 = load.p + geom.quat_rotate(load.q, spec.rho_load)
    p2 = uav.p + geom.quat_rotate(uav.q, spec.r_uav)
    return p1, p2


def cable_wrench(uav: RigidBodyState, load: RigidBodyState,
                 spec: CableSpec) -> tuple[np.ndarray, float]:
    """Force the cable applies to the load, and the scalar tension.

    Slack cables (endpoint distance <= natural length) transmit nothing.
    """
    force, _, tension = _cable_force_detail(uav, load, spec)
    return force, tension


def _cable_force_detail(uav, load, spec):
    R_l = geom.quat_to_matrix(load.q)
    R_u = geom.quat_to_matrix(uav.q)
    r1w = R_l @ spec.rho_load
    r2w = R_u @ spec.r_uav
    p1 = load.p + r1w
    p2 = uav.p + r2w
    d_vec = p2 - p1
    d = float(np.linalg.norm(d_vec))
    if d < 1e-9:
        raise CoincidentAttachPoints(f"cable endpoints {d:.2e} m apart")
    u = d_vec / d
    if d <= spec.length:
        return np.zeros(3), u, 0.0
    v1 = load.v + R_l @ np.cross(load.omega, spec.rho_load)
    v2 = uav.v + R_u @ np.cross(uav.omega, spec.r_uav)
    d_rate = float(u @ (v2 - v1))
    tension = max(0.0, spec.stiffness * (d - spec.length) + spec.damping * d_rate)
    return tension * u, u, tension


def sample_disturbance(rng: np.random.Generator, force_max: float,
                       torque_max: float) -> DisturbanceSpec:
    """Episode-fixed disturbance directions, uniform on the unit sphere."""
    if force_max < 0 or torque_max < 0:
        raise ValueError("disturbance maxima must be >= 0")

    def unit(g):
        v = g.normal(size=3)
        n = np.linalg.norm(v)
        while n < 1e-12:
            v = g.normal(size=3)
            n = np.linalg.norm(v)
        return v / n

    return DisturbanceSpec(unit(rng), unit(rng), force_max, torque_max, active=True)


# -- packed-state integration -------------------------------------------------

_NB = 13  # per rigid body: p(3) v(3) q(4) omega(3)


def _pack(w: WorldState) -> np.ndarray:
    bodies = [w.load] + w.uavs
    n = _NB * len(bodies) + (6 if w.slosh is not None else 0)
    y = np.empty(n)
    for k, b in enumerate(bodies):
        o = k * _NB
        y[o:o + 3] = b.p
        y[o + 3:o + 6] = b.v
        y[o + 6:o + 10] = b.q
        y[o + 10:o + 13] = b.omega
    if w.slosh is not None:
        y[-6:-3] = w.slosh.p
        y[-3:] = w.slosh.v
    return y


def _body_view(y: np.ndarray, k: int):
    o = k * _NB
    return y[o:o + 3], y[o + 3:o + 6], y[o + 6:o + 10], y[o + 10:o + 13]


def _derivative(y: np.ndarray, w: WorldState, thrusts: np.ndarray,
                torques: np.ndarray, dist_f: np.ndarray, dist_tau: np.ndarray,
                tensions_out: np.ndarray | None = None) -> np.ndarray:
    par = w.params
    dy = np.zeros_like(y)
    lp, lv, lq, lw = _body_view(y, 0)
    R_l = geom.quat_to_matrix(lq)

    load_force = np.array([0.0, 0.0, -par.m_load * par.g]) + dist_f
    load_torque_w = dist_tau.copy()

    for i in range(3):
        up, uv, uq, uw = _body_view(y, i + 1)
        spec = w.cables[i]
        R_u = geom.quat_to_matrix(uq)
        r1w = R_l @ spec.rho_load
        r2w = R_u @ spec.r_uav
        d_vec = (up + r2w) - (lp + r1w)
        d = float(np.linalg.norm(d_vec))
        if d < 1e-9:
            raise CoincidentAttachPoints(f"cable {i} endpoints {d:.2e} m apart")
        if d > spec.length:
            u_hat = d_vec / d
            v1 = lv + R_l @ _cross3(lw, spec.rho_load)
            v2 = uv + R_u @ _cross3(uw, spec.r_uav)
            d_rate = float(u_hat @ (v2 - v1))
            tension = max(0.0, spec.stiffness * (d - spec.length)
                          + spec.damping * d_rate)
        else:
            u_hat = d_vec / d
            tension = 0.0
        if tensions_out is not None:
            tensions_out[i] = tension
        f_on_load = tension * u_hat
        load_force += f_on_load
        load_torque_w += _cross3(r1w, f_on_load)

        # UAV dynamics
        f_uav = thrusts[i] * R_u[:, 2] - f_on_load
        f_uav[2] -= par.m_uav * par.g
        tau_body = torques[i] + _cross3(spec.r_uav, R_u.T @ (-f_on_load))
        o = (i + 1) * _NB
        dy[o:o + 3] = uv
        dy[o + 3:o + 6] = f_uav / par.m_uav
        w0, x0, y0, z0 = uq
        wx, wy, wz = uw
        dy[o + 6] = 0.5 * (-x0 * wx - y0 * wy - z0 * wz)
        dy[o + 7] = 0.5 * (w0 * wx + y0 * wz - z0 * wy)
        dy[o + 8] = 0.5 * (w0 * wy - x0 * wz + z0 * wx)
        dy[o + 9] = 0.5 * (w0 * wz + x0 * wy - y0 * wx)
        dy[o + 10:o + 13] = par.j_uav_inv @ (
            tau_body - _cross3(uw, par.j_uav @ uw))

    if w.slosh is not None:
        spec = w.slosh.spec
        bp = y[-6:-3]
        bv = y[-3:]
        rel = R_l.T @ (bp - lp)
        rel_v = R_l.T @ (bv - lv)
        f_local = np.zeros(3)
        for ax in range(3):
            over = rel[ax] - spec.half_extent
            under = -spec.half_extent - rel[ax]
            if over > 0:
                f_local[ax] = -spec.stiffness * over - spec.damping * rel_v[ax]
            elif under > 0:
                f_local[ax] = spec.stiffness * under - spec.damping * rel_v[ax]
        f_ball = R_l @ f_local
        dy[-6:-3] = bv
        dy[-3:] = f_ball / spec.mass + np.array([0.0, 0.0, -par.g])
        load_force -= f_ball
        load_torque_w += _cross3(bp - lp, -f_ball)

    dy[0:3] = lv
    dy[3:6] = load_force / par.m_load
    w0, x0, y0, z0 = lq
    wx, wy, wz = lw
    dy[6] = 0.5 * (-x0 * wx - y0 * wy - z0 * wz)
    dy[7] = 0.5 * (w0 * wx + y0 * wz - z0 * wy)
    dy[8] = 0.5 * (w0 * wy - x0 * wz + z0 * wx)
    dy[9] = 0.5 * (w0 * wz + x0 * wy - y0 * wx)
    dy[10:13] = par.j_load_inv @ (
        R_l.T @ load_torque_w - _cross3(lw, par.j_load @ lw))
    return dy


def step(w: WorldState, inputs: list[tuple[float, np.ndarray]], dt: float,
         dist: DisturbanceSpec | None = None,
         rng: np.random.Generator | None = None) -> WorldState:
    """Advance the world by one RK4 step of size dt.

    inputs is one (thrust N, body torque N*m) pair per UAV. When the
    disturbance is active, a force/torque of uniformly random magnitude is
    applied to the load along the episode-fixed directions, held constant
    over the step.
    """
    if not (0.0 < dt <= 0.01):
        raise ValueError("dt must be in (0, 0.01]")
    thrusts = np.array([float(th) for th, _ in inputs])
    if (thrusts < 0).any():
        raise ValueError("thrust must be >= 0")
    torques = np.stack([np.asarray(tq, dtype=float) for _, tq in inputs])

    dist_f = np.zeros(3)
    dist_tau = np.zeros(3)
    if dist is not None and dist.active:
        if rng is None:
            raise ValueError("active disturbance requires an rng")
        dist_f = float(rng.uniform(0.0, dist.force_max)) * dist.force_dir \
            if dist.force_max > 0 else np.zeros(3)
        dist_tau = float(rng.uniform(0.0, dist.torque_max)) * dist.torque_dir \
            if dist.torque_max > 0 else np.zeros(3)

    y0 = _pack(w)
    tensions = np.zeros(3)
    k1 = _derivative(y0, w, thrusts, torques, dist_f, dist_tau, tensions)
    k2 = _derivative(y0 + 0.5 * dt * k1, w, thrusts, torques, dist_f, dist_tau)
    k3 = _derivative(y0 + 0.5 * dt * k2, w, thrusts, torques, dist_f, dist_tau)
    k4 = _derivative(y0 + dt * k3, w, thrusts, torques, dist_f, dist_tau)
    y1 = y0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    if np.abs(y1).max() > 1e6 or not np.isfinite(y1).all():
        raise NumericalBlowup(f"state magnitude {np.abs(y1).max():.3e} at t={w.t:.3f}")

    bodies = []
    for k in range(4):
        p, v, q, om = _body_view(y1, k)
        bodies.append(RigidBodyState(p.copy(), v.copy(),
                                     geom.quat_normalize(q), om.copy()))
    slosh = None
    if w.slosh is not None:
        slosh = SloshState(w.slosh.spec, y1[-6:-3].copy(), y1[-3:].copy())
    return WorldState(w.t + dt, bodies[1:], bodies[0], list(w.cables),
                      tensions, w.params, slosh)


def mechanical_energy(w: WorldState) -> float:
    """Kinetic + gravitational + cable-elastic energy of the whole system."""
    par = w.params
    e = 0.5 * par.m_load * float(w.load.v @ w.load.v) \
        + 0.5 * float(w.load.omega @ (par.j_load @ w.load.omega)) \
        + par.m_load * par.g * w.load.p[2]
    for u in w.uavs:
        e += 0.5 * par.m_uav * float(u.v @ u.v) \
            + 0.5 * float(u.omega @ (par.j_uav @ u.omega)) \
            + par.m_uav * par.g * u.p[2]
    for i, spec in enumerate(w.cables):
        p1, p2 = attach_points(w.uavs[i], w.load, spec)
        stretch = np.linalg.norm(p2 - p1) - spec.length
        if stretch > 0:
            e += 0.5 * spec.stiffness * stretch ** 2
    if w.slosh is not None:
        s = w.slosh
        e += 0.5 * s.spec.mass * float(s.v @ s.v) + s.spec.mass * par.g * s.p[2]
        rel = geom.quat_to_matrix(w.load.q).T @ (s.p - w.load.p)
        for ax in range(3):
            pen = abs(rel[ax]) - s.spec.half_extent
            if pen > 0:
                e += 0.5 * s.spec.stiffness * pen ** 2
    return e


def total_momentum(w: WorldState) -> np.ndarray:
    par = w.params
    mom = par.m_load * w.load.v + sum(par.m_uav * u.v for u in w.uavs)
    if w.slosh is not None:
        mom = mom + w.slosh.spec.mass * w.slosh.v
    return mom


# -- scenario configuration ----------------------------------------------------

DEFAULT_ATTACH_RADIUS = 0.25
DEFAULT_CABLE_LENGTH = 1.0
DEFAULT_CABLE_STIFFNESS = 1000.0
DEFAULT_CABLE_DAMPING = 20.0
UAV_ATTACH_OFFSET = np.array([0.0, 0.0, -0.03])


def default_attach_points(radius: float = DEFAULT_ATTACH_RADIUS) -> list[np.ndarray]:
    """Three load attach points at 0/120/240 degrees in the load plane."""
    pts = []
    for k in range(3):
        a = 2.0 * np.pi * k / 3.0
        pts.append(np.array([radius * np.cos(a), radius * np.sin(a), 0.0]))
    return pts


@dataclass
class ScenarioConfig:
    """World build options, loadable from a JSON scenario file."""

    m_uav: float = 0.6
    m_load: float = 1.4
    mass_multiplier: float = 1.0
    cable_length: float = DEFAULT_CABLE_LENGTH
    cable_stiffness: float = DEFAULT_CABLE_STIFFNESS
    cable_damping: float = DEFAULT_CABLE_DAMPING
    attach_radius: float = DEFAULT_ATTACH_RADIUS
    attach_offsets: list | None = None      # per-cable xyz offsets on the load, m
    cable_length_deltas: list | None = None  # per-cable length change, m
    slosh: bool = False
    force_max: float = 0.0
    torque_max: float = 0.0
    physics_dt: float = 0.002
    seed: int = 0

    @staticmethod
    def from_json(path: str | Path) -> "ScenarioConfig":
        raw = json.loads(Path(path).read_text())
        known = {f for f in ScenarioConfig.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return ScenarioConfig(**raw)


def make_cables(cfg: ScenarioConfig) -> list[CableSpec]:
    cables = []
    for i, rho in enumerate(default_attach_points(cfg.attach_radius)):
        if cfg.attach_offsets is not None:
            rho = rho + np.asarray(cfg.attach_offsets[i], dtype=float)
        length = cfg.cable_length
        if cfg.cable_length_deltas is not None:
            length += float(cfg.cable_length_deltas[i])
        cables.append(CableSpec(rho, UAV_ATTACH_OFFSET.copy(), length,
                                cfg.cable_stiffness, cfg.cable_damping))
    return cables


def make_world(cfg: ScenarioConfig, load_p=None, load_q=None) -> WorldState:
    """World at rest: load at load_p, UAVs hanging-height above each attach point."""
    params = WorldParams(m_uav=cfg.m_uav, m_load=cfg.m_load * cfg.mass_multiplier)
    cables = make_cables(cfg)
    load = RigidBodyState.at_rest(
        np.zeros(3) if load_p is None else np.asarray(load_p, dtype=float), load_q)
    uavs = []
    for spec in cables:
        top = load.p + geom.quat_rotate(load.q, spec.rho_load) \
            + np.array([0.0, 0.0, spec.length]) - UAV_ATTACH_OFFSET
        uavs.append(RigidBodyState.at_rest(top))
    slosh = None
    if cfg.slosh:
        slosh = SloshState(SloshSpec(), load.p.copy(), np.zeros(3))
    return WorldState(0.0, uavs, load, cables, np.zeros(3), params, slosh)
