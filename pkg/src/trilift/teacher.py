"""Centralized privileged planner: full state + 22-node load reference in,
one 22-node trajectory per UAV out, at the 10 Hz planning rate.

The pipeline per node: desired load wrench (feedback at the first node,
feedforward beyond it) -> minimum-norm per-cable force allocation ->
cable directions -> UAV positions one cable length along each direction
-> finite-differenced node velocities/accelerations and flatness body
rates. A radial spreading repair keeps same-index nodes of different
UAVs at least the configured separation apart.

All plan positions are relative to the current load position, so the
planner's output is invariant to translating the whole world.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geom
from .flightctl import FRAME_LOAD, NODE_COUNT, NODE_OFFSETS, PlanTrajectory, desired_attitude
from .trajgen import RefWindow
from .world import (EZ, RigidBodyState, ScenarioConfig, WorldState, _cross3,
                    default_attach_points)


class UnallocatableWrench(RuntimeError):
    """The pseudoinverse solve left a residual above tolerance."""


@dataclass
class Wrench:
    force: np.ndarray   # N, inertial
    torque: np.ndarray  # N*m, inertial, about the load CoM


@dataclass
class TeacherGains:
    # position feedback must stay gentle: it reaches the load through the
    # UAVs' tracking lag, and at the ~0.5 Hz swing mode stiffer gains arrive
    # ~90 deg late and pump the pendulum instead of damping it
    kp: float = 4.0      # N per m of load position error
    kd: float = 3.0      # N per m/s
    kq: float = 9.0      # 1/s^2 on the attitude error rotation vector
    kw: float = 5.0      # 1/s on body-rate error
    # slow integrals: the load's standing pose error under cm-level UAV
    # tracking cannot be removed by proportional terms alone (equilibrium
    # attitude shifts ~0.2 deg per mm of anchor error)
    ki_p: float = 2.0    # N per m*s
    ki_q: float = 4.0    # 1/s^3
    i_limit: float = 0.5  # integral clamps, m*s and rad*s
    # geometric attitude feedback: tilt the planned anchor frame beyond the
    # reference; the anchor attitude is the strong actuation channel for the
    # load attitude (the wrench torque only commands micron-scale stretch)
    kgq: float = 0.6     # anchor tilt per rad of attitude error
    kgw: float = 0.25    # anchor tilt per rad/s of rate error, s
    kg_limit: float = 0.35  # rad clamp on the anchor tilt correction


@dataclass
class TeacherModel:
    """Nominal parameters the planner believes; may differ from the true world."""

    m_load: float = 1.4
    m_uav: float = 0.6
    j_load: np.ndarray = field(default_factory=lambda: 0.02 * np.eye(3))
    rhos: list = field(default_factory=default_attach_points)
    cable_length: float = 1.0
    cable_stiffness: float = 1000.0
    uav_attach_offset: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -0.03]))
    g: float = 9.81

    @staticmethod
    def from_config(cfg: ScenarioConfig) -> "TeacherModel":
        return TeacherModel(m_load=cfg.m_load, m_uav=cfg.m_uav,
                            rhos=default_attach_points(cfg.attach_radius),
                            cable_length=cfg.cable_length,
                            cable_stiffness=cfg.cable_stiffness)


def desired_load_wrench(load: RigidBodyState, ref_p_rel, ref_v, ref_a,
                        ref_q, ref_omega, m_load: float, j_load: np.ndarray,
                        gains: TeacherGains, ref_alpha=None, g: float = 9.81) -> Wrench:
    """PD wrench driving the load toward one reference node.

    ref_p_rel is the reference position relative to the current load
    position (the load-frame convention used throughout).
    """
    e_p = np.asarray(ref_p_rel, dtype=float)
    e_v = np.asarray(ref_v, dtype=float) - load.v
    force = m_load * (np.asarray(ref_a, dtype=float) + g * EZ) \
        + gains.kp * e_p + gains.kd * e_v
    q_err = geom.quat_multiply(geom.quat_conjugate(load.q), np.asarray(ref_q, dtype=float))
    e_r = geom.quat_to_rotvec(q_err)
    e_w = np.asarray(ref_omega, dtype=float) - load.omega
    ang_acc = gains.kq * e_r + gains.kw * e_w
    if ref_alpha is not None:
        ang_acc = ang_acc + np.asarray(ref_alpha, dtype=float)
    tau_body = j_load @ ang_acc + _cross3(load.omega, j_load @ load.omega)
    R = geom.quat_to_matrix(load.q)
    return Wrench(force, R @ tau_body)


def feedforward_wrench(ref_a, ref_q, ref_omega, ref_alpha, m_load: float,
                       j_load: np.ndarray, g: float = 9.81) -> Wrench:
    force = m_load * (np.asarray(ref_a, dtype=float) + g * EZ)
    om = np.asarray(ref_omega, dtype=float)
    tau_body = j_load @ np.asarray(ref_alpha, dtype=float) + _cross3(om, j_load @ om)
    R = geom.quat_to_matrix(np.asarray(ref_q, dtype=float))
    return Wrench(force, R @ tau_body)


def allocation_matrix(load_q: np.ndarray, rhos) -> np.ndarray:
    """6x9 map from stacked per-cable forces to the load wrench."""
    R = geom.quat_to_matrix(load_q)
    A = np.zeros((6, 9))
    for i, rho in enumerate(rhos):
        A[0:3, 3 * i:3 * i + 3] = np.eye(3)
        A[3:6, 3 * i:3 * i + 3] = geom.skew(R @ rho)
    return A


def allocate_tensions(w: Wrench, load_q: np.ndarray, rhos, t_min: float = 0.0,
                      prev: np.ndarray | None = None,
                      cable_axes: np.ndarray | None = None,
                      blend: float = 0.5,
                      solver: tuple | None = None) -> tuple[np.ndarray, bool]:
    """Minimum-norm per-cable force vectors realizing the wrench.

    Returns (forces (3,3), saturated). When a force magnitude falls below
    t_min, or a force points against its current cable axis, the result is
    blended toward the previous feasible allocation and flagged. solver may
    carry a precomputed (A, pinv(A)) pair (A depends on attitude only).
    """
    if solver is None:
        A = allocation_matrix(load_q, rhos)
        A_pinv = np.linalg.pinv(A)
    else:
        A, A_pinv = solver
    target = np.concatenate([w.force, w.torque])
    f = A_pinv @ target
    residual = np.linalg.norm(A @ f - target)
    if residual > 1e-6:
        raise UnallocatableWrench(f"allocation residual {residual:.3e}")
    forces = f.reshape(3, 3)
    saturated = False
    mags = np.linalg.norm(forces, axis=1)
    if (mags < t_min).any():
        saturated = True
    if cable_axes is not None:
        for i in range(3):
            if float(forces[i] @ cable_axes[i]) < -1e-6:
                saturated = True
    if saturated and prev is not None:
        forces = (1.0 - blend) * forces + blend * prev
    return forces, saturated


@dataclass
class TeacherConfig:
    gains: TeacherGains = field(default_factory=TeacherGains)
    t_min: float = 0.5
    min_separation: float = 1.0
    blend: float = 0.5


class Teacher:
    """Stateless per call except the previous-allocation memory."""

    def __init__(self, model: TeacherModel | None = None,
                 cfg: TeacherConfig | None = None):
        self.model = model or TeacherModel()
        self.cfg = cfg or TeacherConfig()
        self._prev_alloc: np.ndarray | None = None
        self._prev_dirs = np.tile(EZ, (3, 1))
        self._pos_int = np.zeros(3)
        self._att_int = np.zeros(3)
        self.last_saturated = False
        self.last_repaired = False

    # -- helpers ----------------------------------------------------------

    def hover_forces(self) -> np.ndarray:
        """Static allocation for holding the load level: the equilibrium oracle."""
        w = Wrench(self.model.m_load * self.model.g * EZ, np.zeros(3))
        forces, _ = allocate_tensions(w, geom.QUAT_IDENTITY, self.model.rhos)
        return forces

    def _ref_alphas(self, ref: RefWindow) -> np.ndarray:
        alphas = np.zeros((NODE_COUNT, 3))
        ts = NODE_OFFSETS
        alphas[1:-1] = (ref.omega[2:] - ref.omega[:-2]) / (ts[2:] - ts[:-2])[:, None]
        alphas[0] = (ref.omega[1] - ref.omega[0]) / (ts[1] - ts[0])
        alphas[-1] = (ref.omega[-1] - ref.omega[-2]) / (ts[-1] - ts[-2])
        return alphas

    # -- main entry ---------------------------------------------------------

    def plan_all(self, world: WorldState, ref: RefWindow) -> list[PlanTrajectory]:
        m = self.model
        load = world.load
        load_p = load.p
        alphas = self._ref_alphas(ref)

        # current cable axes, for the force-direction feasibility check
        axes = np.zeros((3, 3))
        for i in range(3):
            attach = geom.quat_rotate(load.q, m.rhos[i])
            d = (world.uavs[i].p - load_p) - attach
            n = np.linalg.norm(d)
            axes[i] = d / n if n > 1e-9 else EZ

        p_c2 = np.zeros((3, NODE_COUNT, 3))  # cable tops, relative to current load p
        mags = np.zeros((3, NODE_COUNT))
        self.last_saturated = False
        prev_dirs = self._prev_dirs.copy()
        # feedback correction from the current error against node 0, held
        # constant across the horizon: single-node feedback would show up
        # as enormous finite-difference accelerations at 10 ms node spacing
        wr_fb = desired_load_wrench(load, ref.p[0], ref.v[0], ref.a[0],
                                    ref.q[0], ref.omega[0], m.m_load, m.j_load,
                                    self.cfg.gains, ref_alpha=alphas[0], g=m.g)
        wr_ff0 = feedforward_wrench(ref.a[0], ref.q[0], ref.omega[0], alphas[0],
                                    m.m_load, m.j_load, g=m.g)
        g = self.cfg.gains
        dt_plan = 0.1
        e_r0 = geom.quat_to_rotvec(
            geom.quat_multiply(geom.quat_conjugate(load.q), ref.q[0]))
        self._pos_int = np.clip(self._pos_int + ref.p[0] * dt_plan,
                                -g.i_limit, g.i_limit)
        self._att_int = np.clip(self._att_int + e_r0 * dt_plan,
                                -g.i_limit, g.i_limit)
        R_l = geom.quat_to_matrix(load.q)
        fb_force = wr_fb.force - wr_ff0.force + g.ki_p * self._pos_int
        fb_torque = wr_fb.torque - wr_ff0.torque \
            + R_l @ (m.j_load @ (g.ki_q * self._att_int))
        geo_tilt = g.kgq * e_r0 + g.kgw * (ref.omega[0] - load.omega) \
            + g.ki_q * 0.25 * self._att_int
        n_tilt = np.linalg.norm(geo_tilt)
        if n_tilt > g.kg_limit:
            geo_tilt = geo_tilt * (g.kg_limit / n_tilt)
        q_fb = geom.quat_from_rotvec(geo_tilt)

        # the allocation pseudoinverse depends only on the node attitude;
        # constant-orientation references share one attitude across nodes
        solver_cache: dict[bytes, tuple] = {}

        def solver_for(q_geo):
            key = q_geo.tobytes()
            entry = solver_cache.get(key)
            if entry is None:
                A = allocation_matrix(q_geo, m.rhos)
                entry = (A, np.linalg.pinv(A))
                solver_cache[key] = entry
            return entry

        wrenches = []
        attach_rel = np.zeros((3, NODE_COUNT, 3))
        for j in range(NODE_COUNT):
            q_geo = geom.quat_multiply(ref.q[j], q_fb)
            base = ref.p[j]
            wr = feedforward_wrench(ref.a[j], ref.q[j], ref.omega[j], alphas[j],
                                    m.m_load, m.j_load, g=m.g)
            wr = Wrench(wr.force + fb_force, wr.torque + fb_torque)
            wrenches.append(wr)
            forces, sat = allocate_tensions(
                wr, q_geo, m.rhos, self.cfg.t_min,
                prev=self._prev_alloc if j == 0 else None,
                cable_axes=axes if j == 0 else None,
                blend=self.cfg.blend,
                solver=solver_for(q_geo))
            self.last_saturated = self.last_saturated or (j == 0 and sat)
            if j == 0:
                self._prev_alloc = forces.copy()
            R_geo = geom.quat_to_matrix(q_geo)
            for i in range(3):
                mag = np.linalg.norm(forces[i])
                if mag < 1e-8:
                    u = prev_dirs[i]
                else:
                    u = forces[i] / mag
                    prev_dirs[i] = u
                mags[i, j] = mag
                # stretched length: a taut spring cable realizes the force
                # magnitude through its extension, so the plan encodes the
                # full allocated force, not just its direction
                reach = m.cable_length + mag / m.cable_stiffness
                attach_rel[i, j] = base + R_geo @ m.rhos[i]
                p_c2[i, j] = attach_rel[i, j] + reach * u
        self._prev_dirs = prev_dirs

        self.last_repaired = self._repair_separation(p_c2, attach_rel,
                                                     mags / m.cable_stiffness)
        self._refit_magnitudes(p_c2, attach_rel, ref.p, wrenches, mags)

        uav_nodes = p_c2 - m.uav_attach_offset[None, None, :]
        plans = []
        for i in range(3):
            v, a = _fd_velocity_accel(uav_nodes[i])
            omegas = self._flatness_rates(uav_nodes[i], a, p_c2[i], attach_rel[i],
                                          mags[i])
            plans.append(PlanTrajectory(world.t, uav_nodes[i], omegas, v, a,
                                        frame=FRAME_LOAD))
        return plans

    def _repair_separation(self, p_c2: np.ndarray, attach_rel: np.ndarray,
                           stretches: np.ndarray) -> bool:
        """Push cable tops radially out from the per-node centroid until
        same-index nodes are min_separation apart, then restore the
        stretched-cable geometry.

        An additive offset (rather than rescaling) leaves the differential
        corrections the allocation encoded untouched."""
        m = self.model
        repaired = False
        for j in range(NODE_COUNT):
            pts = p_c2[:, j, :]
            for _ in range(4):
                dmin = min(np.linalg.norm((pts[a] - pts[b])[:2])
                           for a in range(3) for b in range(a + 1, 3))
                if dmin >= self.cfg.min_separation - 1e-12:
                    break
                repaired = True
                centroid = pts[:, :2].mean(axis=0)
                shortfall = (self.cfg.min_separation - dmin) / np.sqrt(3.0)
                for i in range(3):
                    radial = pts[i, :2] - centroid
                    n = np.linalg.norm(radial)
                    direction = radial / n if n > 1e-9 else \
                        np.array([np.cos(2 * np.pi * i / 3), np.sin(2 * np.pi * i / 3)])
                    pts[i, :2] = pts[i, :2] + shortfall * direction
            if repaired:
                for i in range(3):
                    reach = m.cable_length + stretches[i, j]
                    d_h = min(np.linalg.norm(pts[i, :2] - attach_rel[i, j, :2]),
                              0.95 * reach)
                    pts[i, 2] = attach_rel[i, j, 2] + np.sqrt(reach ** 2 - d_h ** 2)
        return repaired

    def _refit_magnitudes(self, p_c2: np.ndarray, attach_rel: np.ndarray,
                          bases: np.ndarray, wrenches, mags: np.ndarray) -> None:
        """Least-squares tension magnitudes along the realized (possibly
        repaired) cable directions, re-encoded as stretch.

        The spreading repair tilts cables away from the allocated directions;
        keeping the pre-repair magnitudes would understate the vertical force
        by 1/cos(tilt) and leave a standing bias for the feedback to fight."""
        m = self.model
        for j in range(NODE_COUNT):
            A = np.zeros((6, 3))
            units = np.zeros((3, 3))
            for i in range(3):
                d = p_c2[i, j] - attach_rel[i, j]
                n = np.linalg.norm(d)
                u = d / n if n > 1e-9 else EZ
                units[i] = u
                A[0:3, i] = u
                arm = attach_rel[i, j] - bases[j]
                A[3:6, i] = np.array([arm[1]*u[2]-arm[2]*u[1],
                                      arm[2]*u[0]-arm[0]*u[2],
                                      arm[0]*u[1]-arm[1]*u[0]])
            w = wrenches[j]
            target = np.concatenate([w.force, w.torque])
            # 3-unknown least squares via normal equations
            AtA = A.T @ A
            sol = np.linalg.solve(AtA + 1e-12 * np.eye(3), A.T @ target)
            sol = np.clip(sol, 0.0, None)
            for i in range(3):
                mags[i, j] = sol[i]
                reach = m.cable_length + sol[i] / m.cable_stiffness
                p_c2[i, j] = attach_rel[i, j] + reach * units[i]

    def _flatness_rates(self, uav_nodes, accel, p_c2, attach_rel, mags) -> np.ndarray:
        """Body rates from differentiating the per-node flatness attitude."""
        m = self.model
        Rs = []
        for j in range(NODE_COUNT):
            cable_vec = p_c2[j] - attach_rel[j]
            n = np.linalg.norm(cable_vec)
            u = cable_vec / n if n > 1e-9 else EZ
            f_des = m.m_uav * (accel[j] + m.g * EZ) + mags[j] * u
            if np.linalg.norm(f_des) < 1e-6:
                Rs.append(Rs[-1] if Rs else np.eye(3))
            else:
                Rs.append(desired_attitude(f_des))
        ts = NODE_OFFSETS
        om = np.zeros((NODE_COUNT, 3))
        for j in range(NODE_COUNT):
            lo = max(0, j - 1)
            hi = min(NODE_COUNT - 1, j + 1)
            rel = Rs[lo].T @ Rs[hi]
            om[j] = geom.quat_to_rotvec(geom.matrix_to_quat(rel)) / (ts[hi] - ts[lo])
        return om


def _fd_velocity_accel(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Velocity and acceleration from non-uniform 3-point differences."""
    ts = NODE_OFFSETS
    n = p.shape[0]
    v = np.zeros_like(p)
    a = np.zeros_like(p)
    for j in range(1, n - 1):
        h1 = ts[j] - ts[j - 1]
        h2 = ts[j + 1] - ts[j]
        v[j] = (-h2 / (h1 * (h1 + h2))) * p[j - 1] \
            + ((h2 - h1) / (h1 * h2)) * p[j] \
            + (h1 / (h2 * (h1 + h2))) * p[j + 1]
        a[j] = 2.0 * (p[j - 1] / (h1 * (h1 + h2)) - p[j] / (h1 * h2)
                      + p[j + 1] / (h2 * (h1 + h2)))
    h1 = ts[1] - ts[0]
    h2 = ts[2] - ts[1]
    v[0] = (-(2 * h1 + h2) / (h1 * (h1 + h2))) * p[0] \
        + ((h1 + h2) / (h1 * h2)) * p[1] - (h1 / (h2 * (h1 + h2))) * p[2]
    h1 = ts[-2] - ts[-3]
    h2 = ts[-1] - ts[-2]
    v[-1] = (h2 / (h1 * (h1 + h2))) * p[-3] - ((h1 + h2) / (h1 * h2)) * p[-2] \
        + ((h1 + 2 * h2) / (h2 * (h1 + h2))) * p[-1]
    a[0] = a[1]
    a[-1] = a[-2]
    return v, a
