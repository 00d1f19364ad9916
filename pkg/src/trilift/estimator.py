"""Error-state EKF for the load pose and twist from cable-length constraints.

State: nominal (p, v, q, omega) for the load plus a 12-dim error
covariance over (position, attitude rotation-vector, velocity, body rate).
Prediction is constant-velocity / constant-rate. The update consumes one
scalar per cable: the distance from the UAV-side cable attach point to
the estimated load-side attach point, measured against the known cable
length (taut-cable assumption).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geom


class SingularInnovation(Warning):
    pass


def _default_process_noise() -> np.ndarray:
    return np.diag([1e-4] * 3 + [1e-4] * 3 + [1e-2] * 3 + [1e-2] * 3)


@dataclass
class EkfState:
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    omega: np.ndarray
    cov: np.ndarray = field(default_factory=lambda: 1e-2 * np.eye(12))

    def copy(self) -> "EkfState":
        return EkfState(self.p.copy(), self.v.copy(), self.q.copy(),
                        self.omega.copy(), self.cov.copy())


class LoadEstimator:
    """One filter instance per episode; call predict then update sequentially.

    Three scalar cable lengths observe only 3 of the 6 pose directions at any
    instant; the rest must come from motion and the prior. The twist states
    therefore follow a damped (exponentially forgotten) random walk rather
    than a pure one: an unobservable body-rate bias would otherwise integrate
    attitude error without bound.
    """

    def __init__(self, rhos, cable_lengths, q_noise: np.ndarray | None = None,
                 r_meas: float = 0.01 ** 2, initial: EkfState | None = None,
                 vel_tau: float = 30.0, rate_tau: float = 6.0):
        self.rhos = [np.asarray(r, dtype=float) for r in rhos]
        self.lengths = np.asarray(cable_lengths, dtype=float)
        self.Q = _default_process_noise() if q_noise is None else q_noise
        self.r_meas = r_meas
        self.vel_tau = vel_tau
        self.rate_tau = rate_tau
        self.state = initial or EkfState(np.zeros(3), np.zeros(3),
                                         geom.QUAT_IDENTITY.copy(), np.zeros(3))
        self.skipped_updates = 0

    def predict(self, dt: float) -> EkfState:
        if dt <= 0:
            raise ValueError("dt must be > 0")
        s = self.state
        s.p = s.p + s.v * dt
        s.q = geom.integrate_quat(s.q, s.omega, dt)
        decay_v = np.exp(-dt / self.vel_tau)
        decay_w = np.exp(-dt / self.rate_tau)
        s.v = s.v * decay_v
        s.omega = s.omega * decay_w
        F = np.eye(12)
        F[0:3, 6:9] = dt * np.eye(3)
        F[3:6, 9:12] = dt * np.eye(3)
        F[6:9, 6:9] = decay_v * np.eye(3)
        F[9:12, 9:12] = decay_w * np.eye(3)
        s.cov = F @ s.cov @ F.T + self.Q * dt
        s.cov = 0.5 * (s.cov + s.cov.T)
        return s

    def update(self, p_c2_points, measured=None, directions=None) -> EkfState:
        """Correct with per-cable measurements.

        p_c2_points: UAV-side attach points (3 of them, inertial frame).
        measured: measured attach-to-attach distances; defaults to the
        cable natural lengths (taut-cable measurement model).
        directions: unit cable directions (load attach -> UAV attach) when
        available. Three scalar lengths alone observe only half the pose at
        any instant; with directions, each cable pins its load-side attach
        point and the pose is fully observable per update.
        """
        s = self.state
        z_len = self.lengths if measured is None else np.asarray(measured, dtype=float)
        R_l = geom.quat_to_matrix(s.q)
        if directions is None:
            H = np.zeros((3, 12))
            innov = np.zeros(3)
            for i, (pc2, rho) in enumerate(zip(p_c2_points, self.rhos)):
                attach = s.p + R_l @ rho
                d_vec = np.asarray(pc2, dtype=float) - attach
                dist = np.linalg.norm(d_vec)
                if dist < 1e-9:
                    self.skipped_updates += 1
                    return s
                u = d_vec / dist
                innov[i] = z_len[i] - dist
                H[i, 0:3] = -u
                H[i, 3:6] = u @ (R_l @ geom.skew(rho))
        else:
            H = np.zeros((9, 12))
            innov = np.zeros(9)
            for i, (pc2, rho) in enumerate(zip(p_c2_points, self.rhos)):
                u = np.asarray(directions[i], dtype=float)
                attach_meas = np.asarray(pc2, dtype=float) - z_len[i] * u
                attach_est = s.p + R_l @ rho
                innov[3 * i:3 * i + 3] = attach_meas - attach_est
                H[3 * i:3 * i + 3, 0:3] = np.eye(3)
                H[3 * i:3 * i + 3, 3:6] = -R_l @ geom.skew(rho)
        m = H.shape[0]
        S = H @ s.cov @ H.T + self.r_meas * np.eye(m)
        try:
            S_inv = np.linalg.inv(S)
        except np.linalg.LinAlgError:
            self.skipped_updates += 1
            return s
        if np.linalg.cond(S) > 1e12:
            self.skipped_updates += 1
            return s
        K = s.cov @ H.T @ S_inv
        delta = K @ innov
        IKH = np.eye(12) - K @ H
        cov = IKH @ s.cov @ IKH.T + K @ (self.r_meas * np.eye(m)) @ K.T
        s.cov = 0.5 * (cov + cov.T)
        s.p = s.p + delta[0:3]
        s.q = geom.quat_normalize(geom.quat_multiply(s.q, geom.quat_from_rotvec(delta[3:6])))
        s.v = s.v + delta[6:9]
        s.omega = s.omega + delta[9:12]
        return s
