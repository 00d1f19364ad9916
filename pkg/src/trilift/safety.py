"""Continuous safety monitor: state bounds, separation, and plan lookahead.

Kill (power off) when a UAV leaves the arena or two UAVs get too close;
Hover (freeze in place) on speed/acceleration violations or when any plan
node inside the check horizon would violate the bounds. Kill dominates
Hover dominates None.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flightctl import PlanTrajectory

KIND_NONE = "None"
KIND_HOVER = "Hover"
KIND_KILL = "Kill"

_PRECEDENCE = {KIND_NONE: 0, KIND_HOVER: 1, KIND_KILL: 2}


@dataclass
class SafetyLimits:
    arena_min: np.ndarray = field(default_factory=lambda: np.array([-4.0, -4.0, -0.5]))
    arena_max: np.ndarray = field(default_factory=lambda: np.array([4.0, 4.0, 3.5]))
    v_max: float = 4.0
    a_max: float = 10.0
    d_kill: float = 0.4
    check_horizon: float = 1.0

    def __post_init__(self):
        self.arena_min = np.asarray(self.arena_min, dtype=float)
        self.arena_max = np.asarray(self.arena_max, dtype=float)
        if self.d_kill <= 0:
            raise ValueError("d_kill must be > 0")
        if (self.arena_min >= self.arena_max).any():
            raise ValueError("arena bounds must be well ordered")


@dataclass
class Intervention:
    kind: str = KIND_NONE
    reasons: list[str] = field(default_factory=list)

    def escalate(self, kind: str, reason: str) -> None:
        self.reasons.append(reason)
        if _PRECEDENCE[kind] > _PRECEDENCE[self.kind]:
            self.kind = kind


def _inside(p: np.ndarray, limits: SafetyLimits) -> bool:
    return bool((p >= limits.arena_min).all() and (p <= limits.arena_max).all())


def check(uav_states, plans, limits: SafetyLimits, t_now: float = 0.0) -> Intervention:
    """uav_states: per-UAV (p, v, a) triples. plans: active PlanTrajectory
    per UAV (inertial frame) or None."""
    result = Intervention()
    if len(uav_states) == 0:
        raise ValueError("need at least one UAV")

    for i, (p, v, a) in enumerate(uav_states):
        if not _inside(np.asarray(p, dtype=float), limits):
            result.escalate(KIND_KILL, f"uav{i} outside arena")
        if np.linalg.norm(v) > limits.v_max:
            result.escalate(KIND_HOVER, f"uav{i} speed {np.linalg.norm(v):.2f} m/s")
        if np.linalg.norm(a) > limits.a_max:
            result.escalate(KIND_HOVER, f"uav{i} accel {np.linalg.norm(a):.2f} m/s2")

    n = len(uav_states)
    for i in range(n):
        for j in range(i + 1, n):
            d = np.linalg.norm(np.asarray(uav_states[i][0], dtype=float)
                               - np.asarray(uav_states[j][0], dtype=float))
            if d < limits.d_kill:
                result.escalate(KIND_KILL, f"uav{i}-uav{j} separation {d:.2f} m")

    if plans is not None:
        for i, plan in enumerate(plans):
            if plan is None:
                continue
            if t_now > plan.timestamps[-1] + 1e-9:
                result.escalate(KIND_HOVER, f"uav{i} plan exhausted")
                continue
            mask = (plan.timestamps >= t_now - 1e-9) \
                & (plan.timestamps <= t_now + limits.check_horizon + 1e-9)
            for j in np.nonzero(mask)[0]:
                if not _inside(plan.p[j], limits):
                    result.escalate(KIND_HOVER, f"uav{i} plan node {j} outside arena")
                if np.linalg.norm(plan.v[j]) > limits.v_max:
                    result.escalate(KIND_HOVER, f"uav{i} plan node {j} speed")
                if np.linalg.norm(plan.a[j]) > limits.a_max:
                    result.escalate(KIND_HOVER, f"uav{i} plan node {j} accel")
    return result
