"""Experiment runner: wires trajectory -> planner -> comm -> low-level
control -> physics -> safety at 10/100/500 Hz, with episode logs and the
tracking/consistency metrics computed from them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geom, safety
from .estimator import LoadEstimator
from .flightctl import (FRAME_LOAD, NODE_OFFSETS, CtlGains, FlightController,
                        PlanTrajectory)
from .policy import HISTORY_DT, ObsHistory, PolicyParams, predict_plan
from .safety import Intervention, SafetyLimits
from .teacher import Teacher, TeacherModel
from .trajgen import make_ref_window
from .world import (DisturbanceSpec, NumericalBlowup, ScenarioConfig, WorldState,
                    attach_points, make_world, sample_disturbance, step)


class ConfigError(ValueError):
    pass


class EmptyLog(ValueError):
    pass


@dataclass
class CommModel:
    """Per-plan-message Bernoulli drops and uniform delivery latency."""

    drop_prob: float = 0.0
    max_delay_s: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.drop_prob <= 1.0) or self.max_delay_s < 0:
            raise ConfigError("bad comm model")


@dataclass
class TickRecord:
    t: float
    load_p: np.ndarray
    load_v: np.ndarray
    load_q: np.ndarray
    load_omega: np.ndarray
    ref_p: np.ndarray
    ref_q: np.ndarray
    uav_p: np.ndarray          # (3, 3)
    uav_v: np.ndarray
    uav_q: np.ndarray          # (3, 4)
    tensions: np.ndarray
    intervention_kind: str
    intervention_reasons: list
    source: str                # who planned this tick
    plans: list | None         # load-frame plans as (p, omega, v, a) arrays
    est_p: np.ndarray | None = None
    est_q: np.ndarray | None = None


@dataclass
class EpisodeLog:
    meta: dict
    records: list
    outcome: str = "completed"

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"type": "meta", **self.meta,
                                 "outcome": self.outcome}) + "\n")
            for r in self.records:
                doc = {
                    "type": "tick", "t": r.t,
                    "load": {"p": r.load_p.tolist(), "v": r.load_v.tolist(),
                             "q": r.load_q.tolist(), "omega": r.load_omega.tolist()},
                    "ref": {"p": r.ref_p.tolist(), "q": r.ref_q.tolist()},
                    "uavs": {"p": r.uav_p.tolist(), "v": r.uav_v.tolist(),
                             "q": r.uav_q.tolist()},
                    "tensions": r.tensions.tolist(),
                    "intervention": {"kind": r.intervention_kind,
                                     "reasons": r.intervention_reasons},
                    "source": r.source,
                }
                if r.plans is not None:
                    doc["plans"] = [{"p": p.tolist(), "omega": om.tolist(),
                                     "v": v.tolist(), "a": a.tolist()}
                                    for (p, om, v, a) in r.plans]
                if r.est_p is not None:
                    doc["est"] = {"p": r.est_p.tolist(), "q": r.est_q.tolist()}
                fh.write(json.dumps(doc) + "\n")

    @staticmethod
    def from_jsonl(path: str | Path) -> "EpisodeLog":
        records = []
        meta = {}
        outcome = "completed"
        with open(path) as fh:
            for line in fh:
                doc = json.loads(line)
                if doc["type"] == "meta":
                    outcome = doc.pop("outcome", "completed")
                    doc.pop("type")
                    meta = doc
                    continue
                plans = None
                if "plans" in doc:
                    plans = [(np.asarray(p["p"]), np.asarray(p["omega"]),
                              np.asarray(p["v"]), np.asarray(p["a"]))
                             for p in doc["plans"]]
                est = doc.get("est")
                records.append(TickRecord(
                    doc["t"], np.asarray(doc["load"]["p"]), np.asarray(doc["load"]["v"]),
                    np.asarray(doc["load"]["q"]), np.asarray(doc["load"]["omega"]),
                    np.asarray(doc["ref"]["p"]), np.asarray(doc["ref"]["q"]),
                    np.asarray(doc["uavs"]["p"]), np.asarray(doc["uavs"]["v"]),
                    np.asarray(doc["uavs"]["q"]), np.asarray(doc["tensions"]),
                    doc["intervention"]["kind"], doc["intervention"]["reasons"],
                    doc["source"], plans,
                    None if est is None else np.asarray(est["p"]),
                    None if est is None else np.asarray(est["q"])))
        return EpisodeLog(meta, records, outcome)


@dataclass
class MetricsReport:
    rmse_pos: float
    rmse_orient_deg: float
    min_distance: float
    min_distance_series: list
    consistency_mae: dict      # per-axis and overall, m/s
    outcome: str

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({
            "rmse_pos_m": self.rmse_pos,
            "rmse_orient_deg": self.rmse_orient_deg,
            "min_inter_agent_distance_m": self.min_distance,
            "min_distance_series": self.min_distance_series,
            "consistency_mae": self.consistency_mae,
            "outcome": self.outcome,
        }, indent=2))


def compute_metrics(log: EpisodeLog) -> MetricsReport:
    if not log.records:
        raise EmptyLog("episode log has no tick records")
    pos_sq = []
    ori_sq = []
    min_dists = []
    cons = []
    for r in log.records:
        pos_sq.append(float(((r.load_p - r.ref_p) ** 2).sum()))
        ori_sq.append(geom.geodesic_deg(r.load_q, r.ref_q) ** 2)
        dists = [np.linalg.norm(r.uav_p[i] - r.uav_p[j])
                 for i in range(3) for j in range(i + 1, 3)]
        min_dists.append(min(dists))
        if r.plans:
            for (p, om, v, a) in r.plans:
                dt = (NODE_OFFSETS[2:] - NODE_OFFSETS[:-2])[:, None]
                fd = (p[2:] - p[:-2]) / dt
                cons.append(np.abs(fd - v[1:-1]))
    if cons:
        err = np.concatenate(cons, axis=0)
        per_axis = err.mean(axis=0)
        consistency = {"x": float(per_axis[0]), "y": float(per_axis[1]),
                       "z": float(per_axis[2]), "overall": float(per_axis.mean())}
    else:
        consistency = {"x": 0.0, "y": 0.0, "z": 0.0, "overall": 0.0}
    return MetricsReport(
        rmse_pos=float(np.sqrt(np.mean(pos_sq))),
        rmse_orient_deg=float(np.sqrt(np.mean(ori_sq))),
        min_distance=float(min(min_dists)),
        min_distance_series=[float(d) for d in min_dists],
        consistency_mae=consistency,
        outcome=log.outcome)


@dataclass
class LoadView:
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    omega: np.ndarray


@dataclass
class TickContext:
    """Everything a plan source may need at one planner tick."""

    t: float
    world: WorldState
    windows: list
    ref_window: object
    teacher_plans: list
    load_view_p: np.ndarray
    truth_load_p: np.ndarray
    runner: "EpisodeRunner"

    def predict_student(self, params: PolicyParams, i: int) -> PlanTrajectory:
        return predict_plan(params, self.windows[i], self.ref_window, self.t)


PLAN_PERIOD = 0.1
CTL_PERIOD = 0.01
PHYS_STEPS_PER_CTL = 5


def run_control_window(world: WorldState, controllers, deliveries, t: float,
                       dist, rng, dt_phys: float, killed: bool) -> WorldState:
    """One 10 Hz planning window: deliver due plans at control-step
    boundaries, run the inner loops, and integrate the physics."""
    for m in range(int(round(PLAN_PERIOD / CTL_PERIOD))):
        t_c = t + m * CTL_PERIOD
        for (arrival, i, plan) in deliveries:
            if arrival <= t_c + 1e-12:
                controllers[i].set_plan(plan)
        deliveries = [d for d in deliveries if d[0] > t_c + 1e-12]
        inputs = []
        for i, ctl in enumerate(controllers):
            if killed:
                inputs.append((0.0, np.zeros(3)))
                continue
            ctl.update_force_estimate(world.uavs[i], CTL_PERIOD)
            cmd = ctl.command(world.uavs[i], t_c)
            inputs.append((cmd.thrust, cmd.torque))
        for _ in range(PHYS_STEPS_PER_CTL):
            world = step(world, inputs, dt_phys, dist, rng)
    return world


class EpisodeRunner:
    """Owns one world, one teacher, three controllers, and the episode rng."""

    def __init__(self, scenario: ScenarioConfig, traj, seed: int = 0,
                 comm: CommModel | None = None, limits: SafetyLimits | None = None,
                 use_ekf: bool = False, force_max: float | None = None,
                 torque_max: float | None = None, gains: CtlGains | None = None,
                 ekf_noise_sigma: float = 0.0, log_plans: bool = True):
        self.scenario = scenario
        self.traj = traj
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.comm = comm or CommModel()
        self.limits = limits or SafetyLimits()
        self.log_plans = log_plans
        self.ekf_noise_sigma = ekf_noise_sigma

        s0 = traj.sample(0.0)
        self.world = make_world(scenario, load_p=s0.p, load_q=s0.q)
        self.model = TeacherModel.from_config(scenario)
        self.teacher = Teacher(self.model)

        fmax = scenario.force_max if force_max is None else force_max
        tmax = scenario.torque_max if torque_max is None else torque_max
        if fmax > 0 or tmax > 0:
            self.dist = sample_disturbance(self.rng, fmax, tmax)
        else:
            self.dist = DisturbanceSpec.none()

        ref0 = make_ref_window(traj, 0.0, self.world.load.p)
        init_plans = self.teacher.plan_all(self.world, ref0)
        par = self.world.params
        self.controllers = []
        for i in range(3):
            # the plan's first node already encodes the stretched-cable
            # equilibrium; start there and warm-start the force estimate
            # with the tension implied by the encoded stretch
            self.world.uavs[i].p = init_plans[i].p[0] + self.world.load.p
            attach = self.world.load.p \
                + geom.quat_rotate(self.world.load.q, self.model.rhos[i])
            cable = (self.world.uavs[i].p
                     + geom.quat_rotate(self.world.uavs[i].q,
                                        self.model.uav_attach_offset)) - attach
            dist = np.linalg.norm(cable)
            u_hat = cable / dist
            tension = max(0.0, scenario.cable_stiffness
                          * (dist - self.model.cable_length))
            ctl = FlightController(par.m_uav, par.j_uav,
                                   gains=gains or CtlGains(), g=par.g)
            ctl.f_ext_hat = -tension * u_hat
            ctl.set_plan(init_plans[i].to_inertial(self.world.load.p))
            self.controllers.append(ctl)

        self.histories = [ObsHistory(self.model.rhos[i], self.model.uav_attach_offset)
                          for i in range(3)]
        self.ekf = None
        if use_ekf:
            self.ekf = LoadEstimator(self.model.rhos,
                                     [self.model.cable_length] * 3)
            st = self.ekf.state
            st.p = self.world.load.p.copy()
            st.q = self.world.load.q.copy()

        self.killed = False
        self._prev_uav_v = np.stack([u.v for u in self.world.uavs])
        self._hover_holds: list | None = None

    # -- views ------------------------------------------------------------

    def _load_view(self) -> LoadView:
        if self.ekf is not None:
            s = self.ekf.state
            return LoadView(s.p.copy(), s.q.copy(), s.v.copy(), s.omega.copy())
        l = self.world.load
        return LoadView(l.p.copy(), l.q.copy(), l.v.copy(), l.omega.copy())

    def _nominal_p_c2(self) -> list:
        pts = []
        for i in range(3):
            u = self.world.uavs[i]
            pts.append(u.p + geom.quat_rotate(u.q, self.model.uav_attach_offset))
        return pts

    def _cable_directions(self, p_c2_pts) -> list:
        """Physical cable directions (true load attach -> UAV attach)."""
        dirs = []
        for i in range(3):
            p1, _ = attach_points(self.world.uavs[i], self.world.load,
                                  self.world.cables[i])
            d = np.asarray(p_c2_pts[i]) - p1
            n = np.linalg.norm(d)
            dirs.append(d / n if n > 1e-9 else np.array([0.0, 0.0, 1.0]))
        return dirs

    # -- main loop ----------------------------------------------------------

    def run(self, duration: float, plan_source=None, on_tick=None) -> EpisodeLog:
        n_ticks = int(round(duration / PLAN_PERIOD))
        records = []
        outcome = "completed"
        meta = {"seed": self.seed, "controller": "custom" if plan_source else "teacher",
                "use_ekf": self.ekf is not None,
                "comm": {"drop": self.comm.drop_prob, "delay": self.comm.max_delay_s},
                "duration": duration}
        try:
            for tick in range(n_ticks):
                t = tick * PLAN_PERIOD
                rec, stop = self._tick(t, plan_source, on_tick)
                records.append(rec)
                if stop:
                    outcome = "killed"
                    break
        except NumericalBlowup:
            outcome = "diverged"
        return EpisodeLog(meta, records, outcome)

    def _tick(self, t: float, plan_source, on_tick):
        world = self.world
        if self.ekf is not None:
            if t > 0:
                self.ekf.predict(PLAN_PERIOD)
            measured = None
            if self.ekf_noise_sigma > 0:
                measured = np.array([self.model.cable_length] * 3) \
                    + self.rng.normal(0.0, self.ekf_noise_sigma, size=3)
            pts = self._nominal_p_c2()
            self.ekf.update(pts, measured, directions=self._cable_directions(pts))
        view = self._load_view()

        for i in range(3):
            self.histories[i].record(t, view.p, view.q, world.uavs[i])
        windows = [h.window(view.p) for h in self.histories]
        ref_view = make_ref_window(self.traj, t, view.p)
        if self.ekf is not None:
            ref_teacher = make_ref_window(self.traj, t, world.load.p)
        else:
            ref_teacher = ref_view
        teacher_plans = self.teacher.plan_all(world, ref_teacher)

        ctx = TickContext(t, world, windows, ref_view, teacher_plans,
                          view.p, world.load.p, self)
        if plan_source is None:
            plans_load, origin, source = teacher_plans, world.load.p, "teacher"
        else:
            plans_load, origin, source = plan_source(ctx)
        plans_inertial = [p.to_inertial(origin) for p in plans_load]

        # comm: per-UAV message drop / delivery delay
        deliveries = []
        for i in range(3):
            if self.comm.drop_prob > 0 or self.comm.max_delay_s > 0:
                if self.rng.uniform() < self.comm.drop_prob:
                    continue
                delay = self.rng.uniform(0.0, self.comm.max_delay_s) \
                    if self.comm.max_delay_s > 0 else 0.0
            else:
                delay = 0.0
            deliveries.append((t + delay, i, plans_inertial[i]))

        # safety on current states and the plans about to be active
        uav_acc = (np.stack([u.v for u in world.uavs]) - self._prev_uav_v) / PLAN_PERIOD
        self._prev_uav_v = np.stack([u.v for u in world.uavs])
        states = [(world.uavs[i].p, world.uavs[i].v, uav_acc[i]) for i in range(3)]
        pending = {i: p for (_, i, p) in deliveries}
        active = [pending.get(i, self.controllers[i].plan) for i in range(3)]
        intervention = safety.check(states, active, self.limits, t_now=t)
        if intervention.kind == safety.KIND_KILL:
            self.killed = True
        elif intervention.kind == safety.KIND_HOVER:
            # latch the hold positions so consecutive hover ticks do not
            # chase a moving target
            if self._hover_holds is None:
                self._hover_holds = [u.p.copy() for u in world.uavs]
            deliveries = [(t, i, PlanTrajectory.hold(t, self._hover_holds[i]))
                          for i in range(3)]
        else:
            self._hover_holds = None

        rec = TickRecord(
            t, world.load.p.copy(), world.load.v.copy(), world.load.q.copy(),
            world.load.omega.copy(),
            self.traj.sample(t).p, self.traj.sample(t).q,
            np.stack([u.p for u in world.uavs]),
            np.stack([u.v for u in world.uavs]),
            np.stack([u.q for u in world.uavs]),
            world.tensions.copy(), intervention.kind, intervention.reasons,
            source,
            [(p.p.copy(), p.omega.copy(), p.v.copy(), p.a.copy())
             for p in plans_load] if self.log_plans else None,
            view.p.copy() if self.ekf is not None else None,
            view.q.copy() if self.ekf is not None else None)
        if on_tick is not None:
            on_tick(ctx, rec)
        if self.killed:
            return rec, True

        self.world = run_control_window(
            world, self.controllers, deliveries, t, self.dist, self.rng,
            self.scenario.physics_dt, killed=False)
        return rec, False


def run_episode(scenario: ScenarioConfig, traj, controller: str = "teacher",
                checkpoint: PolicyParams | str | None = None,
                comm: CommModel | None = None, seed: int = 0,
                duration: float | None = None,
                limits: SafetyLimits | None = None,
                force_max: float | None = None,
                torque_max: float | None = None) -> EpisodeLog:
    """Run one closed-loop episode with the teacher or a student checkpoint."""
    from .policy import load_checkpoint

    if controller not in ("teacher", "student", "student_ekf"):
        raise ConfigError(f"unknown controller {controller!r}")
    params = None
    if controller != "teacher":
        if checkpoint is None:
            raise ConfigError("student controller needs a checkpoint")
        params = checkpoint if isinstance(checkpoint, PolicyParams) \
            else load_checkpoint(checkpoint)
    runner = EpisodeRunner(scenario, traj, seed=seed, comm=comm,
                           limits=limits, use_ekf=(controller == "student_ekf"),
                           force_max=force_max, torque_max=torque_max)
    plan_source = None
    if params is not None:
        def plan_source(ctx):
            plans = [ctx.predict_student(params, i) for i in range(3)]
            return plans, ctx.load_view_p, "student"

    duration = duration if duration is not None else \
        min(getattr(traj, "duration", 20.0), 120.0)
    log = runner.run(duration, plan_source=plan_source)
    log.meta["controller"] = controller
    return log
