"""Operator service: a WebSocket state stream plus a command endpoint.

The simulation runs in its own thread at a configurable speed factor.
Clients receive {type:"state", ...} messages at the 10 Hz planning rate
and send {type:"cmd", name, args} messages. A selected trajectory is only
flown after an explicit confirm, and while flying the operator must keep
a heartbeat alive: half a second of silence kills the UAVs (dead-man).
"""

from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import geom, safety
from .flightctl import CtlGains, FlightController, PlanTrajectory
from .harness import (CTL_PERIOD, PLAN_PERIOD, CommModel, run_control_window)
from .policy import ObsHistory, PolicyParams, load_checkpoint, predict_plan
from .safety import SafetyLimits
from .teacher import Teacher, TeacherModel
from .trajgen import HoverTrajectory, TrajSpec, make_ref_window, make_trajectory
from .world import DisturbanceSpec, NumericalBlowup, ScenarioConfig, make_world

# Kill when heartbeats stop. The budget from trigger release to a visible
# kill must stay under 0.7 s end to end; with up to ~0.1 s of heartbeat age
# at release and up to one (possibly overrunning) tick of detection latency,
# the timeout itself carries a conservative margin.
HEARTBEAT_TIMEOUT = 0.45  # wall-clock seconds

PHASE_IDLE = "idle"
PHASE_AWAIT = "awaiting_confirm"
PHASE_FLYING = "flying"
PHASE_HOVER = "hover"
PHASE_DONE = "completed"
PHASE_KILLED = "killed"

TRAJECTORIES = {
    "hover": None,
    "eight_2.2x2": TrajSpec(kind="eight", x_amp=1.1, y_amp=1.0, period=10.0, laps=2.0),
    "circle_r2": TrajSpec(kind="circle", radius=2.0, period=12.0, laps=2.0),
    "square_s2": TrajSpec(kind="square", side=2.0, period=16.0, laps=1.0),
}


class CommandError(ValueError):
    pass


@dataclass
class WrenchRequest:
    force: np.ndarray
    torque: np.ndarray
    until_t: float


class ServiceSession:
    """Owns the simulated system and reacts to operator commands at tick
    boundaries. Thread-safe entry points: submit() and snapshots()."""

    def __init__(self, scenario: ScenarioConfig | None = None,
                 checkpoint: PolicyParams | str | None = None,
                 speed: float = 1.0, seed: int = 0,
                 limits: SafetyLimits | None = None):
        self.scenario = scenario or ScenarioConfig()
        self.speed = speed
        self.limits = limits or SafetyLimits()
        self.rng = np.random.default_rng(seed)
        self.params = None
        if checkpoint is not None:
            self.params = checkpoint if isinstance(checkpoint, PolicyParams) \
                else load_checkpoint(checkpoint)

        self.model = TeacherModel.from_config(self.scenario)
        self.teacher = Teacher(self.model)
        self.world = make_world(self.scenario, load_p=[0.0, 0.0, 1.0])
        ref0 = make_ref_window(HoverTrajectory(self.world.load.p), 0.0,
                               self.world.load.p)
        plans = self.teacher.plan_all(self.world, ref0)
        par = self.world.params
        self.controllers = []
        for i in range(3):
            self.world.uavs[i].p = plans[i].p[0] + self.world.load.p
            ctl = FlightController(par.m_uav, par.j_uav, gains=CtlGains(), g=par.g)
            ctl.set_plan(plans[i].to_inertial(self.world.load.p))
            self.controllers.append(ctl)
        self.histories = [ObsHistory(self.model.rhos[i], self.model.uav_attach_offset)
                          for i in range(3)]

        self.t = 0.0
        self.phase = PHASE_IDLE
        self.selected: str | None = None
        self.mission_t = 0.0
        self.traj = HoverTrajectory(self.world.load.p.copy())
        self.hold_traj = self.traj
        self.proposed_plans = None
        self.last_heartbeat = time.monotonic()
        self.wrench: WrenchRequest | None = None
        self.safety_state = safety.Intervention()
        self.events: list[str] = []
        self._err_sq_pos: list[float] = []
        self._err_sq_ori: list[float] = []
        self._min_dist = float("inf")
        self._preview_cache: tuple | None = None
        self._cmd_queue: "queue.Queue[dict]" = queue.Queue()
        self._subscribers: list[queue.Queue] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    # -- client-facing ------------------------------------------------------

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=64)
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def submit(self, command: dict) -> dict:
        """Validate and enqueue a command; returns the ack/error reply."""
        try:
            name = command.get("name")
            args = command.get("args", {}) or {}
            if command.get("type") != "cmd" or not isinstance(name, str):
                raise CommandError("commands look like {type:'cmd', name, args}")
            if name == "heartbeat":
                self.last_heartbeat = time.monotonic()
                return {"type": "ack", "name": "heartbeat"}
            if name == "select_traj":
                if args.get("name") not in TRAJECTORIES:
                    raise CommandError(f"unknown trajectory {args.get('name')!r}; "
                                       f"have {sorted(TRAJECTORIES)}")
            elif name == "wrench":
                np.asarray(args.get("force", [0, 0, 0]), dtype=float)
                np.asarray(args.get("torque", [0, 0, 0]), dtype=float)
                float(args.get("duration_s", 1.0))
            elif name not in ("start", "confirm", "hover", "kill"):
                raise CommandError(f"unknown command {name!r}")
            self._cmd_queue.put(command)
            return {"type": "ack", "name": name}
        except (CommandError, TypeError, ValueError) as exc:
            return {"type": "error", "detail": str(exc)}

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> None:
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)

    def _loop(self) -> None:
        next_wall = time.monotonic()
        while not self._stop.is_set():
            self.tick()
            if self.speed > 0:
                next_wall += PLAN_PERIOD / self.speed
                delay = next_wall - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                else:
                    next_wall = time.monotonic()

    # -- command handling ------------------------------------------------------

    def _apply_commands(self) -> None:
        while True:
            try:
                cmd = self._cmd_queue.get_nowait()
            except queue.Empty:
                return
            name = cmd["name"]
            args = cmd.get("args", {}) or {}
            if name == "select_traj" and self.phase in (PHASE_IDLE, PHASE_AWAIT,
                                                        PHASE_HOVER, PHASE_DONE):
                self.selected = args["name"]
                self.proposed_plans = None
                if self.phase == PHASE_AWAIT:
                    self.phase = PHASE_IDLE
                self.events.append(f"selected {self.selected}")
            elif name == "start":
                if self.selected is None:
                    self.events.append("start refused: no trajectory selected")
                    continue
                if self.phase in (PHASE_IDLE, PHASE_HOVER, PHASE_DONE):
                    self.phase = PHASE_AWAIT
                    self.events.append(f"proposing {self.selected}; confirm to fly")
            elif name == "confirm" and self.phase == PHASE_AWAIT:
                self._begin_mission()
            elif name == "hover":
                if self.phase in (PHASE_FLYING, PHASE_AWAIT):
                    self._hold_here("operator hover")
            elif name == "kill":
                self._kill("operator kill")
            elif name == "wrench":
                force = np.asarray(args.get("force", [0, 0, 0]), dtype=float)
                torque = np.asarray(args.get("torque", [0, 0, 0]), dtype=float)
                dur = float(args.get("duration_s", 1.0))
                self.wrench = WrenchRequest(force, torque, self.t + dur)
                self.events.append(f"wrench {force.tolist()} N for {dur:.1f} s")

    def _begin_mission(self) -> None:
        spec = TRAJECTORIES[self.selected]
        if spec is None:
            self.traj = HoverTrajectory(self.world.load.p.copy())
        else:
            start = TrajSpec(**{**spec.__dict__,
                                "base_height": float(self.world.load.p[2])})
            self.traj = make_trajectory(start)
        self.mission_t = 0.0
        self._err_sq_pos.clear()
        self._err_sq_ori.clear()
        self.phase = PHASE_FLYING
        self.last_heartbeat = time.monotonic()
        self.events.append(f"flying {self.selected}")

    def _hold_here(self, reason: str) -> None:
        self.hold_traj = HoverTrajectory(self.world.load.p.copy(),
                                         self.world.load.q.copy())
        self.phase = PHASE_HOVER
        self.events.append(reason)

    def _kill(self, reason: str) -> None:
        if self.phase != PHASE_KILLED:
            self.phase = PHASE_KILLED
            self.events.append(reason)

    # -- the 10 Hz tick -------------------------------------------------------

    def tick(self) -> dict:
        self._apply_commands()

        if self.phase in (PHASE_FLYING, PHASE_HOVER) and \
                time.monotonic() - self.last_heartbeat > HEARTBEAT_TIMEOUT:
            self._kill("dead-man: heartbeat lost")

        if self.phase == PHASE_FLYING:
            traj = self.traj
            ref_t = self.mission_t
        elif self.phase == PHASE_HOVER:
            traj = self.hold_traj
            ref_t = 0.0
        else:
            traj = HoverTrajectory(self.world.load.p.copy(), self.world.load.q.copy()) \
                if self.phase != PHASE_KILLED else self.hold_traj
            ref_t = 0.0

        load_p = self.world.load.p
        for i in range(3):
            self.histories[i].record(self.t, load_p, self.world.load.q,
                                     self.world.uavs[i])
        ref = make_ref_window(traj, ref_t, load_p)
        if self.params is not None and self.phase == PHASE_FLYING:
            windows = [h.window(load_p) for h in self.histories]
            plans = [predict_plan(self.params, windows[i], ref, self.t)
                     for i in range(3)]
            source = "student"
        else:
            plans = self.teacher.plan_all(self.world, ref)
            source = "teacher"
        plans_inertial = [p.to_inertial(load_p) for p in plans]

        if self.phase == PHASE_AWAIT and self.proposed_plans is None:
            spec = TRAJECTORIES[self.selected]
            prop_traj = HoverTrajectory(load_p.copy()) if spec is None else \
                make_trajectory(TrajSpec(**{**spec.__dict__,
                                            "base_height": float(load_p[2])}))
            prop_ref = make_ref_window(prop_traj, 0.0, load_p)
            self.proposed_plans = [p.to_inertial(load_p)
                                   for p in self.teacher.plan_all(self.world, prop_ref)]

        uav_states = [(u.p, u.v, np.zeros(3)) for u in self.world.uavs]
        self.safety_state = safety.check(uav_states, plans_inertial, self.limits,
                                         t_now=self.t)
        if self.safety_state.kind == safety.KIND_KILL:
            self._kill("safety: " + "; ".join(self.safety_state.reasons[:2]))
        elif self.safety_state.kind == safety.KIND_HOVER:
            plans_inertial = [PlanTrajectory.hold(self.t, u.p.copy())
                              for u in self.world.uavs]
            self.events.append("safety hover: "
                               + "; ".join(self.safety_state.reasons[:2]))

        deliveries = [(self.t, i, plans_inertial[i]) for i in range(3)]
        dist = DisturbanceSpec.none()
        if self.wrench is not None:
            if self.t <= self.wrench.until_t:
                f = self.wrench.force
                tau = self.wrench.torque
                fn, tn = np.linalg.norm(f), np.linalg.norm(tau)
                dist = DisturbanceSpec(f / fn if fn > 0 else np.array([0, 0, 1.0]),
                                       tau / tn if tn > 0 else np.array([0, 0, 1.0]),
                                       fn, tn, active=fn > 0 or tn > 0)
            else:
                self.wrench = None

        try:
            self.world = run_control_window(
                self.world, self.controllers, deliveries, self.t, dist, self.rng,
                self.scenario.physics_dt, killed=self.phase == PHASE_KILLED)
        except NumericalBlowup:
            self._kill("simulation diverged")

        if self.phase == PHASE_FLYING:
            s = traj.sample(ref_t)
            self._err_sq_pos.append(float(((self.world.load.p - s.p) ** 2).sum()))
            self._err_sq_ori.append(geom.geodesic_deg(self.world.load.q, s.q) ** 2)
            self.mission_t += PLAN_PERIOD
            if self.mission_t >= getattr(traj, "duration", float("inf")):
                self._hold_here("trajectory complete")
                self.phase = PHASE_DONE
        dists = [np.linalg.norm(self.world.uavs[i].p - self.world.uavs[j].p)
                 for i in range(3) for j in range(i + 1, 3)]
        self._min_dist = min(self._min_dist, min(dists))
        self.t += PLAN_PERIOD

        msg = self._state_message(plans_inertial, source, min(dists))
        self._broadcast(msg)
        return msg

    # -- state serialization -----------------------------------------------

    def _state_message(self, plans, source, min_dist_now) -> dict:
        def body(b):
            return {"p": b.p.tolist(), "q": b.q.tolist(),
                    "v": b.v.tolist(), "omega": b.omega.tolist()}

        shown = self.proposed_plans if self.phase == PHASE_AWAIT else plans
        ref_preview = []
        if self.phase in (PHASE_FLYING, PHASE_AWAIT) and self.selected:
            key = (self.selected, self.phase)
            if self._preview_cache and self._preview_cache[0] == key:
                ref_preview = self._preview_cache[1]
            else:
                spec = TRAJECTORIES[self.selected]
                if spec is not None:
                    traj = self.traj if self.phase == PHASE_FLYING else \
                        make_trajectory(TrajSpec(**{**spec.__dict__,
                                                    "base_height": float(self.world.load.p[2])}))
                    n = 120
                    dur = getattr(traj, "duration", 10.0)
                    ref_preview = [traj.sample(dur * k / n).p[:2].tolist()
                                   for k in range(n + 1)]
                self._preview_cache = (key, ref_preview)
        rmse_pos = float(np.sqrt(np.mean(self._err_sq_pos))) if self._err_sq_pos else 0.0
        rmse_ori = float(np.sqrt(np.mean(self._err_sq_ori))) if self._err_sq_ori else 0.0
        msg = {
            "type": "state",
            "t": round(self.t, 3),
            "phase": self.phase,
            "selected_traj": self.selected,
            "source": source,
            "load": body(self.world.load),
            "uavs": [body(u) for u in self.world.uavs],
            "tensions": self.world.tensions.tolist(),
            "plans": [{"t0": p.t0, "p": p.p.tolist(), "v": p.v.tolist()}
                      for p in (shown or [])],
            "safety": {"kind": self.safety_state.kind,
                       "reasons": self.safety_state.reasons},
            "metrics": {"rmse_pos_m": rmse_pos, "rmse_orient_deg": rmse_ori,
                        "min_distance_m": float(min(self._min_dist, min_dist_now))},
            "events": self.events[-5:],
            "ref_preview": ref_preview,
            "heartbeat_age_s": round(time.monotonic() - self.last_heartbeat, 3),
        }
        return msg

    def _broadcast(self, msg: dict) -> None:
        with self._lock:
            subs = list(self._subscribers)
        for q in subs:
            try:
                q.put_nowait(msg)
            except queue.Full:
                try:
                    q.get_nowait()
                    q.put_nowait(msg)
                except queue.Empty:
                    pass


def create_app(session: ServiceSession) -> FastAPI:
    """FastAPI app exposing the session over a WebSocket at /ws."""
    app = FastAPI(title="trilift operator service")
    app.state.session = session

    @app.get("/health")
    def health():
        return {"phase": session.phase, "t": session.t}

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        import asyncio

        await ws.accept()
        sub = session.subscribe()

        async def pump_states():
            while True:
                try:
                    msg = await asyncio.get_event_loop().run_in_executor(
                        None, sub.get, True, 1.0)
                    await ws.send_text(json.dumps(msg))
                except queue.Empty:
                    continue

        pump = asyncio.create_task(pump_states())
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    cmd = json.loads(raw)
                except json.JSONDecodeError:
                    await ws.send_text(json.dumps(
                        {"type": "error", "detail": "malformed JSON"}))
                    continue
                reply = session.submit(cmd)
                await ws.send_text(json.dumps(reply))
        except WebSocketDisconnect:
            pass
        finally:
            pump.cancel()
            session.unsubscribe(sub)

    return app


def serve(host: str = "127.0.0.1", port: int = 8765,
          scenario: ScenarioConfig | None = None,
          checkpoint=None, speed: float = 1.0) -> None:
    import uvicorn

    session = ServiceSession(scenario=scenario, checkpoint=checkpoint, speed=speed)
    session.start()
    app = create_app(session)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        session.stop()
