"""Training: imitation loss over full plans, exact gradients through the
jet-propagated decoder, Adam, and the DAgger loop with disturbance
randomization and dataset persistence."""

from __future__ import annotations

import gzip
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .flightctl import FRAME_LOAD, NODE_COUNT, PlanTrajectory
from .policy import (ArchSpec, NormSpec, ObsWindow, PolicyParams, decode_nodes,
                     decode_values_only, encode, init_params, save_checkpoint,
                     stack_streams, window_streams)
from .trajgen import RefWindow


class NonFiniteGradient(RuntimeError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass
class LossWeights:
    w_p: float = 1.0
    w_omega: float = 0.5
    w_v: float = 0.1
    w_a: float = 0.01


@dataclass
class LabeledSample:
    """One DAgger dataset unit: what the UAV saw and what the teacher planned."""

    window: ObsWindow
    ref: RefWindow
    target: PlanTrajectory      # load frame
    uav_index: int
    episode_id: int
    t: float

    def __post_init__(self):
        if self.target.p.shape[0] != NODE_COUNT:
            raise ShapeMismatch("target must have 22 nodes")
        self._streams = None

    def streams(self, norms: NormSpec) -> dict:
        # samples are revisited every epoch of every round: build once
        if self._streams is None:
            self._streams = window_streams(self.window, self.ref, norms)
        return self._streams


def imitation_loss(pred: PlanTrajectory, target: PlanTrajectory,
                   weights: LossWeights | None = None) -> float:
    """Per-channel mean squared node error, weighted and summed."""
    weights = weights or LossWeights()
    if pred.p.shape != target.p.shape:
        raise ShapeMismatch("plan node shapes differ")
    loss = 0.0
    for w, a, b in ((weights.w_p, pred.p, target.p),
                    (weights.w_omega, pred.omega, target.omega),
                    (weights.w_v, pred.v, target.v),
                    (weights.w_a, pred.a, target.a)):
        loss += w * float(((a - b) ** 2).sum()) / NODE_COUNT
    return loss


# -- batched forward/backward ---------------------------------------------------


def _prepare(samples, norms: NormSpec):
    streams = stack_streams([s.streams(norms) for s in samples])
    targets = {
        "p": np.stack([s.target.p for s in samples]),
        "omega": np.stack([s.target.omega for s in samples]),
        "v": np.stack([s.target.v for s in samples]),
        "a": np.stack([s.target.a for s in samples]),
    }
    return streams, targets


def batch_loss(params: PolicyParams, samples, weights: LossWeights | None = None,
               derivative_supervision: bool = True) -> float:
    loss, _ = batch_loss_and_grads(params, samples, weights,
                                   derivative_supervision, need_grads=False)
    return loss


def batch_loss_and_grads(params: PolicyParams, samples,
                         weights: LossWeights | None = None,
                         derivative_supervision: bool = True,
                         need_grads: bool = True):
    """Imitation loss over a batch and exact gradients w.r.t. every weight.

    Gradients flow through the velocity/acceleration heads by reverse-mode
    differentiation of the jet forward pass. With derivative_supervision
    off, the v/a terms are dropped and the second-order path is skipped.
    """
    weights = weights or LossWeights()
    streams, targets = _prepare(samples, params.norms)
    b = len(samples)
    taus = samples[0].target.timestamps - samples[0].target.t0

    if need_grads:
        wt = {k: Tensor(v, requires_grad=True) for k, v in params.weights.items()}
    else:
        wt = params.weights
    x = encode(wt, params.arch, streams)
    scale = 1.0 / (NODE_COUNT * b)
    if derivative_supervision:
        p, om, v, a = decode_nodes(wt, params.arch, params.norms, x, taus)
        terms = ((weights.w_p, p, targets["p"]), (weights.w_omega, om, targets["omega"]),
                 (weights.w_v, v, targets["v"]), (weights.w_a, a, targets["a"]))
    else:
        p, om = decode_values_only(wt, params.arch, params.norms, x, taus)
        terms = ((weights.w_p, p, targets["p"]),
                 (weights.w_omega, om, targets["omega"]))
    loss = None
    for w, pred, tgt in terms:
        d = pred - tgt
        term = (d * d).sum() * (w * scale)
        loss = term if loss is None else loss + term
    if not need_grads:
        return float(loss.data) if isinstance(loss, Tensor) else float(loss), None
    loss.backward()
    grads = {}
    for k, t in wt.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient in {k}")
        grads[k] = g
    return float(loss.data), grads


# -- Adam ------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: PolicyParams, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> PolicyParams:
    state.step += 1
    t = state.step
    for k, g in grads.items():
        m = state.m.get(k)
        if m is None:
            m = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        v = state.v[k]
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * (g * g)
        state.m[k] = m
        state.v[k] = v
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        params.weights[k] = params.weights[k] - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


# -- dataset persistence ----------------------------------------------------------


def _sample_to_dict(s: LabeledSample) -> dict:
    return {
        "uav": s.uav_index, "episode": s.episode_id, "t": s.t,
        "window": {"rows": s.window.rows.tolist(), "mask": s.window.mask.tolist()},
        "ref": {"t0": s.ref.t0, "p": s.ref.p.tolist(), "v": s.ref.v.tolist(),
                "a": s.ref.a.tolist(), "q": s.ref.q.tolist(),
                "omega": s.ref.omega.tolist()},
        "target": {"t0": s.target.t0, "p": s.target.p.tolist(),
                   "omega": s.target.omega.tolist(), "v": s.target.v.tolist(),
                   "a": s.target.a.tolist()},
    }


def _sample_from_dict(d: dict) -> LabeledSample:
    window = ObsWindow(np.asarray(d["window"]["rows"]), np.asarray(d["window"]["mask"]))
    r = d["ref"]
    ref = RefWindow(r["t0"], np.asarray(r["p"]), np.asarray(r["v"]),
                    np.asarray(r["a"]), np.asarray(r["q"]), np.asarray(r["omega"]))
    tg = d["target"]
    target = PlanTrajectory(tg["t0"], np.asarray(tg["p"]), np.asarray(tg["omega"]),
                            np.asarray(tg["v"]), np.asarray(tg["a"]), FRAME_LOAD)
    return LabeledSample(window, ref, target, d["uav"], d["episode"], d["t"])


def save_dataset(samples, path: str | Path, compress: bool | None = None) -> None:
    path = Path(path)
    if compress is None:
        compress = path.suffix == ".gz"
    opener = gzip.open if compress else open
    with opener(path, "wt") as fh:
        for s in samples:
            fh.write(json.dumps(_sample_to_dict(s)) + "\n")


def load_dataset(path: str | Path):
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt") as fh:
        return [_sample_from_dict(json.loads(line)) for line in fh if line.strip()]


def checkpoint_hash(params: PolicyParams) -> str:
    doc = json.dumps({k: v.tolist() for k, v in sorted(params.weights.items())})
    return hashlib.sha256(doc.encode()).hexdigest()


# -- DAgger ------------------------------------------------------------------------


@dataclass
class DaggerConfig:
    rounds: int = 20
    epochs: int = 16
    batch_size: int = 64
    lr: float = 1e-3
    disturbance_rounds: int = 5      # trailing rounds with load disturbances
    force_max: float = 1.0           # N, uniform magnitude bound
    torque_max: float = 0.1          # N*m
    seed: int = 0
    derivative_supervision: bool = True
    holdout_fraction: float = 0.1    # carved out of round-1 samples
    episode_duration: float | None = None
    arch: ArchSpec = field(default_factory=ArchSpec)
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("need at least one round")

    def beta(self, round_k: int) -> float:
        if self.rounds == 1:
            return 0.0
        return (round_k - 1) / (self.rounds - 1)


def train_epochs(params: PolicyParams, dataset, cfg: DaggerConfig,
                 rng: np.random.Generator, state: AdamState) -> float:
    """cfg.epochs passes of minibatch Adam over the dataset; returns the
    mean loss of the final epoch."""
    n = len(dataset)
    last = 0.0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            batch = [dataset[i] for i in perm[lo:lo + cfg.batch_size]]
            loss, grads = batch_loss_and_grads(
                params, batch, cfg.loss,
                derivative_supervision=cfg.derivative_supervision)
            adam_step(params, grads, state, cfg.lr)
            losses.append(loss)
        last = float(np.mean(losses))
    return last


def dagger_train(cfg: DaggerConfig, scenario, trajectories, out_dir: str | Path | None = None,
                 params: PolicyParams | None = None):
    """Run the full DAgger loop and return (params, report).

    Per round: one episode per trajectory, executing student plans with
    probability beta_k at each planner tick (all UAVs switch together) and
    teacher plans otherwise; the teacher is always queried for labels.
    Disturbances are active during the trailing disturbance_rounds. After
    collection the policy trains on the aggregated dataset.
    """
    from .harness import EpisodeRunner  # deferred: harness imports policy

    t_start = time.time()
    params = params or init_params(cfg.arch, seed=cfg.seed)
    state = AdamState()
    train_rng = np.random.default_rng(cfg.seed + 1)
    mix_rng = np.random.default_rng(cfg.seed + 2)
    dataset: list[LabeledSample] = []
    holdout: list[LabeledSample] = []
    report = {"rounds": [], "config": {"rounds": cfg.rounds, "epochs": cfg.epochs,
                                       "batch_size": cfg.batch_size, "lr": cfg.lr,
                                       "seed": cfg.seed}}

    for k in range(1, cfg.rounds + 1):
        beta = cfg.beta(k)
        disturbed = k > cfg.rounds - cfg.disturbance_rounds
        new_samples: list[LabeledSample] = []
        outcomes = []
        student_ticks = 0
        total_ticks = 0
        for ti, traj_spec in enumerate(trajectories):
            episode_id = (k - 1) * len(trajectories) + ti
            # entries may be trajectory factories (round, index) -> trajectory,
            # e.g. freshly sampled pose-to-pose goals each round
            traj = traj_spec(k, ti) if callable(traj_spec) else traj_spec
            runner = EpisodeRunner(
                scenario, traj, seed=cfg.seed * 1000 + episode_id,
                force_max=cfg.force_max if disturbed else 0.0,
                torque_max=cfg.torque_max if disturbed else 0.0)

            def plan_source(ctx):
                nonlocal student_ticks, total_ticks
                for i in range(3):
                    new_samples.append(LabeledSample(
                        ctx.windows[i], ctx.ref_window, ctx.teacher_plans[i],
                        i, episode_id, ctx.t))
                total_ticks += 1
                use_student = mix_rng.uniform() < beta
                if use_student:
                    student_ticks += 1
                    plans = [ctx.predict_student(params, i) for i in range(3)]
                    return plans, ctx.load_view_p, "student"
                return ctx.teacher_plans, ctx.truth_load_p, "teacher"

            duration = cfg.episode_duration or min(getattr(traj, "duration", 20.0), 60.0)
            log = runner.run(duration, plan_source=plan_source)
            outcomes.append(log.outcome)

        if k == 1 and cfg.holdout_fraction > 0:
            stride = max(2, int(round(1.0 / cfg.holdout_fraction)))
            holdout = new_samples[::stride]
            kept = [s for i, s in enumerate(new_samples) if i % stride != 0]
            dataset.extend(kept)
        else:
            dataset.extend(new_samples)

        train_loss = train_epochs(params, dataset, cfg, train_rng, state)
        holdout_loss = None
        if holdout:
            holdout_loss = 0.0
            for lo in range(0, len(holdout), cfg.batch_size):
                chunk = holdout[lo:lo + cfg.batch_size]
                l, _ = batch_loss_and_grads(params, chunk, cfg.loss,
                                            cfg.derivative_supervision,
                                            need_grads=False)
                holdout_loss += l * len(chunk)
            holdout_loss /= len(holdout)
        report["rounds"].append({
            "round": k, "beta": beta, "dataset_size": len(dataset),
            "train_loss": train_loss, "holdout_loss": holdout_loss,
            "student_fraction": student_ticks / max(1, total_ticks),
            "disturbed": disturbed, "outcomes": outcomes,
            "elapsed_s": time.time() - t_start,
        })

    report["wall_clock_s"] = time.time() - t_start
    report["checkpoint_hash"] = checkpoint_hash(params)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(params, out / "checkpoint.json")
        save_dataset(dataset, out / "dataset.jsonl.gz")
        (out / "report.json").write_text(json.dumps(report, indent=2))
    return params, report
