"""Command-line entry points: train, run, metrics, serve, ablate-decoder."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .harness import CommModel, compute_metrics, run_episode
from .learn import DaggerConfig, LossWeights, dagger_train
from .policy import ArchSpec
from .trajgen import TrajSpec, make_trajectory
from .world import ScenarioConfig

TRAJECTORY_PRESETS = {
    "eight_2.2x2": TrajSpec(kind="eight", x_amp=1.1, y_amp=1.0, period=10.0),
    "eight_2.7x2.7": TrajSpec(kind="eight", x_amp=1.35, y_amp=1.35, period=10.0),
    "circle_r2": TrajSpec(kind="circle", radius=2.0, period=12.0),
    "square_s2": TrajSpec(kind="square", side=2.0, period=16.0),
}


def load_scenario(path: str | None) -> ScenarioConfig:
    return ScenarioConfig() if path is None else ScenarioConfig.from_json(path)


def resolve_trajectory(name: str, orientation: str = "constant", laps: float = 2.0):
    if name in TRAJECTORY_PRESETS:
        spec = TRAJECTORY_PRESETS[name]
        spec = TrajSpec(**{**spec.__dict__, "orientation": orientation, "laps": laps})
        return make_trajectory(spec)
    path = Path(name)
    if path.suffix == ".csv":
        return make_trajectory(TrajSpec(kind="track_csv", csv_path=str(path),
                                        orientation=orientation))
    if path.suffix == ".json":
        return make_trajectory(TrajSpec(**json.loads(path.read_text())))
    raise SystemExit(f"unknown trajectory {name!r}; presets: "
                     f"{sorted(TRAJECTORY_PRESETS)} or a .csv/.json path")


def cmd_train(args) -> int:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    traj_names = raw.pop("trajectories", ["eight_2.2x2"])
    orientation = raw.pop("orientation", "constant")
    laps = raw.pop("laps", 2.0)
    scenario = ScenarioConfig(**raw.pop("scenario", {}))
    arch = ArchSpec.tiny() if raw.pop("preset", "tiny") == "tiny" else ArchSpec()
    loss = LossWeights(**raw.pop("loss", {}))
    cfg = DaggerConfig(arch=arch, loss=loss, **raw)
    trajs = [resolve_trajectory(n, orientation, laps) for n in traj_names]
    _, report = dagger_train(cfg, scenario, trajs, out_dir=args.out)
    print(json.dumps({"rounds": len(report["rounds"]),
                      "final_train_loss": report["rounds"][-1]["train_loss"],
                      "final_holdout_loss": report["rounds"][-1]["holdout_loss"],
                      "checkpoint": str(Path(args.out) / "checkpoint.json"),
                      "wall_clock_s": report["wall_clock_s"]}, indent=2))
    return 0


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    traj = resolve_trajectory(args.traj, args.orientation, args.laps)
    comm = CommModel(args.drop, args.delay)
    log = run_episode(scenario, traj, controller=args.controller,
                      checkpoint=args.checkpoint, comm=comm, seed=args.seed,
                      duration=args.duration)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "episode.jsonl"
    log.to_jsonl(log_path)
    report = compute_metrics(log)
    report.to_json(out / "metrics.json")
    series = out / "tracking.csv"
    with open(series, "w") as fh:
        fh.write("t,load_x,load_y,load_z,ref_x,ref_y,ref_z,min_dist\n")
        for rec, d in zip(log.records, report.min_distance_series):
            fh.write(",".join(str(v) for v in
                              [rec.t, *rec.load_p, *rec.ref_p, d]) + "\n")
    print(json.dumps({"outcome": log.outcome, "rmse_pos_m": report.rmse_pos,
                      "rmse_orient_deg": report.rmse_orient_deg,
                      "min_distance_m": report.min_distance,
                      "log": str(log_path)}, indent=2))
    return 0


def cmd_metrics(args) -> int:
    from .harness import EpisodeLog

    log = EpisodeLog.from_jsonl(args.log)
    report = compute_metrics(log)
    doc = {
        "rmse_pos_m": report.rmse_pos,
        "rmse_orient_deg": report.rmse_orient_deg,
        "min_inter_agent_distance_m": report.min_distance,
        "consistency_mae": report.consistency_mae,
        "outcome": report.outcome,
    }
    print(json.dumps(doc, indent=2))
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    scenario = load_scenario(args.scenario)
    serve(host=args.host, port=args.port, scenario=scenario,
          checkpoint=args.checkpoint, speed=args.speed)
    return 0


def cmd_ablate(args) -> int:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    traj_names = raw.pop("trajectories", ["eight_2.2x2"])
    scenario = ScenarioConfig(**raw.pop("scenario", {}))
    raw.pop("preset", None)
    trajs = [resolve_trajectory(n) for n in traj_names]
    results = {}
    for kind in ("pinn", "mlp"):
        cfg = DaggerConfig(arch=ArchSpec.tiny(decoder_kind=kind), **raw)
        params, report = dagger_train(cfg, scenario, trajs,
                                      out_dir=Path(args.out) / kind)
        log = run_episode(scenario, trajs[0], controller="student",
                          checkpoint=params, seed=1234,
                          duration=raw.get("episode_duration", 20.0))
        m = compute_metrics(log)
        results[kind] = {"consistency_mae": m.consistency_mae,
                         "rmse_pos_m": m.rmse_pos, "outcome": log.outcome}
    ratio = results["mlp"]["consistency_mae"]["overall"] / \
        max(results["pinn"]["consistency_mae"]["overall"], 1e-12)
    results["mlp_over_pinn_consistency_ratio"] = ratio
    Path(args.out, "ablation.json").write_text(json.dumps(results, indent=2))
    print(json.dumps(results, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trilift",
                                description="3-UAV cable-suspended load: "
                                            "simulator, teacher, and imitation learning")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the DAgger loop and save a checkpoint")
    t.add_argument("--config", help="training config JSON")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(fn=cmd_train)

    r = sub.add_parser("run", help="run one closed-loop episode")
    r.add_argument("--scenario", help="scenario JSON")
    r.add_argument("--traj", default="eight_2.2x2")
    r.add_argument("--orientation", default="constant",
                   choices=["constant", "zero_sideslip"])
    r.add_argument("--laps", type=float, default=2.0)
    r.add_argument("--controller", default="teacher",
                   choices=["teacher", "student", "student_ekf"])
    r.add_argument("--checkpoint")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--duration", type=float, default=None)
    r.add_argument("--drop", type=float, default=0.0, help="plan drop probability")
    r.add_argument("--delay", type=float, default=0.0, help="max plan delay, s")
    r.add_argument("--out", default="out")
    r.set_defaults(fn=cmd_run)

    m = sub.add_parser("metrics", help="recompute metrics from an episode log")
    m.add_argument("--log", required=True)
    m.set_defaults(fn=cmd_metrics)

    s = sub.add_parser("serve", help="operator service: state stream + commands")
    s.add_argument("--port", type=int, default=8765)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--scenario")
    s.add_argument("--checkpoint", help="fly a student checkpoint instead of the teacher")
    s.add_argument("--speed", type=float, default=1.0,
                   help="simulation speed factor (1 = real time)")
    s.set_defaults(fn=cmd_serve)

    a = sub.add_parser("ablate-decoder",
                       help="train PINN and plain-MLP decoders, compare consistency")
    a.add_argument("--config", help="training config JSON")
    a.add_argument("--out", required=True)
    a.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
