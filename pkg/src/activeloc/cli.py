"""Command line entry point: ``activeloc {gen-data,train,rollout,eval}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .datagen import TrajectoryParams, build_dataset, load_dataset, save_dataset
from .evaluation import TIERS, EvalConfig, resolve_scene, run_trials, sample_task, write_results
from .planners import FileProposer, PlannerConfig, WoMAPPlanner, execute_episode, make_planner, resolve_target
from .scene import CameraModel, Pose, canonical_json
from .world_model import HyperParams, Vocabulary, WorldModel, train


def _read_json(path: str | None) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def cmd_gen_data(args) -> int:
    _, scene = resolve_scene(args.scene)
    params = TrajectoryParams.from_dict(_read_json(args.params)) if args.params else TrajectoryParams()
    vocab_ref = Vocabulary.load(args.vocab).digest
    ds = build_dataset(scene, args.n_traj, CameraModel(), params, args.seed, vocab_ref, args.start_region)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds.records)} records to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _read_json(args.config)
    hyper = HyperParams.from_dict(cfg)
    datasets = [load_dataset(p) for p in args.data]
    model = WorldModel(hyper, datasets[0].camera, seed=args.seed)
    model, log_ = train(model, datasets, hyper, seed=args.seed, vocab=Vocabulary.load(args.vocab))
    model.save(args.out, model._optim_state, {"train_log": [{k: float(v) for k, v in e.items()} for e in log_.epochs]})
    final = log_.final
    print(f"dynamics_nll {final.get('dynamics_nll', float('nan')):.4f} reward_bce {final.get('reward_bce', float('nan')):.4f}")
    return 0


def cmd_rollout(args) -> int:
    name, scene = resolve_scene(args.scene)
    cam = CameraModel()
    vocab = Vocabulary.load(args.vocab)
    model = WorldModel.load(args.ckpt)
    target_id = resolve_target(scene, args.query, vocab)
    if args.start:
        start = Pose.make(*args.start)
    else:
        task = sample_task(scene, name, args.tier, args.seed, cam, args.max_steps, target_id=target_id)
        start = task.start
    cfg = PlannerConfig.from_dict(_read_json(args.planner_config))
    if args.planner == "womap" and args.proposals:
        planner = WoMAPPlanner(FileProposer(args.proposals, model.limits, cfg.K), cfg)
    else:
        planner = make_planner(args.planner, cfg, vocab, cam)
    trace = execute_episode(scene, cam, model, planner, args.query, start, args.max_steps, target_id=target_id, seed=args.seed, vocab=vocab)
    doc = {"scene": name, "query": args.query, "target": target_id, "planner": args.planner, "seed": args.seed, **trace.to_json()}
    text = canonical_json(doc) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    config = EvalConfig.load(args.config)
    rows, agg = run_trials(config, vocab=Vocabulary.load(args.vocab))
    write_results(args.out, rows, agg, args.plot_data)
    print(f"{len(rows)} trials written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="activeloc", description="Active object localization with a latent world model.")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--vocab", default=None, help="vocabulary file (default: packaged)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a labeled trajectory dataset")
    g.add_argument("--scene", required=True, help="scene file or packaged scene name")
    g.add_argument("--out", required=True)
    g.add_argument("--n-traj", type=int, default=30)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--params", help="JSON file of trajectory parameters")
    g.add_argument("--start-region", type=float, nargs=4, metavar=("X0", "Y0", "X1", "Y1"), help="restrict starts to a corridor")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a world model")
    t.add_argument("--data", required=True, nargs="+")
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="JSON file of hyperparameters")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("rollout", help="run one planning episode")
    r.add_argument("--scene", required=True)
    r.add_argument("--ckpt", required=True)
    r.add_argument("--query", required=True)
    r.add_argument("--planner", choices=["grad", "cem", "hr", "womap", "random"], default="womap")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--start", type=float, nargs=3, metavar=("X", "Y", "THETA"))
    r.add_argument("--tier", choices=TIERS, default="medium", help="tier of the sampled start when --start is absent")
    r.add_argument("--max-steps", type=int, default=40)
    r.add_argument("--proposals", help="ranked proposal JSON for the womap planner")
    r.add_argument("--planner-config", help="JSON file of planner settings")
    r.add_argument("--out")
    r.set_defaults(func=cmd_rollout)

    e = sub.add_parser("eval", help="run a trial battery")
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--plot-data", action="store_true", help="also write per-figure CSVs")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
