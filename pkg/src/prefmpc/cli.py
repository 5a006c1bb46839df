"""Command-line entry points: asset generation, experiment runs, the
diversity ablation, head-to-head evaluation, and the labeling service."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (
    ExperimentConfig,
    SeedConfig,
    build_assets,
    compare_variants,
    head_to_head,
    run_experiment,
)
from .mpc import ObjectiveParams
from .oracle import LabelSession
from .service import DEFAULT_PORT, ServiceThread, create_app, default_ui_dir


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return ExperimentConfig.load(path)


def _apply_seed_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    seeds = cfg.seeds
    fields = {}
    for name in ("system", "pool", "training", "evaluation", "strategy"):
        value = getattr(args, f"seed_{name}", None)
        if value is not None:
            fields[name] = value
    if getattr(args, "seed", None) is not None:
        seeds = SeedConfig().shifted(args.seed)
    if fields:
        seeds = replace(seeds, **fields)
    return replace(cfg, seeds=seeds)


def _add_seed_flags(parser) -> None:
    parser.add_argument("--seed", type=int, default=None,
                        help="offset applied to every seed stream")
    for name in ("system", "pool", "training", "evaluation", "strategy"):
        parser.add_argument(f"--seed-{name}", type=int, default=None)


def cmd_gen(args) -> int:
    cfg = _apply_seed_overrides(_load_config(args.config), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    assets = build_assets(cfg)
    assets.dataset.save_jsonl(out / "dataset.jsonl")
    assets.pool.save_jsonl(out / "pool.jsonl")
    thetas = [{"tag": entry.tag, **entry.law.params.to_json_obj()}
              for entry in assets.controllers.entries]
    with (out / "controllers.json").open("w") as fh:
        json.dump(thetas, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with (out / "config.json").open("w") as fh:
        json.dump(cfg.to_json_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(assets.controllers)} controllers, "
          f"{len(assets.dataset)} labeled pairs, {len(assets.pool)} pool pairs "
          f"to {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _apply_seed_overrides(_load_config(args.config), args)
    overrides = {}
    if args.strategy is not None:
        overrides["strategy"] = args.strategy
    if args.variant is not None:
        overrides["variant"] = args.variant
    if args.oracle is not None:
        overrides["oracle"] = args.oracle
    if args.iters is not None:
        overrides["iterations"] = args.iters
    if args.batch is not None:
        overrides["batch_size"] = args.batch
    if args.replay_labels is not None:
        overrides["replay_labels"] = [int(v) for v in args.replay_labels.split(",")]
    if args.full_pool:
        overrides["full_pool_reference"] = True
    if args.port is not None:
        overrides["port"] = args.port
    if overrides:
        cfg = replace(cfg, **overrides)

    if cfg.oracle == "human":
        session = LabelSession()
        app = create_app(session, ui_dir=args.ui_dir or default_ui_dir())
        service = ServiceThread(app, port=cfg.port)
        service.start()
        print(f"labeling service on http://127.0.0.1:{cfg.port} "
              f"(waiting for a human annotator)")
        from .harness import build_assets as _build
        from .harness import make_oracle

        assets = _build(cfg)
        oracle = make_oracle(cfg, assets.sys, session=session)

        def progress(record):
            session.set_iteration(record.iteration)

        try:
            result = run_experiment(cfg, args.out, oracle=oracle, assets=assets,
                                    progress=progress)
        finally:
            service.stop()
    else:
        result = run_experiment(cfg, args.out)
    final = result.history[-1]
    print(f"run complete: {final.n_labeled} labeled pairs, "
          f"final max settling time {final.settle_max:g} "
          f"(artifacts in {result.out_dir})")
    return 0


def cmd_ablation(args) -> int:
    cfg = _apply_seed_overrides(_load_config(args.config), args)
    if args.iters is not None:
        cfg = replace(cfg, iterations=args.iters)
    variants = args.variants.split(",")
    seeds = [int(v) for v in args.seeds.split(",")]
    summary = compare_variants(cfg, variants, seeds, args.out)
    print(json.dumps(summary["mean_final_settle_max"], indent=2, sort_keys=True))
    if summary.get("sum_not_best_divergence"):
        print("note: combined diversity did not beat uncertainty-only on this system")
    return 0


def cmd_eval(args) -> int:
    cfg = _apply_seed_overrides(_load_config(args.config), args)
    with Path(args.theta_a).open() as fh:
        theta_a = ObjectiveParams.from_json_obj(json.load(fh))
    with Path(args.theta_b).open() as fh:
        theta_b = ObjectiveParams.from_json_obj(json.load(fh))
    table = head_to_head(theta_a, theta_b, cfg, args.n_states,
                         args.eval_seed)
    text = json.dumps(table, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    session = LabelSession()
    app = create_app(session, ui_dir=args.ui_dir or default_ui_dir())
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefmpc",
        description="Learn MPC objective weights from pairwise trajectory "
                    "preferences with active learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate initial controllers, dataset, pool")
    p_gen.add_argument("--config", default=None)
    p_gen.add_argument("--out", required=True)
    _add_seed_flags(p_gen)
    p_gen.set_defaults(func=cmd_gen)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("--config", default=None)
    p_run.add_argument("--strategy", choices=["pool", "synth", "synthesis", "random"],
                       default=None)
    p_run.add_argument("--variant", default=None,
                       choices=["uncertainty", "intra", "inter", "sum", "product"])
    p_run.add_argument("--oracle", choices=["synthetic", "human", "replay"],
                       default=None)
    p_run.add_argument("--replay-labels", default=None,
                       help="comma-separated 0/1 labels for the replay oracle")
    p_run.add_argument("--iters", type=int, default=None)
    p_run.add_argument("--batch", type=int, default=None)
    p_run.add_argument("--full-pool", action="store_true",
                       help="also train the reference model on the fully labeled pool")
    p_run.add_argument("--port", type=int, default=None)
    p_run.add_argument("--ui-dir", default=None)
    p_run.add_argument("--out", required=True)
    _add_seed_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_abl = sub.add_parser("ablation", help="compare diversity variants")
    p_abl.add_argument("--config", default=None)
    p_abl.add_argument("--variants",
                       default="uncertainty,intra,inter,sum,product")
    p_abl.add_argument("--seeds", default="0,1,2,3,4")
    p_abl.add_argument("--iters", type=int, default=None)
    p_abl.add_argument("--out", required=True)
    _add_seed_flags(p_abl)
    p_abl.set_defaults(func=cmd_ablation)

    p_eval = sub.add_parser("eval", help="head-to-head evaluation of two weight files")
    p_eval.add_argument("theta_a")
    p_eval.add_argument("theta_b")
    p_eval.add_argument("--config", default=None)
    p_eval.add_argument("--n-states", type=int, default=200)
    p_eval.add_argument("--eval-seed", type=int, default=12345)
    p_eval.add_argument("--out", default=None)
    _add_seed_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_serve = sub.add_parser("serve", help="start the labeling service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=DEFAULT_PORT)
    p_serve.add_argument("--ui-dir", default=None)
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "strategy", None) == "synth":
        args.strategy = "synthesis"
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
