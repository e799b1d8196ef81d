"""Command-line interface.

Subcommands: train, adapt, eval, ablate, report. Exit codes: 0 success,
2 configuration error, 3 runtime error. Outputs land only under the run
directory; input files are never modified.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import yaml

from .config import dump_resolved, load_run_config
from .envs import TaskParams
from .errors import ConfigError, MetastratError
from .harness import SUITE_TAGS, EvalReport, build_suite, emit_report, load_records, run_campaign
from .trainers import (
    Checkpoint,
    config_from_dict,
    config_to_dict,
    load_checkpoint,
    save_checkpoint,
    train,
)

CURVE_HEADER = "# iteration,mean_return,sigma_r,stalled"


def _write_curve(path: str, ckpt: Checkpoint) -> None:
    rows = (ckpt.train_state or {}).get("curve", [])
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join([CURVE_HEADER, *rows]) + "\n")
    os.replace(tmp, path)


def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    cfg = rc.training
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    out_dir = args.out or rc.out_dir
    os.makedirs(out_dir, exist_ok=True)
    resolved = dict(rc.resolved)
    resolved["out_dir"] = out_dir
    dump_resolved(resolved, os.path.join(out_dir, "resolved_config.yaml"))

    ckpt_path = os.path.join(out_dir, "checkpoint.json")
    curve_path = os.path.join(out_dir, "learning_curve.csv")
    resume = None
    if os.path.exists(ckpt_path):
        existing = load_checkpoint(ckpt_path)
        if existing.config != config_to_dict(cfg):
            raise ConfigError(
                f"{ckpt_path} was trained with a different configuration; "
                "point out_dir somewhere fresh or restore the original config"
            )
        done = int((existing.train_state or {}).get("global_iter", 0))
        if done >= cfg.total_iterations:
            print(f"training already complete at {done} iterations; nothing to do")
            _write_curve(curve_path, existing)
            return 0
        print(f"resuming from iteration {done}")
        resume = existing

    def checkpoint_cb(snapshot: Checkpoint) -> None:
        save_checkpoint(snapshot, ckpt_path)
        _write_curve(curve_path, snapshot)

    ckpt = train(cfg, checkpoint_cb=checkpoint_cb, resume=resume)
    save_checkpoint(ckpt, ckpt_path)
    _write_curve(curve_path, ckpt)
    print(
        f"trained {ckpt.method} on {ckpt.env_name}: {ckpt.history['iterations']} iterations, "
        f"final mean return {ckpt.history['final_mean_return']:.3f}"
    )
    print(f"run directory: {out_dir}")
    return 0


def _load_task_file(path: str) -> TaskParams:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh) or {}
        except yaml.YAMLError as err:
            raise ConfigError(f"{path}: invalid YAML: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: task file must be a mapping of task parameters")
    known = set(TaskParams.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown task parameters {sorted(unknown)}; valid: {sorted(known)}")
    task = TaskParams(**data)
    task.validate()
    return task


def cmd_adapt(args) -> int:
    if args.episodes < 1:
        raise ConfigError("--episodes must be >= 1")
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {args.checkpoint}") from None
    task = _load_task_file(args.task) if args.task else TaskParams.nominal()
    from .trainers import adapt as run_adapt

    strat = run_adapt(ckpt, task, episodes=args.episodes, method=args.method, seed=args.seed)
    out_dir = args.out or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "adapted")
    os.makedirs(out_dir, exist_ok=True)

    trace_path = os.path.join(out_dir, "so_trace.csv")
    latent_cols = ",".join(f"c{i}" for i in range(len(strat.best_latent)))
    with open(trace_path, "w") as fh:
        fh.write(f"# eval_index,{latent_cols},return\n" if latent_cols else "# eval_index,return\n")
        for line in strat.so_result.trace_lines():
            fh.write(line + "\n")

    doc = {
        "method": strat.method,
        "episodes_used": strat.episodes_used,
        "best_latent": [float(c) for c in strat.best_latent],
        "confirmed_return": strat.confirmed_return,
        "seed": args.seed,
        "task": {name: getattr(task, name) for name in TaskParams.__dataclass_fields__},
    }
    with open(os.path.join(out_dir, "adapted.json"), "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
    if strat.method == "DR":
        print("note: plain robust checkpoint; no latent was adapted")
    print(f"confirmed return {strat.confirmed_return:.3f} (episodes used: {strat.episodes_used})")
    print(f"outputs: {out_dir}")
    return 0


def cmd_eval(args) -> int:
    ckpts = []
    for path in args.checkpoints:
        try:
            ckpts.append(load_checkpoint(path))
        except FileNotFoundError:
            raise ConfigError(f"checkpoint not found: {path}") from None
    base = config_from_dict(ckpts[0].config).range_spec
    suite = build_suite(args.suite, args.tasks, base, args.seed)
    report = run_campaign(ckpts, suite, episodes=args.episodes, seed=args.seed)
    out_dir = args.out or os.path.join(os.path.dirname(os.path.abspath(args.checkpoints[0])), f"eval_{args.suite.lower()}")
    os.makedirs(out_dir, exist_ok=True)
    emit_report(report, "CSV", os.path.join(out_dir, "records.csv"))
    emit_report(report, "HISTOGRAM_CSV", os.path.join(out_dir, "histogram.csv"))
    for method, agg in report.aggregates.items():
        print(
            f"{args.suite} {method}: mean {agg['mean']:.3f} std {agg['std']:.3f} "
            f"n {agg['count']} failures {agg['failures']}"
        )
    print(f"outputs: {out_dir}")
    return 0


ABLATION_PARAMS = {
    "e": "so_budget_train",
    "l": "latent_dim",
    "h": "inner_updates",
}


def cmd_ablate(args) -> int:
    rc = load_run_config(args.config)
    if rc.training.method != "mso":
        raise ConfigError("ablation varies the latent-training procedure; config method must be 'mso'")
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values must be a comma-separated list of integers, got {args.values!r}") from None
    if not values:
        raise ConfigError("--values must name at least one value")
    field = ABLATION_PARAMS[args.param]
    base_cfg = rc.training
    if args.workers is not None:
        base_cfg = replace(base_cfg, workers=args.workers)
    total = base_cfg.total_iterations
    out_root = args.out or (rc.out_dir + f"_ablate_{args.param}")
    os.makedirs(out_root, exist_ok=True)

    rows = []
    for value in values:
        cfg = replace(base_cfg, **{field: value})
        if args.param == "h":
            cfg = replace(cfg, outer_iterations=max(1, total // value))
        variant_dir = os.path.join(out_root, f"{args.param}_{value}")
        os.makedirs(variant_dir, exist_ok=True)
        ckpt_path = os.path.join(variant_dir, "checkpoint.json")
        resume = None
        if os.path.exists(ckpt_path):
            existing = load_checkpoint(ckpt_path)
            if existing.config == config_to_dict(cfg) and int(existing.train_state["global_iter"]) >= cfg.total_iterations:
                print(f"{args.param}={value}: reusing completed checkpoint")
                ckpt = existing
                rows.append(_ablation_row(args, value, ckpt, rc))
                continue
            if existing.config == config_to_dict(cfg):
                resume = existing

        def checkpoint_cb(snapshot, path=ckpt_path, cdir=variant_dir):
            save_checkpoint(snapshot, path)
            _write_curve(os.path.join(cdir, "learning_curve.csv"), snapshot)

        print(f"training variant {args.param}={value} ({cfg.total_iterations} iterations)")
        ckpt = train(cfg, checkpoint_cb=checkpoint_cb, resume=resume)
        save_checkpoint(ckpt, ckpt_path)
        _write_curve(os.path.join(variant_dir, "learning_curve.csv"), ckpt)
        rows.append(_ablation_row(args, value, ckpt, rc))

    table_path = os.path.join(out_root, "ablation.csv")
    with open(table_path, "w") as fh:
        fh.write("# metastrat-ablation v1\n")
        fh.write("param,value,mean_training,mean_extended\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    for row in rows:
        print(f"{row[0]}={row[1]}: training {row[2]:.3f} extended {row[3]:.3f}")
    print(f"table: {table_path}")
    return 0


def _ablation_row(args, value, ckpt, rc):
    base = config_from_dict(ckpt.config).range_spec
    means = {}
    for tag in ("TRAINING_RANGE", "EXTENDED"):
        suite = build_suite(tag, rc.eval_tasks, base, rc.eval_seed)
        report = run_campaign([ckpt], suite, episodes=rc.eval_episodes, seed=rc.eval_seed)
        means[tag] = report.aggregates[ckpt.method]["mean"]
    return (args.param, value, means["TRAINING_RANGE"], means["EXTENDED"])


def cmd_report(args) -> int:
    try:
        records = load_records(args.records)
    except FileNotFoundError:
        raise ConfigError(f"records file not found: {args.records}") from None
    report = EvalReport.from_records(records, bins=args.bins)
    for method, agg in report.aggregates.items():
        print(f"{method}: mean {agg['mean']:.3f} std {agg['std']:.3f} n {agg['count']} failures {agg['failures']}")
    if args.histogram_out:
        emit_report(report, "HISTOGRAM_CSV", args.histogram_out)
        print(f"histogram: {args.histogram_out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metastrat",
        description="Train, adapt, and evaluate latent-conditioned policies on randomized desk-scale environments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a policy from a YAML run config")
    p_train.add_argument("config")
    p_train.add_argument("--workers", type=int, default=None, help="rollout worker processes")
    p_train.add_argument("--out", default=None, help="override the run directory")
    p_train.set_defaults(func=cmd_train)

    p_adapt = sub.add_parser("adapt", help="adapt a checkpoint to one target task")
    p_adapt.add_argument("checkpoint")
    p_adapt.add_argument("--task", default=None, help="YAML file of task parameters (defaults to the nominal task)")
    p_adapt.add_argument("--episodes", type=int, default=15)
    p_adapt.add_argument("--method", choices=["bo", "cmaes", "random"], default=None)
    p_adapt.add_argument("--seed", type=int, default=0)
    p_adapt.add_argument("--out", default=None)
    p_adapt.set_defaults(func=cmd_adapt)

    p_eval = sub.add_parser("eval", help="run an adaptation campaign over a task suite")
    p_eval.add_argument("checkpoints", nargs="+")
    p_eval.add_argument("--suite", choices=SUITE_TAGS, required=True)
    p_eval.add_argument("--tasks", type=int, default=100)
    p_eval.add_argument("--episodes", type=int, default=15)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_abl = sub.add_parser("ablate", help="train and evaluate variants of one hyperparameter")
    p_abl.add_argument("config")
    p_abl.add_argument("--param", choices=sorted(ABLATION_PARAMS), required=True)
    p_abl.add_argument("--values", required=True, help="comma-separated integer values")
    p_abl.add_argument("--workers", type=int, default=None)
    p_abl.add_argument("--out", default=None)
    p_abl.set_defaults(func=cmd_ablate)

    p_rep = sub.add_parser("report", help="recompute aggregates and histograms from a records CSV")
    p_rep.add_argument("records")
    p_rep.add_argument("--bins", type=int, default=30)
    p_rep.add_argument("--histogram-out", default=None)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except MetastratError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
