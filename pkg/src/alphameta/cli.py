"""Command-line entry point: ``python -m alphameta <command> ...``.

Every command takes ``--seed``, ``--output`` and ``--config``. A config file
is a JSON object whose keys set option defaults (dashes or underscores);
explicit flags win. For ``experiment`` the config is an experiment spec and
may also carry ``train``, ``data`` and ``direct_bound`` blocks.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bounds import BoundConfig, evaluate_corollary_bound, evaluate_theorem2_bound, rademacher_linear
from .experiments import METHODS, ExperimentSpec, run_experiment
from .features import BasisFn, LossEmbedding, median_bandwidth
from .gradient_meta import WEIGHT_MODES, TrainConfig, train_alpha_maml
from .kernel_distance import build_task_gram, kernel_distance, per_source_distances
from .linear_meta import DEFAULT_ETA, fit_weighted_linear
from .tasks import SyntheticSpec, TaskCollection, generate, load_csv_tasks
from .weights import solve_weights

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default=None, help="file (or directory for experiment) to write")
    p.add_argument("--config", default=None, help="JSON file with option defaults")


def _task_inputs(p):
    g = p.add_argument_group("tasks")
    g.add_argument("--tasks", help="TaskCollection JSON (as written by `generate`)")
    g.add_argument("--csv", help="CSV file split into tasks by --group-column")
    g.add_argument("--group-column")
    g.add_argument("--source-group", action="append", dest="source_groups", default=None,
                   help="interval like '[19,29)' or literal value; repeat per source")
    g.add_argument("--target-group")
    g.add_argument("--label-column")
    g.add_argument("--drop-unmatched", action="store_true")


def _embedding_opts(p):
    g = p.add_argument_group("embedding")
    g.add_argument("--loss", choices=("square", "hinge"), default="square")
    g.add_argument("--basis", choices=("none", "identity", "rff"), default="identity")
    g.add_argument("--rff-dim", type=int, default=100)
    g.add_argument("--sigma", type=float, default=None, help="RFF bandwidth (default: median heuristic)")
    g.add_argument("--normalize", action="store_true", help="rescale basis outputs to norm <= 1")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="alphameta", description="Kernel-distance weighted meta-learning.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", help="write a synthetic TaskCollection as JSON")
    _common(p)
    p.add_argument("--family", choices=("linear1d", "sine"), default="linear1d")
    p.add_argument("--num-sources", type=int, default=None)
    p.add_argument("--target-size", type=int, default=None)
    p.add_argument("--eval-size", type=int, default=None)
    p.add_argument("--samples-per-source", type=int, default=None)

    p = sub.add_parser("distance", help="per-source kernel distances and the alpha-mixture distance")
    _common(p)
    _task_inputs(p)
    _embedding_opts(p)
    p.add_argument("--method", choices=("qp", "threshold", "uniform"), default="qp")

    p = sub.add_parser("weights", help="solve for source weights")
    _common(p)
    _task_inputs(p)
    _embedding_opts(p)
    p.add_argument("--method", choices=("qp", "threshold", "uniform"), default="qp")

    p = sub.add_parser("fit-linear", help="closed-form weighted ERM / MAML on a linear basis")
    _common(p)
    _task_inputs(p)
    _embedding_opts(p)
    p.add_argument("--method", choices=("qp", "threshold", "uniform"), default="qp")
    p.add_argument("--mode", choices=("erm", "maml"), default="maml")
    p.add_argument("--eta", type=float, default=DEFAULT_ETA)
    p.add_argument("--ridge", type=float, default=None)

    p = sub.add_parser("train-maml", help="meta-train the sine network")
    _common(p)
    _task_inputs(p)
    p.add_argument("--weight-mode", choices=WEIGHT_MODES, default="qp")
    p.add_argument("--meta-iters", type=int, default=TrainConfig.meta_iters)
    p.add_argument("--batch-tasks", type=int, default=TrainConfig.batch_tasks)
    p.add_argument("--inner-lr", type=float, default=TrainConfig.inner_lr)
    p.add_argument("--outer-lr", type=float, default=TrainConfig.outer_lr)
    p.add_argument("--order", choices=("first", "second"), default="second")
    p.add_argument("--log", default=None, help="CSV training log path")
    p.add_argument("--log-every", type=int, default=TrainConfig.log_every)

    p = sub.add_parser("bound", help="evaluate the generalization bound (tight and weighted-sum forms)")
    _common(p)
    _task_inputs(p)
    _embedding_opts(p)
    p.add_argument("--method", choices=("qp", "threshold", "uniform"), default="qp")
    p.add_argument("--loss-range", type=float, nargs=2, default=(0.0, 1.0), metavar=("A", "B"))
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--mc-draws", type=int, default=1000)
    p.add_argument("--norm-bound", type=float, default=1.0)
    p.add_argument("--rademacher", type=float, default=None, help="use this value instead of estimating")

    p = sub.add_parser("experiment", help="run an experiment family and write result files")
    _common(p)
    p.add_argument("--name", choices=("linear1d", "sine", "csv_regression", "sales_rff"))
    p.add_argument("--methods", nargs="+", choices=METHODS, default=None)
    p.add_argument("--shots", type=int, nargs="+", default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--meta-iters", type=int, default=None)
    p.add_argument("--num-sources", type=int, default=None)
    p.add_argument("--adapt-steps", type=int, default=None)
    return parser


# --------------------------------------------------------------------------

def _load_tasks(args) -> TaskCollection:
    if args.tasks and args.csv:
        raise UsageError("give either --tasks or --csv, not both")
    if args.tasks:
        return TaskCollection.load(args.tasks)
    if args.csv:
        missing = [f for f in ("group_column", "source_groups", "target_group", "label_column")
                   if not getattr(args, f)]
        if missing:
            raise UsageError("--csv needs " + ", ".join("--" + m.replace("_", "-").rstrip("s") for m in missing))
        return load_csv_tasks(args.csv, args.group_column, args.source_groups, args.target_group,
                              args.label_column, unmatched="drop" if args.drop_unmatched else "error")
    raise UsageError("no input tasks: pass --tasks or --csv")


def _basis(args, tasks: TaskCollection) -> BasisFn | None:
    if args.basis == "none":
        return None
    if args.basis == "identity":
        return BasisFn("identity_with_bias", input_dim=tasks.dim, normalize=args.normalize)
    sigma = args.sigma
    if sigma is None:
        sigma = median_bandwidth(np.vstack([t.features for t in tasks.all_tasks()]), seed=args.seed)
    return BasisFn("random_fourier", input_dim=tasks.dim, output_dim=args.rff_dim, sigma=sigma,
                   seed=args.seed, normalize=args.normalize)


def _gram(args):
    tasks = _load_tasks(args)
    basis = _basis(args, tasks)
    return tasks, basis, build_task_gram(tasks, LossEmbedding(args.loss, basis))


def _emit(args, doc: dict, text: str | None = None) -> None:
    if text is not None:
        print(text)
    if args.output:
        Path(args.output).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_generate(args) -> None:
    kw = {k: getattr(args, k) for k in ("num_sources", "target_size", "eval_size", "samples_per_source")
          if getattr(args, k) is not None}
    extra = getattr(args, "_extra", {})
    spec = SyntheticSpec(args.family, seed=args.seed, **{**extra, **kw})
    text = generate(spec).dumps()
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_distance(args) -> None:
    tasks, basis, gram = _gram(args)
    per = per_source_distances(gram)
    w = solve_weights(gram, args.method)
    mix = kernel_distance(gram, w)
    lines = [f"{i}\t{float(d)!r}" for i, d in zip(gram.ids[:-1], per)]
    lines.append(f"alpha_mixture[{args.method}]\t{mix!r}")
    doc = {"per_source": dict(zip(gram.ids[:-1], per.tolist())), "mixture": mix,
           "alpha": w.to_dict(), "kernel_meta": gram.kernel_meta, "seed": args.seed}
    _emit(args, doc, "\n".join(lines))


def cmd_weights(args) -> None:
    tasks, basis, gram = _gram(args)
    w = solve_weights(gram, args.method)
    doc = {**w.to_dict(), "ids": list(gram.ids[:-1]), "kernel_meta": gram.kernel_meta, "seed": args.seed}
    ranked = "\n".join(f"{i}\t{a!r}" for i, a in w.ranked())
    _emit(args, doc, json.dumps(w.alpha.tolist()) + "\n" + ranked)


def cmd_fit_linear(args) -> None:
    tasks, basis, gram = _gram(args)
    w = solve_weights(gram, args.method)
    model = fit_weighted_linear(tasks, basis, w, args.eta, args.mode, args.ridge)
    doc = {**model.to_dict(basis), "seed": args.seed}
    _emit(args, doc, json.dumps(model.w.tolist()))


def cmd_train_maml(args) -> None:
    tasks = _load_tasks(args)
    cfg = TrainConfig(inner_lr=args.inner_lr, outer_lr=args.outer_lr, meta_iters=args.meta_iters,
                      batch_tasks=args.batch_tasks, order=args.order, seed=args.seed,
                      log_every=args.log_every)
    log: list[dict] = []
    params = train_alpha_maml(tasks, cfg, args.weight_mode, log=log)
    if args.log:
        import csv
        with open(args.log, "w", newline="", encoding="utf-8") as fh:
            fh.write("# config: " + json.dumps({**cfg.to_dict(), "weight_mode": args.weight_mode},
                                               sort_keys=True, separators=(",", ":")) + "\n")
            writer = csv.DictWriter(fh, ["iter", "weighted_loss", "gamma_k", "alpha_entropy"], lineterminator="\n")
            writer.writeheader()
            writer.writerows(log)
    doc = {**params.to_dict(), "config": cfg.to_dict(), "weight_mode": args.weight_mode}
    last = log[-1] if log else {}
    _emit(args, doc, json.dumps({"meta_iters": cfg.meta_iters, **last}))


def cmd_bound(args) -> None:
    tasks, basis, gram = _gram(args)
    cfg = BoundConfig(tuple(args.loss_range), args.epsilon, args.mc_draws)
    w = solve_weights(gram, args.method)
    if args.rademacher is not None:
        rad, se = float(args.rademacher), 0.0
    else:
        est = rademacher_linear(tasks.target, basis, args.norm_bound, args.mc_draws, args.seed)
        rad, se = est.value, est.std_error
    tight = evaluate_theorem2_bound(gram, w, rad, cfg)
    loose = evaluate_corollary_bound(gram, w, rad, cfg)
    doc = {"tight": tight.to_dict(), "weighted_sum": loose.to_dict(), "rademacher": rad,
           "rademacher_std_error": se, "alpha": w.to_dict(), "seed": args.seed}
    _emit(args, doc, json.dumps({"tight": tight.to_dict(), "weighted_sum": loose.to_dict()}))


def cmd_experiment(args) -> None:
    base = dict(getattr(args, "_extra", {}))
    for key in ("name", "methods", "shots", "trials", "num_sources", "adapt_steps"):
        v = getattr(args, key)
        if v is not None:
            base[key] = v
    if "name" not in base:
        raise UsageError("experiment needs --name (or a config with a name)")
    if args.meta_iters is not None:
        base["train"] = {**base.get("train", {}), "meta_iters": args.meta_iters}
    base["seed"] = args.seed
    base["output_dir"] = args.output or f"results/{base['name']}"
    spec = ExperimentSpec.from_dict(base)
    result = run_experiment(spec)
    print("RMSE of the initialization")
    print(result.table("rmse_init"))
    print(f"\nRMSE after {spec.adapt_steps} adaptation steps")
    print(result.table("rmse_adapted"))
    print(f"\nwrote {spec.output_dir}")


COMMANDS = {
    "generate": cmd_generate, "distance": cmd_distance, "weights": cmd_weights,
    "fit-linear": cmd_fit_linear, "train-maml": cmd_train_maml, "bound": cmd_bound,
    "experiment": cmd_experiment,
}


def _apply_config(parser, argv, args):
    """Re-parse with defaults taken from the config file; keys with no matching
    option are kept in ``args._extra`` (experiment and generate use them)."""
    try:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except OSError as e:
        raise RuntimeError(f"cannot read config {args.config}: {e}") from e
    except json.JSONDecodeError as e:
        raise UsageError(f"config {args.config} is not valid JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    dests = {a.dest for a in sub._actions}
    known, extra = {}, {}
    for k, v in cfg.items():
        key = k.replace("-", "_")
        (known if key in dests and key not in ("config", "output") else extra)[key] = v
    if args.command not in ("experiment", "generate") and extra:
        raise UsageError(f"unknown config keys for {args.command}: {sorted(extra)}")
    sub.set_defaults(**known)
    args = parser.parse_args(argv)
    args._extra = extra
    return args


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            args = _apply_config(parser, argv, args)
        COMMANDS[args.command](args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
