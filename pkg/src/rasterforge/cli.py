"""Command-line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .iterate.space import SpaceError
from .iterate.study import BenchmarkConfigError, StudyExists, StudyMismatch

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

CONFIG_ERRORS = (ConfigError, BenchmarkConfigError, SpaceError, StudyExists, StudyMismatch)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _diagnose(exc: BaseException, code: int, json_errors: bool) -> int:
    if json_errors:
        payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        for attr in ("location", "line", "column", "key", "suggestion"):
            val = getattr(exc, attr, None)
            if val is not None:
                payload[attr] = val
        print(json.dumps(payload), file=sys.stderr)
    else:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return code


def _overrides(args) -> dict:
    return {"trainer.seed": args.seed} if getattr(args, "seed", None) is not None else {}


def cmd_fit(args) -> int:
    from .pipeline import run_fit

    cfg = load_config(args.config, _overrides(args))
    record = run_fit(cfg, verbose=not args.quiet)
    out = Path(cfg.trainer.artifacts_dir)
    print(f"artifacts: {out}")
    if record.status != "complete":
        print(f"run failed: {record.error}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"best {record.monitor} {record.best_value:.6g} at epoch {record.best_epoch}")
    for k, v in sorted(record.test_metrics.items()):
        print(f"{k} {v:.6g}")
    return EXIT_OK


def cmd_test(args) -> int:
    from .pipeline import run_test

    cfg = load_config(args.config, _overrides(args))
    report = run_test(cfg, args.ckpt, split=args.split)
    print(json.dumps(report.to_dict(f"{args.split}_"), indent=2))
    return EXIT_OK


def cmd_predict(args) -> int:
    from .pipeline import run_predict

    cfg = load_config(args.config, _overrides(args))
    paths = run_predict(cfg, args.ckpt, out_dir=args.out, split=args.split)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_list(args) -> int:
    from .registry import REGISTRIES, list_components

    for kind in [args.kind] if args.kind else list(REGISTRIES):
        names = list_components(kind)
        print(f"{kind}:")
        for n in names:
            print(f"  {n}")
    return EXIT_OK


def cmd_iterate_run(args) -> int:
    from .iterate.report import emit_report
    from .iterate.study import load_benchmark, run_study

    bench = load_benchmark(args.benchmark)
    tasks = [args.task] if args.task else [t.name for t in bench.tasks]
    for name in tasks:
        state = run_study(bench, name, resume=args.resume, log=print)
        best = state.best()
        print(f"task {name}: best trial {best.trial_id} objective {best.value:.6g} params {best.params}")
        emit_report(state, state.path.parent / "report")
    return EXIT_OK


def cmd_iterate_rerun(args) -> int:
    from .iterate.study import load_study, rerun_best

    state = load_study(args.study)
    _, summary = rerun_best(state, args.seeds)
    print(summary.format())
    return EXIT_OK


def cmd_iterate_report(args) -> int:
    from .iterate.report import emit_report
    from .iterate.study import load_study

    state = load_study(args.study)
    paths = emit_report(state, args.out, metric=args.metric)
    for p in paths.values():
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rasterforge", description="Config-driven raster model training and HPO.")
    parser.add_argument("--json-errors", action="store_true", help="print errors as JSON on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_parser(name, help, ckpt=False):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", required=True, help="run config YAML")
        p.add_argument("--seed", type=int, help="override trainer.seed")
        if ckpt:
            p.add_argument("--ckpt", required=True, help="checkpoint path")
        p.add_argument("--json-errors", action="store_true", default=argparse.SUPPRESS)
        return p

    p = run_parser("fit", "train a model")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_fit)
    p = run_parser("test", "evaluate a checkpoint", ckpt=True)
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_test)
    p = run_parser("predict", "write predictions for a split", ckpt=True)
    p.add_argument("--out", help="output directory")
    p.add_argument("--split", help="split to predict (default: trainer.inference.split)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("list-components", help="list registered components")
    p.add_argument("--kind", choices=["backbone", "neck", "decoder", "head"])
    p.add_argument("--json-errors", action="store_true", default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_list)

    it = sub.add_parser("iterate", help="hyperparameter search")
    it_sub = it.add_subparsers(dest="iterate_command", required=True, parser_class=_Parser)
    p = it_sub.add_parser("run", help="run or resume a benchmark study")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--task", help="only this task (default: all)")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--json-errors", action="store_true", default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_iterate_run)
    p = it_sub.add_parser("rerun-best", help="retrain the best trial with several seeds")
    p.add_argument("--study", required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--json-errors", action="store_true", default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_iterate_rerun)
    p = it_sub.add_parser("report", help="write trials.csv and a scatter plot")
    p.add_argument("--study", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metric", help="y-axis metric (default: objective)")
    p.add_argument("--json-errors", action="store_true", default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_iterate_report)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    json_errors = "--json-errors" in argv
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        return _diagnose(e, EXIT_CONFIG, json_errors)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    try:
        return args.func(args)
    except CONFIG_ERRORS as e:
        return _diagnose(e, EXIT_CONFIG, json_errors)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130
    except Exception as e:
        return _diagnose(e, EXIT_RUNTIME, json_errors)


if __name__ == "__main__":
    sys.exit(main())
