"""``aesthlab`` command line.

Subcommands: ``run`` (train, eval and explain in one go), ``train``, ``eval``,
``explain``, ``report`` and ``compare``. Settings come from flags, then a
``--config`` JSON file, then built-in defaults, in that order of precedence.
On failure a one-line JSON error record goes to stderr and the exit code is 2.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .pipeline import ExperimentConfig

CONFIG_FLAGS = ("data", "schema", "split", "model", "explain", "background", "kernel_sampling",
                "explain_limit", "seed", "out", "format", "run_name")


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--data", help="canonical CSV with attribute columns and 'overall'")
    p.add_argument("--schema", choices=("generic", "aadb", "eva", "para"))
    p.add_argument("--split", help="fraction:F or counts:TRAIN,[VAL,]TEST")
    p.add_argument("--model", choices=pipeline.MODEL_KINDS)
    p.add_argument("--explain", choices=pipeline.EXPLAIN_METHODS)
    p.add_argument("--background", help="kmeans:K, all or sample:N")
    p.add_argument("--kernel-sampling", dest="kernel_sampling", help="enumerate_all or sample:M")
    p.add_argument("--explain-limit", dest="explain_limit", type=int, help="explain only the first N test rows")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="model hyperparameter override (value parsed as JSON); repeatable")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output root (default $AESTHLAB_OUT or ./runs)")
    p.add_argument("--format", choices=("csv", "json", "svg"))
    p.add_argument("--run-name", dest="run_name", help="fixed run directory name instead of a timestamp")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")


def _parse_param(text: str):
    key, sep, raw = text.partition("=")
    if not sep:
        raise pipeline.UnknownKind(f"--param expects KEY=VALUE, got {text!r}")
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise pipeline.MissingInput(f"config file {path} not found")
        cfg = ExperimentConfig.from_dict(json.loads(path.read_text(encoding="utf-8")))
    flags = {k: getattr(args, k) for k in CONFIG_FLAGS if getattr(args, k, None) is not None}
    cfg = replace(cfg, **flags)
    if args.param:
        params = dict(cfg.model_params)
        for key, value in map(_parse_param, args.param):
            kind, dot, name = key.partition(".")
            if dot:  # compare-style "rf.n_trees=50"
                params.setdefault(kind, {})[name] = value
            else:
                params[key] = value
        cfg = replace(cfg, model_params=params)
    return cfg.resolved()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aesthlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in (("run", "train, evaluate and explain in a fresh run directory"),
                        ("train", "fit a model and write model.json plus the split")):
        _config_args(sub.add_parser(name, help=help_))

    for name, help_ in (("eval", "metrics on the test split of a trained run"),
                        ("explain", "attributions and ranking for a trained run")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--run", required=True, help="run directory created by train")

    p = sub.add_parser("report", help="write the series behind one figure")
    p.add_argument("kind", help="summary, dependence:i:j, interactions, correlations, scatter:i or distribution")
    p.add_argument("--run", help="run directory (for summary, dependence, interactions)")
    p.add_argument("--data", help="dataset CSV (for correlations, scatter, distribution)")
    p.add_argument("--schema", default="generic", choices=("generic", "aadb", "eva", "para"))
    p.add_argument("--out", help="output directory (default RUN/reports)")
    p.add_argument("--format", default="csv", choices=("csv", "json", "svg"))
    p.add_argument("--limit", type=int, help="interactions: only the first N test rows")

    p = sub.add_parser("compare", help="train all five model kinds on one split")
    _config_args(p)
    p.add_argument("--jobs", type=int, default=1, help="train models concurrently")
    return parser


def _emit(obj) -> None:
    print(json.dumps({k: str(v) for k, v in obj.items()}, indent=1, sort_keys=True))


def dispatch(args) -> None:
    cmd = args.command
    if cmd in ("run", "train", "compare"):
        cfg = resolve_config(args)
        if args.print_config:
            print(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
            return
        if cmd == "run":
            _emit(pipeline.run_experiment(cfg))
        elif cmd == "compare":
            _emit(pipeline.compare(cfg, n_jobs=args.jobs))
        else:
            cfg.validate()
            run_dir = pipeline._run_dir(cfg)
            paths = {"run_dir": run_dir, **pipeline.stage_train(cfg, run_dir)}
            paths["manifest"] = pipeline.write_manifest(run_dir, cfg)
            _emit(paths)
        return
    if cmd in ("eval", "explain"):
        run_dir = Path(args.run)
        stage = pipeline.stage_eval if cmd == "eval" else pipeline.stage_explain
        paths = stage(run_dir)
        cfg, _ = pipeline._load_run(run_dir)
        paths["manifest"] = pipeline.write_manifest(run_dir, cfg)
        _emit(paths)
        return
    path = pipeline.emit_report(args.kind, run_dir=args.run, data=args.data, out_dir=args.out,
                                fmt=args.format, limit=args.limit, schema=args.schema)
    _emit({"report": path})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        dispatch(args)
    except (ValueError, OSError) as exc:  # AesthlabError subclasses ValueError
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
