"""Command-line entry point.

Subcommands: make-data (render the synthetic corpus), split (write a phase
plan + validation report), train (run the phase loop with per-phase
evaluation), ablate (one run per ablation cell), report (tables and charts).

Exit codes: 0 success, 2 usage errors, 3 data/validation errors, 1 anything
else.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig, load_run_config
from .errors import DataError, UsageError
from .manifest import load_features, load_manifest
from .report import write_report
from .runner import build_plan, default_run_id, execute_run
from .schemes import save_plan, validate_plan
from .synth import make_dataset


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="run config YAML")
    p.add_argument("--seed", type=int, help="override run_seed")
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="force single-worker deterministic mode")


def _load_config(args, extra_overrides=None) -> RunConfig:
    overrides: dict = dict(extra_overrides or {})
    if args.seed is not None:
        overrides["run_seed"] = args.seed
    if getattr(args, "deterministic", None):
        overrides["deterministic"] = True
    return load_run_config(args.config, overrides)


def cmd_make_data(args) -> int:
    make_dataset(
        args.out,
        num_classes=args.classes,
        train_per_class=args.train_per_class,
        test_per_class=args.test_per_class,
        size=args.size,
        seed=args.seed,
        num_groups=args.groups,
    )
    print(f"wrote dataset to {args.out}")
    return 0


def cmd_split(args) -> int:
    overrides: dict = {"scheme": {}}
    if args.scheme:
        overrides["scheme"]["name"] = args.scheme
    if args.phases:
        overrides["scheme"]["phases"] = args.phases
    if args.features:
        overrides["data"] = {"features": args.features}
    cfg = _load_config(args, overrides)
    if args.seed is not None:
        cfg.scheme.seed = args.seed
    if cfg.scheme.name == "cluster" and not cfg.data.features:
        raise UsageError("cluster scheme requires --features or data.features")
    plan = build_plan(cfg)
    manifest = load_manifest(cfg.data.manifest, cfg.data.grouping)
    report = validate_plan(plan, manifest)
    out = Path(args.out)
    save_plan(plan, out)
    report_path = out.with_suffix(".report.txt")
    report_path.write_text(
        "valid\n" if report.ok else "\n".join(report.violations) + "\n",
        encoding="utf-8",
    )
    print(f"wrote plan to {out} ({'valid' if report.ok else 'INVALID'})")
    return 0 if report.ok else 3


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.run_id:
        cfg.run_id = args.run_id
    rundir = execute_run(cfg, defer_eval=args.defer_eval)
    print(f"run complete: {rundir.path}")
    return 0


ABLATION_OPS = ("crop", "flip", "color_jitter", "grayscale", "blur", "solarize")


def apply_ablation(cfg: RunConfig, key: str) -> RunConfig:
    """One ablation cell: everything else stays equal to the base config."""
    if key.startswith("disable-"):
        op = key[len("disable-"):]
        if op not in ABLATION_OPS:
            raise UsageError(f"unknown augmentation op {op!r}; ops: {ABLATION_OPS}")
        setattr(cfg.augment, op, False)
    elif key == "projector-none":
        cfg.projector.depth = 0
    elif key.startswith("projector-depth-"):
        cfg.projector.depth = int(key.rsplit("-", 1)[1])
    elif key.startswith("projector-width-"):
        cfg.projector.width = int(key.rsplit("-", 1)[1])
    elif key == "no-inherit":
        cfg.projector.inherit = False
    else:
        raise UsageError(f"unknown ablation key {key!r}")
    return cfg


def cmd_ablate(args) -> int:
    for key in args.cells:
        cfg = apply_ablation(_load_config(args), key)
        cfg.run_id = f"{args.run_id or default_run_id(cfg)}_{key}"
        rundir = execute_run(cfg, defer_eval=args.defer_eval)
        print(f"ablation {key}: {rundir.path}")
    return 0


def cmd_report(args) -> int:
    if not args.runs:
        raise UsageError("report needs at least one run directory")
    written = write_report(args.runs, args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cilbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="render the synthetic image corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--train-per-class", type=int, default=100)
    p.add_argument("--test-per-class", type=int, default=40)
    p.add_argument("--size", type=int, default=24)
    p.add_argument("--groups", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("split", help="write a phase plan file")
    _add_config_args(p)
    p.add_argument("--scheme", choices=("random", "semantic", "cluster"))
    p.add_argument("--phases", type=int)
    p.add_argument("--features", help="feature file for the cluster scheme")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="run the phase loop")
    _add_config_args(p)
    p.add_argument("--run-id")
    p.add_argument("--defer-eval", action="store_true",
                   help="evaluate only after the final phase")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="one run per ablation cell")
    _add_config_args(p)
    p.add_argument("--run-id")
    p.add_argument("--defer-eval", action="store_true")
    p.add_argument("cells", nargs="+",
                   help="e.g. disable-grayscale projector-none "
                        "projector-width-512 projector-depth-1 no-inherit")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="emit metric tables and charts")
    p.add_argument("--out", required=True)
    p.add_argument("runs", nargs="*")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
