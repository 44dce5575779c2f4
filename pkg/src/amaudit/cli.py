"""Command-line entry point: ``amaudit {fixture build, eval, report, plot}``.

Set AMAUDIT_LOG_LEVEL (DEBUG, INFO, WARNING, ...) to control verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .errors import AmauditError

log = logging.getLogger("amaudit")


def _cmd_fixture_build(args) -> int:
    from .fixture import build_synthetic_fixture, save_fixture

    fx = build_synthetic_fixture(args.seed)
    out = save_fixture(fx, args.out)
    print(f"fixture seed={fx.seed} test_accuracy={fx.test_accuracy:.4f} -> {out}")
    return 0


def _cmd_eval(args) -> int:
    from .pipeline.config import load_config
    from .pipeline.report import emit_report
    from .pipeline.runner import run_evaluation

    overrides = {"methods": args.methods, "metrics": args.metrics, "seed": args.seed,
                 "sample_limit": args.limit, "output_dir": args.out}
    cfg = load_config(args.config, overrides)
    report = run_evaluation(cfg)
    emit_report(report, cfg.output_dir, ("json", "csv"))
    agg = report.aggregates
    print(f"evaluated {report.provenance['num_evaluated']}/{report.provenance['num_selected']} images "
          f"-> {cfg.output_dir}")
    for name in ("Consistency_Corr", "Consistency_JSD"):
        if name in agg:
            print(f"{name} = {agg[name]}")
    return 0


def _cmd_report(args) -> int:
    from .pipeline.report import emit_report
    from .pipeline.runner import load_report

    report = load_report(args.input)
    for path in emit_report(report, args.out or args.input, args.formats):
        print(path)
    return 0


def _cmd_plot(args) -> int:
    from .pipeline.plots import render_plots
    from .pipeline.runner import load_report

    report = load_report(args.input)
    paths = render_plots(report, args.input, args.out, overlays=not args.no_overlays)
    print(f"wrote {len(paths)} figures")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amaudit", description="Evaluate attribution maps of image classifiers.")
    sub = p.add_subparsers(dest="command", required=True)

    fx = sub.add_parser("fixture", help="synthetic fixture tools")
    fx_sub = fx.add_subparsers(dest="fixture_command", required=True)
    build = fx_sub.add_parser("build", help="generate the dataset and train the fixture model")
    build.add_argument("--seed", type=int, default=0)
    build.add_argument("--out", type=Path, default=Path("fixture"))
    build.set_defaults(func=_cmd_fixture_build)

    ev = sub.add_parser("eval", help="run an evaluation from a TOML config")
    ev.add_argument("--config", type=Path, required=True)
    ev.add_argument("--methods", help="comma-separated method ids")
    ev.add_argument("--metrics", help="comma-separated metric names")
    ev.add_argument("--seed", type=int)
    ev.add_argument("--limit", type=int, help="sample_limit")
    ev.add_argument("--out", type=Path, help="output directory")
    ev.set_defaults(func=_cmd_eval)

    rp = sub.add_parser("report", help="write report files from a finished run")
    rp.add_argument("--input", type=Path, required=True)
    rp.add_argument("--formats", default="json,csv")
    rp.add_argument("--out", type=Path)
    rp.set_defaults(func=_cmd_report)

    pl = sub.add_parser("plot", help="render figures for a finished run")
    pl.add_argument("--input", type=Path, required=True)
    pl.add_argument("--out", type=Path)
    pl.add_argument("--no-overlays", action="store_true")
    pl.set_defaults(func=_cmd_plot)
    return p


def main(argv=None) -> int:
    level = os.environ.get("AMAUDIT_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AmauditError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
