"""Command line: ``hacpo train | compare | verify | report``.

Log verbosity comes from ``HACPO_LOG_LEVEL`` (default ``WARNING``).
Exit codes: 0 success, 1 failed verification or no data, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from ..core import ConfigError, HacpoError
from ..trainer import run
from .config import dump_config, load_config
from .matrix import ExperimentMatrix, run_matrix
from .report import NoDataError, build_report
from .verify import SUITES, run_suite

log = logging.getLogger("hacpo")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hacpo", description="Heterogeneous collaborative policy optimization")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one run from a YAML config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", default="runs/train")
    t.add_argument("--workers", type=int, default=1, help="threads for rollout sampling")

    c = sub.add_parser("compare", help="run HACPO and the three baselines over paired seeds")
    c.add_argument("--config", required=True)
    c.add_argument("--seeds", type=int, default=10)
    c.add_argument("--out", default="runs/compare")
    c.add_argument("--jobs", type=int, default=1, help="parallel processes")

    v = sub.add_parser("verify", help="run oracle verification suites")
    v.add_argument("--suite", required=True, choices=SUITES + ("all",))
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--trials", type=int)
    v.add_argument("--adversarial", action="store_true",
                   help="perturb the capability tracker 2x (negative control; expected to fail)")

    r = sub.add_parser("report", help="summarize run directories into CSV tables and figures")
    r.add_argument("--runs", required=True)
    r.add_argument("--out", help="output directory (default: <runs>/report)")
    r.add_argument("--no-figures", action="store_true")
    return p


def _train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    dump_config(cfg, os.path.join(args.out, "config.yaml"))
    reports = run(cfg, args.out, workers=args.workers)
    if reports:
        last = reports[-1]["per_agent"]
        print(" ".join(f"agent{p['agent']}={p['mean_reward']:.4f}" for p in last))
    print(f"wrote {args.out}")
    return 0


def _compare(args) -> int:
    cfg = load_config(args.config)
    matrix = ExperimentMatrix.four_way(cfg, args.seeds, args.out)
    done = run_matrix(matrix, processes=args.jobs)
    print(f"completed {len(done)} runs under {args.out}")
    return 0


def _verify(args) -> int:
    ok = True
    for res in run_suite(args.suite, args.seed, args.adversarial, args.trials):
        print(res.report.to_json())
        if res.gating:
            ok &= res.report.passed
    return 0 if ok else 1


def _report(args) -> int:
    try:
        result = build_report(args.runs, args.out, figures=not args.no_figures)
    except NoDataError as exc:
        print(f"hacpo report: no data: {exc}", file=sys.stderr)
        return 1
    print(result["text"])
    for key, path in result["paths"].items():
        print(f"{key}: {path}")
    return 0


def main(argv=None) -> int:
    level = getattr(logging, os.environ.get("HACPO_LOG_LEVEL", "WARNING").upper(), None)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    handler = {"train": _train, "compare": _compare, "verify": _verify, "report": _report}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"hacpo {args.command}: invalid config: {exc}", file=sys.stderr)
        return 2
    except HacpoError as exc:
        print(f"hacpo {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
