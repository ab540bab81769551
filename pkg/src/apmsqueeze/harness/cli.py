"""Command line entry point: ``apmsqueeze run|verify|compare``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from ..compression import CompressorSpec
from ..exceptions import ConfigError
from ..metrics import write_csv
from ..optimizer import DivergenceError
from . import verify
from .config import RunConfig
from .experiment import VARIANTS, compare, run_and_write

log = logging.getLogger("apmsqueeze")

EXIT_CHECK_FAILED = 1
EXIT_BAD_CONFIG = 2
EXIT_DIVERGED = 3


def _load(path, output_dir):
    cfg = RunConfig.load(path)
    if output_dir:
        cfg = cfg.with_changes(output_dir=output_dir)
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args.config, args.output_dir)
    out = cfg.resolved_output_dir()
    try:
        summary = run_and_write(cfg, out)
    except DivergenceError as exc:
        os.makedirs(out, exist_ok=True)
        write_csv(os.path.join(out, "metrics.csv"), exc.records)
        dump = {"error": str(exc), "config": cfg.to_dict(), "steps_completed": len(exc.records)}
        with open(os.path.join(out, "divergence.json"), "w") as fh:
            json.dump(dump, fh, indent=2)
        log.error("%s; partial metrics and diagnostics written to %s", exc, out)
        return EXIT_DIVERGED
    print(json.dumps({k: summary[k] for k in (
        "final_loss", "final_grad_norm_sq", "total_bits", "compression_ratio_vs_float32")}, indent=2))
    log.info("wrote %s", out)
    return 0


def cmd_verify(args) -> int:
    kwargs = {}
    if args.suite == "updating_form":
        if args.n:
            kwargs["ns"] = tuple(args.n)
        if args.dim:
            kwargs["dims"] = tuple(args.dim)
        if args.compressor:
            kwargs["compressors"] = tuple(CompressorSpec(c) for c in args.compressor)
        if args.steps:
            kwargs["steps"] = args.steps
    elif args.suite == "variance_scaling":
        if args.n:
            kwargs["ns"] = tuple(args.n)
        if args.draws:
            kwargs["draws"] = args.draws
    elif args.suite == "identity_equiv" and args.steps:
        kwargs["steps"] = args.steps
    checks = verify.run_suite(args.suite, seed=args.seed, **kwargs)
    for check in checks:
        print(check.line())
    failed = [c for c in checks if not c.passed]
    if failed:
        print(f"{len(failed)} of {len(checks)} checks failed; first failure: {failed[0].name} [{failed[0].config}]")
        return EXIT_CHECK_FAILED
    print(f"all {len(checks)} checks passed")
    return 0


def cmd_compare(args) -> int:
    cfg = _load(args.config, args.output_dir)
    summary = compare(cfg, args.variants)
    print(json.dumps(summary, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apmsqueeze", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configuration, write metrics.csv and summary.json")
    p.add_argument("config")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="run an invariant suite")
    p.add_argument("suite", choices=verify.SUITES)
    p.add_argument("--n", type=int, nargs="+", help="worker counts")
    p.add_argument("--dim", type=int, nargs="+")
    p.add_argument("--compressor", nargs="+")
    p.add_argument("--steps", type=int)
    p.add_argument("--draws", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compare", help="run several variants on identical seeds")
    p.add_argument("config")
    p.add_argument("--variants", nargs="+", required=True, help=f"any of: {', '.join(VARIANTS)}")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG


if __name__ == "__main__":
    sys.exit(main())
