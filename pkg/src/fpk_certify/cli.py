"""Command line: ``fpk-certify {bounds,simulate,verify,report} --spec FILE``.

Exit codes: 0 pass, 1 verification or certification failed, 2 bad usage or
problem file, 3 numerical failure.
"""

import argparse
import logging
import os
import sys
import warnings

from .errors import FPKError
from .pipeline import MODES, run_pipeline
from .specfile import load_spec

log = logging.getLogger("fpk_certify")


def build_parser():
    p = argparse.ArgumentParser(prog="fpk-certify", description="Moment and density bounds for FPK equations, with numerical checks.")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--spec", required=True, help="problem file (TOML)")
    p.add_argument("--out", help="output directory (default: output.dir from the problem file)")
    p.add_argument("--threads", type=int, default=1, help="recorded only; every pipeline runs single-threaded")
    p.add_argument("--seed", type=int, default=None, help="reserved; pipelines are deterministic")
    p.add_argument("--slack", type=float, default=None, help="verify: allowed ratio excess over the envelope")
    return p


def _configure_logging():
    level = os.environ.get("FPK_CERTIFY_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)


def main(argv=None):
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    if args.slack is not None and args.mode != "verify":
        print("--slack only applies to verify", file=sys.stderr)
        return 2
    if args.threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return 2
    try:
        spec = load_spec(args.spec)
    except OSError as exc:
        print(f"cannot read problem file: {exc}", file=sys.stderr)
        return 2
    except FPKError as exc:
        _report_error(exc)
        return exc.exit_code
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            result = run_pipeline(
                spec, args.mode, args.out, args.slack, extra_metadata={"threads": args.threads, "seed": args.seed}
            )
    except FPKError as exc:
        _report_error(exc)
        return exc.exit_code
    except (ArithmeticError, ValueError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    print(f"{args.mode}: {'pass' if result.passed else 'FAIL'} -> {result.out_dir}")
    return result.exit_code


def _report_error(exc):
    violations = getattr(exc, "violations", None)
    if violations:
        print("problem file rejected:", file=sys.stderr)
        for v in violations:
            print(f"  - {v}", file=sys.stderr)
    else:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
