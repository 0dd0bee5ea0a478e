"""Command-line driver for the named experiments.

Exit codes: 0 success, 2 invalid configuration, 3 quality-threshold failure,
4 internal error.  Errors are reported as one JSON record on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import InvalidParams, WavebismutError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_QUALITY = 3
EXIT_INTERNAL = 4


def _set_threads(n):
    """Pin the numeric thread pools; results never depend on this."""
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(n)
    except ImportError:
        pass


def _error_record(code, kind, message):
    json.dump({"error": kind, "message": message, "exit_code": code},
              sys.stderr, sort_keys=True)
    sys.stderr.write("\n")
    return code


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="wavebismut",
        description="Run one named numerical experiment from a JSON config.")
    ap.add_argument("--config", required=True, help="path to the JSON config")
    ap.add_argument("--seed", type=int, default=None,
                    help="override the simulation seed from the config")
    ap.add_argument("--out", default=None,
                    help="override the output directory from the config")
    ap.add_argument("--threads", type=int, default=1,
                    help="numeric thread-pool size (never affects results)")
    args = ap.parse_args(argv)

    if args.threads < 1:
        return _error_record(EXIT_CONFIG, "InvalidParams",
                             "--threads must be >= 1")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        return _error_record(EXIT_CONFIG, "InvalidParams",
                             "--seed must fit in 64 bits")
    _set_threads(args.threads)

    from .config import load_config
    from .experiments import run

    try:
        cfg = load_config(args.config)
    except InvalidParams as e:
        return _error_record(EXIT_CONFIG, "InvalidParams", str(e))

    try:
        ok, summary = run(cfg, outdir=args.out, seed=args.seed)
    except InvalidParams as e:
        return _error_record(EXIT_CONFIG, "InvalidParams", str(e))
    except WavebismutError as e:
        return _error_record(EXIT_QUALITY, type(e).__name__, str(e))
    except Exception as e:  # noqa: BLE001 - the contract is exit code 4
        return _error_record(EXIT_INTERNAL, type(e).__name__, str(e))

    print(json.dumps({"experiment": cfg.experiment, "ok": ok,
                      "summary": summary}, sort_keys=True))
    if not ok:
        return _error_record(EXIT_QUALITY, "QualityThreshold",
                             "declared quality thresholds not met")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
