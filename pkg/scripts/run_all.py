#!/usr/bin/env python3
"""Run every shipped experiment config and summarise the exit codes."""

import glob
import os
import sys
import time

from wavebismut.cli import main

HERE = os.path.dirname(os.path.abspath(__file__))
CONFIGS = os.path.join(HERE, "..", "configs")


def run_all(out_root="results"):
    failures = []
    for path in sorted(glob.glob(os.path.join(CONFIGS, "*.json"))):
        name = os.path.splitext(os.path.basename(path))[0]
        t0 = time.time()
        rc = main(["--config", path, "--out", os.path.join(out_root, name)])
        print(f"{name}: exit={rc} wall={time.time() - t0:.1f}s")
        if rc != 0:
            failures.append(name)
    return failures


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "results"
    bad = run_all(out)
    if bad:
        print("FAILED:", ", ".join(bad))
        sys.exit(1)
    print("all experiments passed")
