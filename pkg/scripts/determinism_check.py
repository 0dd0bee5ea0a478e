#!/usr/bin/env python3
"""Verify that CSV outputs are byte-identical across thread-pool sizes."""

import filecmp
import glob
import os
import sys
import tempfile

from wavebismut.cli import main

HERE = os.path.dirname(os.path.abspath(__file__))
CONFIGS = os.path.join(HERE, "..", "configs")


def check(config_name):
    path = os.path.join(CONFIGS, config_name + ".json")
    dirs = {}
    for threads in (1, 8):
        out = tempfile.mkdtemp(prefix=f"det_{config_name}_{threads}_")
        rc = main(["--config", path, "--out", out, "--threads", str(threads)])
        if rc != 0:
            print(f"{config_name}: run with --threads {threads} exited {rc}")
            return False
        dirs[threads] = out
    ok = True
    for csv in sorted(glob.glob(os.path.join(dirs[1], "*.csv"))):
        other = os.path.join(dirs[8], os.path.basename(csv))
        same = filecmp.cmp(csv, other, shallow=False)
        print(f"{config_name}/{os.path.basename(csv)}: "
              f"{'identical' if same else 'DIFFER'}")
        ok = ok and same
    return ok


if __name__ == "__main__":
    names = sys.argv[1:] or ["identity_wave", "gradient_linear"]
    sys.exit(0 if all([check(n) for n in names]) else 1)
