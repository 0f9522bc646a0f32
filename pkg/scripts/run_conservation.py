#!/usr/bin/env python3
"""Run the ideal-limit conservation experiment and summarize the drifts.

Usage: python scripts/run_conservation.py [key=value overrides...]
"""

import csv
import os
import sys

from mhdfem import cli

CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs",
                      "conserve.cfg")


def main(argv):
    args = ["conserve", "--config", CONFIG]
    for item in argv:
        key, _, value = item.partition("=")
        args += [f"--{key}", value]
    rc = cli.main(args)
    if rc != 0:
        return rc
    out = cli.parse_config(CONFIG, dict(a.partition("=")[::2] for a in argv))
    path = os.path.join(out.output_dir, "timeseries.csv")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    e0 = float(rows[0]["energy"])
    drift = max(abs(float(r["energy"]) - e0) for r in rows) / e0
    div_max = max(float(r["div_b_max"]) for r in rows)
    hm = max(abs(float(r["hm"]) - float(rows[0]["hm"])) for r in rows)
    print(f"wrote {path}")
    print(f"relative energy drift   {drift:.3e}")
    print(f"max |div B| per cell    {div_max:.3e}")
    print(f"magnetic helicity drift {hm:.3e}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
