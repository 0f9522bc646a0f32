#!/usr/bin/env python3
"""Run the manufactured-solution refinement study and print the error table.

Usage: python scripts/run_convergence.py [key=value overrides...]
"""

import os
import sys

from mhdfem import cli

CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs",
                      "converge.cfg")


def main(argv):
    args = ["converge", "--config", CONFIG]
    for item in argv:
        key, _, value = item.partition("=")
        args += [f"--{key}", value]
    rc = cli.main(args)
    if rc != 0:
        return rc
    out = cli.parse_config(CONFIG, dict(a.partition("=")[::2] for a in argv))
    path = os.path.join(out.output_dir, "convergence.csv")
    print(f"wrote {path}")
    with open(path) as fh:
        print(fh.read().rstrip())
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
