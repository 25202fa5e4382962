"""Four-strategy wall-time benchmark; writes speed.csv.

Extra arguments are passed through, e.g. ``--config scripts/smoke.json --out results``.
"""
import sys

from ccwopt.harness.cli import main

if __name__ == "__main__":
    sys.exit(main(["bench-speed", *sys.argv[1:]]))
