"""CCW decisions versus OLS and Lasso residual baselines; writes comparison.csv.

Extra arguments are passed through, e.g. ``--config scripts/smoke.json --out results``.
"""
import sys

from ccwopt.harness.cli import main

if __name__ == "__main__":
    sys.exit(main(["compare", *sys.argv[1:]]))
