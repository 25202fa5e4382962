"""Gap-vs-N study; writes sample_efficiency.csv and its metadata.

Extra arguments are passed through, e.g. ``--config scripts/smoke.json --out results``.
"""
import sys

from ccwopt.harness.cli import main

if __name__ == "__main__":
    sys.exit(main(["sample-efficiency", *sys.argv[1:]]))
