"""Run the acceptance suite and print its PASS/FAIL summary.

Usage: python3 scripts/run_acceptance.py [--fast] [extra pytest args]

--fast skips the full-size MNIST runs (20000-step CNN, 60k/10k kNN and the gap
check that depends on both).
"""
import sys

import pytest


def main():
    args = sys.argv[1:]
    select = []
    if "--fast" in args:
        args.remove("--fast")
        select = ["-k", "not full and not cnn_beats_knn"]
    return pytest.main(["-m", "acceptance", "-s", "-q", "tests/test_acceptance.py", *select, *args])


if __name__ == "__main__":
    sys.exit(main())
