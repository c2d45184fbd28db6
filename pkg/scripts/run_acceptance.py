"""Run the acceptance suite and print one PASS/FAIL line per criterion.

    python scripts/run_acceptance.py            # all twelve
    python scripts/run_acceptance.py -k "01 or 06"
"""

import argparse
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("-k", default=None, help="pytest -k expression selecting criteria")
    args = parser.parse_args()
    argv = [str(ROOT / "tests" / "test_acceptance.py"), "-q", "-p", "no:cacheprovider"]
    if args.k:
        argv += ["-k", args.k]
    code = pytest.main(argv)
    results = ROOT / "acceptance_results.txt"
    if results.exists():
        print(results.read_text(), end="")
    return int(code)


if __name__ == "__main__":
    sys.exit(main())
