#!/usr/bin/env python3
"""Run one scenario locally and write results. Usage: python -m scripts.run_local --case pipe_step [--scheme new]."""

import argparse
import logging
import random
import string
import sys
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# Add project root so "gasnet" is importable
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from gasnet.driver import cmd_run
from gasnet.scenario_io import BUILTIN_CASES

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)


def default_run_id(label: str, scheme: str) -> str:
    """Run label + scheme + 6-char random suffix, so repeated runs do not overwrite each other."""
    suffix = "".join(random.choices(string.ascii_lowercase + string.digits, k=6))
    return f"{label}_{scheme}_{suffix}"


def main() -> None:
    parser = argparse.ArgumentParser(description="Run a gas network scenario locally")
    parser.add_argument("--case", choices=BUILTIN_CASES, default=None, help="Built-in case")
    parser.add_argument("--scenario", default=None, help="Path to scenario JSON")
    parser.add_argument("--network", default=None, help="Path to network JSON (used with --scenario)")
    parser.add_argument("--scheme", choices=("new", "mid", "end", "upwind"), default="new")
    parser.add_argument("--run-id", default=None, help="Output folder name under results/")
    args = parser.parse_args()

    if not args.case and not args.scenario:
        logging.error("Give --case or --scenario")
        sys.exit(2)

    label = args.case or Path(args.scenario).stem
    run_id = args.run_id or default_run_id(label, args.scheme)
    out = Path(__file__).resolve().parent.parent / "results" / run_id
    result = cmd_run(case=args.case, scenario=args.scenario, network=args.network, scheme=args.scheme, out=out)
    print(result.summary, end="")
    sys.exit(result.exit_code)


if __name__ == "__main__":
    main()
