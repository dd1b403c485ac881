#!/usr/bin/env python3
"""Verify environment, dependencies and bundled network files for the simulator."""

import sys
from pathlib import Path

# Run from repo root
REPO_ROOT = Path(__file__).resolve().parent.parent


def check_import(name: str, pip_name: str | None = None) -> bool:
    """Return True if import succeeds. pip_name is the pip package name (default same as name)."""
    pip_name = pip_name or name
    try:
        __import__(name)
    except ImportError:
        print(f"  MISSING {name}  ->  {sys.executable} -m pip install {pip_name}")
        return False
    return True


def main() -> int:
    print("=== Environment ===")
    print(f"  Python: {sys.executable}")
    print(f"  Version: {sys.version.split()[0]}")
    print()

    print("=== Dependencies ===")
    deps = [
        ("numpy", "numpy"),
        ("scipy", "scipy"),
        ("networkx", "networkx"),
        ("pydantic", "pydantic"),
        ("pydantic_settings", "pydantic-settings"),
        ("tenacity", "tenacity"),
        ("dotenv", "python-dotenv"),
        ("pytest", "pytest"),
    ]
    all_ok = True
    for mod, pip in deps:
        if check_import(mod, pip):
            print(f"  OK {mod}")
        else:
            all_ok = False
    print()

    print("=== Repo paths ===")
    (REPO_ROOT / "results").mkdir(exist_ok=True)
    print("  OK results/")
    for name in ("pipe", "diamond"):
        path = REPO_ROOT / "gasnet" / "networks" / f"{name}.json"
        if path.is_file():
            print(f"  OK gasnet/networks/{name}.json")
        else:
            print(f"  MISSING (required) gasnet/networks/{name}.json")
            all_ok = False
    print()

    if all_ok:
        sys.path.insert(0, str(REPO_ROOT))
        from gasnet.errors import GasnetError
        from gasnet.scenario_io import BUILTIN_CASES, builtin_case

        print("=== Built-in cases ===")
        for case in BUILTIN_CASES:
            try:
                sc = builtin_case(case)
            except GasnetError as exc:
                print(f"  FAIL {case}: {exc}")
                all_ok = False
                continue
            print(f"  OK {case}: {len(sc.network.nodes)} nodes, {len(sc.network.pipes)} pipes")
        print()

    if not all_ok:
        print("Fix missing items above, then re-run.")
        return 1
    print("All required checks passed.")
    return 0


if __name__ == "__main__":
    sys.exit(main())
