"""Solve every problem file in scripts/specs and re-verify the written output.

Usage: python scripts/solve_examples.py [output_root]
"""
import sys
from pathlib import Path

from rotorbits.cli import main as cli

HERE = Path(__file__).resolve().parent


def main():
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("example_output")
    worst = 0
    for spec in sorted((HERE / "specs").glob("*.json")):
        out = root / spec.stem
        print(f"== {spec.name} -> {out}")
        code = cli(["solve", str(spec), "--out", str(out)])
        if code == 0:
            code = cli(["verify", str(out)])
        print(f"== {spec.name}: exit {code}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
