#!/usr/bin/env python3
"""Rewrite the shipped scenario JSON files from their builders."""
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from immunegrid._builtins import BUILDERS        # noqa: E402
from immunegrid.scenario import serialize_scenario, validate_scenario  # noqa: E402


def main() -> int:
    out_dir = pathlib.Path(__file__).resolve().parents[1] / "src/immunegrid/scenarios"
    out_dir.mkdir(exist_ok=True)
    for name, builder in BUILDERS.items():
        scenario = builder()
        report = validate_scenario(scenario)
        for w in report.warnings:
            print(f"  warning ({name}): {w}")
        if not report.ok:
            for e in report.errors:
                print(f"  ERROR ({name}): {e}")
            return 1
        path = out_dir / f"{name}.json"
        path.write_text(serialize_scenario(scenario))
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
