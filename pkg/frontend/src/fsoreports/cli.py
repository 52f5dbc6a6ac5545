"""`fsoreport` command line: render one chart from a JSON report spec."""

from __future__ import annotations

import argparse
import json
import sys

from .reporting import ReportSpec, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fsoreport", description=__doc__)
    parser.add_argument("--spec", required=True, help="report spec JSON file")
    args = parser.parse_args(argv)
    try:
        spec = ReportSpec.from_file(args.spec)
    except FileNotFoundError:
        print(f"error: spec file not found: {args.spec}", file=sys.stderr)
        return 1
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        print(f"error: bad spec {args.spec}: {exc}", file=sys.stderr)
        return 1
    try:
        table = render(spec)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {spec.out} and {spec.sidecar_path()} ({len(table)} rows)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
