"""``plot`` entrypoint: render the figures for one experiment's CSV directory."""

from __future__ import annotations

import argparse
import sys

from .figures import FIGURES, MissingInput, render

__all__ = ["main"]

EXIT_OK = 0
EXIT_MISSING_INPUT = 2
EXIT_UNKNOWN_EXPERIMENT = 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plot",
        description="Render figures from corehalo experiment CSVs.",
    )
    parser.add_argument("--experiment", required=True,
                        help=f"one of: {', '.join(sorted(FIGURES))}")
    parser.add_argument("--in", dest="in_dir", required=True,
                        help="directory containing the experiment CSVs")
    parser.add_argument("--out", dest="out_dir", required=True,
                        help="directory for the rendered images")
    args = parser.parse_args(argv)

    if args.experiment not in FIGURES:
        print(f"unknown experiment {args.experiment!r}; choose from "
              f"{', '.join(sorted(FIGURES))}", file=sys.stderr)
        return EXIT_UNKNOWN_EXPERIMENT
    try:
        written = render(args.experiment, args.in_dir, args.out_dir)
    except MissingInput as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MISSING_INPUT
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
