"""Batch figure rendering: plot <figure-kind> --in <csv...> --out <png|svg>."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import FIGURE_KINDS, FigureError, FigureSpec, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plot", description="Render figures from simulator CSV outputs."
    )
    parser.add_argument("kind", choices=FIGURE_KINDS)
    parser.add_argument(
        "--in", dest="inputs", nargs="+", required=True, help="input CSV file(s)"
    )
    parser.add_argument("--out", required=True, help="output image (.png or .svg)")
    args = parser.parse_args(argv)
    try:
        spec = FigureSpec(
            kind=args.kind,
            inputs=tuple(Path(p) for p in args.inputs),
            output=Path(args.out),
        )
        path = render(spec)
    except FigureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
