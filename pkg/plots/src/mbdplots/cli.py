"""mbdplot: render figures from mbdopt CSV/JSON artifacts.

Usage: mbdplot <kind> --in <glob> --out <path> [--grid FILE] [--dpi N]
Kinds: density_1d, density_2d, trajectory_map, learning_curve. The output
format follows the file extension (png/pdf/svg).
"""

from __future__ import annotations

import argparse
import sys

from .figures import FIGURE_KINDS, FigureSpec, PlotDataError, render


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mbdplot", description=__doc__)
    p.add_argument("kind", choices=FIGURE_KINDS)
    p.add_argument("--in", dest="input_glob", required=True,
                   help="input CSV glob (trace.csv / episode.csv / curve.csv)")
    p.add_argument("--out", dest="output_path", required=True,
                   help="output image path (.png/.pdf/.svg)")
    p.add_argument("--grid", dest="grid_path",
                   help="objective_grid.csv or course.json (default: auto-discover)")
    p.add_argument("--dpi", type=int, default=150)
    p.add_argument("--max-panels", type=int, default=6)
    p.add_argument("--cmap", default="viridis")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(kind=args.kind, input_glob=args.input_glob,
                      output_path=args.output_path, grid_path=args.grid_path,
                      dpi=args.dpi, max_panels=args.max_panels, cmap=args.cmap)
    try:
        meta = render(spec)
    except PlotDataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {meta['output']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
