#!/usr/bin/env python3
"""Emit the treatment density curves (status quo and both policies, by w).

Writes one long CSV (arm, w, a, density) ready for external plotting of the
status-quo density against the two cutoff-restricted policy densities.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from bineffect import DgpSpec
from bineffect.simulation import DENSITY_ARMS, density_curve


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--grid", default="0:14:0.005", help="start:stop:step")
    parser.add_argument("--output", default="results/density_curves.csv")
    args = parser.parse_args()

    start, stop, step = (float(v) for v in args.grid.split(":"))
    grid = np.arange(start, stop + step / 2.0, step)
    spec = DgpSpec()

    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("arm,w,a,density\n")
        for arm in DENSITY_ARMS:
            for w in (0, 1):
                for a, dens in density_curve(spec, arm, w, grid):
                    fh.write(f"{arm},{w},{float(a)!r},{float(dens)!r}\n")
    print(f"wrote {out} ({3 * 2 * len(grid)} rows)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
