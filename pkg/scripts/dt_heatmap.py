"""Energy error over (dt, D) for a log-spaced timestep grid, with pi/||H|| marked.

Prints the dt that minimizes the error at the largest D next to pi/||H||.
"""
import argparse
import csv
import dataclasses
from pathlib import Path

import numpy as np

from kqd.experiment import load_preset, run


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--preset", default="fig3-k5")
    p.add_argument("--dt-min", type=float, default=0.02)
    p.add_argument("--dt-max", type=float, default=0.5)
    p.add_argument("--points", type=int, default=15)
    p.add_argument("--threads", type=int, default=4)
    p.add_argument("--out", default="runs/heatmap")
    args = p.parse_args(argv)

    sweep = [float(x) for x in np.geomspace(args.dt_min, args.dt_max, args.points)]
    cfg = dataclasses.replace(load_preset(args.preset), dt_sweep=sweep)
    manifest = run(cfg, args.out, args.threads)

    lines = [l for l in (Path(args.out) / "heatmap.csv").read_text().splitlines() if not l.startswith("#")]
    rows = [r for r in csv.DictReader(lines) if int(r["D"]) == cfg.D]
    errs = np.abs([float(r["delta_E"]) for r in rows])
    best = float(rows[int(np.nanargmin(errs))]["dt"])
    print(f"heatmap written to {args.out}/heatmap.csv")
    print(f"best dt at D={cfg.D}: {best:.4f}   pi/||H||: {manifest['pi_over_norm']:.4f}")


if __name__ == "__main__":
    main()
