"""Noiseless energy-vs-dimension curves on the (20+1)-site layout, Toeplitz and Hermitian variants.

Writes a CSV with the Krylov energy error against the exact sector ground energy.
"""
import argparse
import csv
import dataclasses
import sys

from kqd import sector_sim as ss
from kqd.experiment import load_preset
from kqd.krylov import exact_elements, exact_elements_hermitian
from kqd.solver import energy_curve


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--preset", default="fig3-k5")
    p.add_argument("--D", type=int, default=None, help="override the Krylov dimension")
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--eps", type=float, default=1e-10)
    p.add_argument("--out", default=None, help="CSV path (stdout if omitted)")
    args = p.parse_args(argv)

    cfg = load_preset(args.preset)
    cfg = dataclasses.replace(cfg, D=args.D or cfg.D, dt=args.dt if args.dt is not None else cfg.dt)
    problem = cfg.problem()
    evo = cfg.evolution()
    e0 = ss.sector_ground_energy(problem.system, problem.k)
    toeplitz = energy_curve(exact_elements(problem, evo, cfg.D), args.eps).energies
    hermitian = energy_curve(exact_elements_hermitian(problem, evo, cfg.D), args.eps).energies

    out = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["D", "toeplitz", "hermitian", "toeplitz_error", "hermitian_error", "ground_energy"])
    for d in range(cfg.D):
        w.writerow([d + 1, toeplitz[d], hermitian[d], toeplitz[d] - e0, hermitian[d] - e0, e0])
    if args.out:
        out.close()


if __name__ == "__main__":
    main()
