"""Noisy k=1 Krylov run: raw, TREX-only, and TREX + noise-extrapolated energies against the noiseless curve."""
import argparse
import dataclasses

from kqd.experiment import estimate, load_preset
import numpy as np

from kqd.solver import IllConditionedError, auto_regularize, bootstrap


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--preset", default="k1-noisy-8")
    p.add_argument("--twirls", type=int, default=None)
    p.add_argument("--shots", type=int, default=None)
    p.add_argument("--bootstrap", type=int, default=50)
    p.add_argument("--seed", type=int, default=None)
    args = p.parse_args(argv)

    cfg = load_preset(args.preset)
    cfg = dataclasses.replace(
        cfg,
        twirls=args.twirls or cfg.twirls,
        shots=args.shots or cfg.shots,
        seed=cfg.seed if args.seed is None else args.seed,
    )
    reg = cfg.regularization_config()
    clean, _ = estimate(dataclasses.replace(cfg, mode="exact", bootstrap=0))
    curves = {"noiseless": auto_regularize(clean, reg)[1].energies}

    pair, data = estimate(cfg)
    curves["raw"] = auto_regularize(data.with_options(trex=False, mitigate=False).pair(), reg)[1].energies
    curves["trex"] = auto_regularize(data.with_options(trex=True, mitigate=False).pair(), reg)[1].energies
    curves["trex+pea"] = auto_regularize(pair, reg)[1].energies
    try:
        boot = bootstrap(data, args.bootstrap, reg, seed=cfg.seed)
        std = boot.std
    except IllConditionedError as exc:
        boot, std = None, np.full(cfg.D, np.nan)
        print(f"bootstrap failed: {exc}")

    print("D " + " ".join(f"{k:>10}" for k in curves) + "   bootstrap_std")
    for d in range(cfg.D):
        print(f"{d + 1:<2}" + " ".join(f"{c[d]:10.4f}" for c in curves.values()) + f"   {std[d]:.4f}")
    if boot is not None:
        print(f"accepted {boot.n_accepted}, rejected {boot.n_rejected} "
              f"(energy rule {boot.rejected_energy}, fit rule {boot.rejected_fit})")


if __name__ == "__main__":
    main()
