"""Command-line entry point.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path
import sys

import numpy as np

from .circuits import PreparationTarget, build_trotter, synthesize_controlled_prep
from .experiment import ConfigError, compare, estimate, list_presets, load_config, load_preset, run, solve_curve
from .krylov import KrylovPair
from .lattice import EdgeColoredLattice, build_heavy_hex, induced_sublattice
from .noise import ReadoutSignalLost
from .sector_sim import BudgetError, NormDriftError
from .solver import EmptySubspaceError, IllConditionedError, RegularizationConfig, auto_regularize, bootstrap, energy_curve

NUMERICAL_ERRORS = (EmptySubspaceError, IllConditionedError, NormDriftError, ReadoutSignalLost)


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _load_lattice(path: str) -> EdgeColoredLattice:
    return EdgeColoredLattice.from_dict(json.loads(Path(path).read_text()))


def _config(args):
    if getattr(args, "preset", None):
        cfg = load_preset(args.preset)
    elif getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        raise ConfigError("config", "pass --config or --preset")
    return cfg


def cmd_lattice_gen(args):
    _emit(json.dumps(build_heavy_hex(args.rows, args.cols, args.coupling).to_dict(), indent=1), args.out)


def cmd_lattice_subset(args):
    sub = induced_sublattice(_load_lattice(args.input), _ints(args.sites))
    data = sub.lattice.to_dict()
    data["site_map"] = {str(k): v for k, v in sub.site_map.items()}
    if sub.warning:
        data["warning"] = sub.warning
    _emit(json.dumps(data, indent=1), args.out)


def cmd_circuit_synth(args):
    lat = _load_lattice(args.lattice)
    circ = synthesize_controlled_prep(lat, PreparationTarget(args.control, tuple(_ints(args.particles))))
    _emit(json.dumps(circ.to_dict(), indent=1), args.out)


def cmd_circuit_trotter(args):
    circ = build_trotter(_load_lattice(args.lattice), args.dt, args.steps, args.order)
    _emit(json.dumps(circ.to_dict(), indent=1), args.out)


def cmd_krylov_estimate(args):
    cfg = _config(args)
    if args.mode:
        cfg.mode = args.mode
        cfg.validate()
    pair, _ = estimate(cfg)
    _emit(json.dumps(pair.to_dict(), indent=1), args.out)


def _curve_csv(curve, n_sites=None) -> str:
    from .experiment import _csv_text

    header = ["D", "energy", "threshold"] + (["energy_per_site"] if n_sites else []) + ["std", "accepted_resamples"]
    return _csv_text(header, curve.to_csv_rows(n_sites), "n/a")


def cmd_solve(args):
    if args.bootstrap:
        cfg = _config(args)
        cfg.bootstrap = args.bootstrap
        cfg.validate()
        pair, data = estimate(cfg)
        _, curve = auto_regularize(pair, cfg.regularization_config())
        res = bootstrap(data, args.bootstrap, cfg.regularization_config(), seed=cfg.seed)
        curve.std, curve.n_accepted, curve.n_rejected = res.std, res.n_accepted, res.n_rejected
    else:
        if not args.pair:
            raise ConfigError("pair", "pass --pair (or --config with --bootstrap)")
        pair = KrylovPair.from_dict(json.loads(Path(args.pair).read_text()))
        if args.auto_reg:
            _, curve = auto_regularize(pair, RegularizationConfig())
        else:
            curve = energy_curve(pair, args.eps)
    if not np.isfinite(curve.energies).any():
        raise EmptySubspaceError(f"no overlap eigenvalue above threshold {args.eps:g} at any D")
    _emit(_curve_csv(curve), args.out)


def cmd_noise_run(args):
    cfg = _config(args)
    cfg.mode = "noisy"
    if args.gains:
        cfg.gains = _floats(args.gains)
    if args.twirls:
        cfg.twirls = args.twirls
    if args.shots:
        cfg.shots = args.shots
    cfg.validate()
    manifest = run(cfg, args.out, args.threads)
    print(json.dumps({"final_energy": manifest["final_energy"], "out": args.out}))


def cmd_run(args):
    cfg = _config(args)
    manifest = run(cfg, args.out, args.threads)
    print(json.dumps({"final_energy": manifest["final_energy"], "config_hash": manifest["config_hash"], "out": args.out}))


def cmd_compare(args):
    _emit(compare(args.run_a, args.run_b), args.out)


def cmd_presets(args):
    print("\n".join(list_presets()))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kqd", description="Krylov quantum diagonalization laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    lat = sub.add_parser("lattice", help="build or cut lattices").add_subparsers(dest="action", required=True)
    g = lat.add_parser("gen")
    g.add_argument("--rows", type=int, required=True)
    g.add_argument("--cols", type=int, required=True)
    g.add_argument("--coupling", type=float, default=1.0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_lattice_gen)
    s = lat.add_parser("subset")
    s.add_argument("--input", required=True)
    s.add_argument("--sites", required=True, help="comma-separated site list")
    s.add_argument("--out")
    s.set_defaults(func=cmd_lattice_subset)

    circ = sub.add_parser("circuit", help="synthesize circuits").add_subparsers(dest="action", required=True)
    c = circ.add_parser("synth")
    c.add_argument("--lattice", required=True)
    c.add_argument("--control", type=int, required=True)
    c.add_argument("--particles", required=True)
    c.add_argument("--out")
    c.set_defaults(func=cmd_circuit_synth)
    t = circ.add_parser("trotter")
    t.add_argument("--lattice", required=True)
    t.add_argument("--dt", type=float, required=True)
    t.add_argument("--steps", type=int, default=2)
    t.add_argument("--order", type=int, default=2, choices=(1, 2))
    t.add_argument("--out")
    t.set_defaults(func=cmd_circuit_trotter)

    kr = sub.add_parser("krylov", help="estimate Krylov pairs").add_subparsers(dest="action", required=True)
    e = kr.add_parser("estimate")
    e.add_argument("--config")
    e.add_argument("--preset")
    e.add_argument("--mode", choices=("exact", "shots", "noisy"))
    e.add_argument("--out")
    e.set_defaults(func=cmd_krylov_estimate)

    so = sub.add_parser("solve", help="solve a Krylov pair")
    so.add_argument("--pair")
    so.add_argument("--config")
    so.add_argument("--preset")
    so.add_argument("--auto-reg", action="store_true")
    so.add_argument("--eps", type=float, default=1e-8)
    so.add_argument("--bootstrap", type=int, default=0)
    so.add_argument("--out")
    so.set_defaults(func=cmd_solve)

    no = sub.add_parser("noise", help="noisy runs").add_subparsers(dest="action", required=True)
    n = no.add_parser("run")
    n.add_argument("--config")
    n.add_argument("--preset")
    n.add_argument("--gains")
    n.add_argument("--twirls", type=int)
    n.add_argument("--shots", type=int)
    n.add_argument("--threads", type=int, default=1)
    n.add_argument("--out", required=True)
    n.set_defaults(func=cmd_noise_run)

    r = sub.add_parser("run", help="run a full experiment")
    r.add_argument("--config")
    r.add_argument("--preset")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    cp = sub.add_parser("compare", help="compare two run directories")
    cp.add_argument("run_a")
    cp.add_argument("run_b")
    cp.add_argument("--out")
    cp.set_defaults(func=cmd_compare)

    pr = sub.add_parser("presets", help="list bundled presets")
    pr.set_defaults(func=cmd_presets)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, BudgetError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
