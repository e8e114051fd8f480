"""Experiment configuration, the end-to-end runner, and run comparison."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
import hashlib
import io
import json
from importlib import resources
from pathlib import Path
import platform
import time

import numpy as np
import scipy

from . import __version__
from .krylov import (
    Evolution,
    KrylovPair,
    KrylovProblem,
    MeasurementPlan,
    estimate_shots,
    exact_elements,
    exact_elements_hermitian,
)
from .lattice import EdgeColoredLattice, build_heavy_hex, chain, induced_sublattice
from .noise import PEA_PRESETS, PauliLindbladModel, ReadoutModel, layer_models, noisy_krylov_run
from . import sector_sim as ss
from .solver import RegularizationConfig, auto_regularize, bootstrap, energy_curve

MODES = ("exact", "shots", "noisy")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    seed: int
    lattice: dict
    particles: list[int]
    control: int | None = None
    dt: float = 0.1
    steps: int = 2
    order: int = 2
    evolution_mode: str = "power"
    exact_evolution: bool = False
    structure: str = "toeplitz"
    D: int = 10
    mode: str = "exact"
    shots: int = 500
    twirls: int = 100
    gains: list[float] = field(default_factory=lambda: [1.0])
    noise: dict | None = None
    readout: dict | None = None
    calibration_shots: int = 20000
    mitigate: bool = True
    regularization: dict = field(default_factory=dict)
    auto_reg: bool = True
    eps: float = 1e-8
    bootstrap: int = 0
    dt_sweep: list[float] | None = None
    name: str = "experiment"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        for req in ("seed", "lattice", "particles"):
            if req not in data:
                raise ConfigError(req, "required field missing")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def validate(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed", "integer master seed required")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}")
        if self.structure not in ("toeplitz", "hermitian"):
            raise ConfigError("structure", "must be toeplitz or hermitian")
        if self.D < 1:
            raise ConfigError("D", "must be positive")
        if self.steps < 1:
            raise ConfigError("steps", "must be positive")
        if self.order not in (1, 2):
            raise ConfigError("order", "must be 1 or 2")
        if self.evolution_mode not in ("power", "fixed"):
            raise ConfigError("evolution_mode", "must be power or fixed")
        if not np.isfinite(self.dt):
            raise ConfigError("dt", "must be finite")
        lat = self.build_lattice()
        for p in self.particles:
            if not 0 <= p < lat.n_sites:
                raise ConfigError("particles", f"site {p} not on the lattice")
        if self.control is not None and not 0 <= self.control < lat.n_sites:
            raise ConfigError("control", f"site {self.control} not on the lattice")
        if self.mode != "exact":
            if self.control is None:
                raise ConfigError("control", f"mode {self.mode} needs a control qubit")
            if self.structure != "toeplitz":
                raise ConfigError("structure", "measured pairs are Toeplitz")
            if self.shots < 1:
                raise ConfigError("shots", "must be positive")
        if self.mode == "noisy":
            if self.twirls < 1:
                raise ConfigError("twirls", "must be positive")
            if not self.gains or min(self.gains) < 1:
                raise ConfigError("gains", "gains must be >= 1")
            if self.exact_evolution:
                raise ConfigError("exact_evolution", "noisy runs need Trotter circuits")
        try:
            self.regularization_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError("regularization", str(exc)) from None
        if self.bootstrap < 0:
            raise ConfigError("bootstrap", "must be non-negative")
        if self.bootstrap and self.mode == "exact":
            raise ConfigError("bootstrap", "bootstrap needs shot data (mode shots or noisy)")

    def build_lattice(self) -> EdgeColoredLattice:
        spec = self.lattice
        kind = spec.get("kind")
        if kind == "heavy_hex":
            lat = build_heavy_hex(int(spec["rows"]), int(spec["cols"]))
        elif kind == "chain":
            lat = chain(int(spec["n"]))
        elif kind == "inline":
            lat = EdgeColoredLattice.from_dict(spec["data"])
        elif kind == "file":
            lat = EdgeColoredLattice.from_dict(json.loads(Path(spec["path"]).read_text()))
        else:
            raise ConfigError("lattice", f"unknown lattice kind {kind!r}")
        if spec.get("sites") is not None:
            lat = induced_sublattice(lat, spec["sites"]).lattice
        return lat

    def regularization_config(self) -> RegularizationConfig:
        return RegularizationConfig(**self.regularization)

    def problem(self) -> KrylovProblem:
        try:
            return KrylovProblem(self.build_lattice(), tuple(self.particles), self.control)
        except ValueError as exc:
            raise ConfigError("particles", str(exc)) from None

    def evolution(self, dt: float | None = None) -> Evolution:
        return Evolution(self.dt if dt is None else dt, self.steps, self.order, self.evolution_mode, self.exact_evolution)


def load_preset(name: str) -> ExperimentConfig:
    path = resources.files("kqd") / "presets" / f"{name}.json"
    if not path.is_file():
        raise ConfigError("preset", f"unknown preset {name!r}")
    return ExperimentConfig.from_dict(json.loads(path.read_text()))


def list_presets() -> list[str]:
    return sorted(p.name[:-5] for p in (resources.files("kqd") / "presets").iterdir() if p.name.endswith(".json"))


def load_config(path: str | Path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


# --- running -------------------------------------------------------------------------

def _csv_text(header: list[str], rows: list[list], config_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash: {config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def noise_models(cfg: ExperimentConfig, problem: KrylovProblem) -> dict[str, PauliLindbladModel]:
    spec = cfg.noise or {}
    if "file" in spec:
        data = json.loads(Path(spec["file"]).read_text())
        return {m["layer"]: PauliLindbladModel.from_dict(m) for m in data["models"]}
    if "models" in spec:
        return {m["layer"]: PauliLindbladModel.from_dict(m) for m in spec["models"]}
    return layer_models(problem.layout, float(spec.get("rate1", 0.0)), float(spec.get("rate2", 0.0)))


def readout_model(cfg: ExperimentConfig, n: int) -> ReadoutModel:
    spec = cfg.readout or {}
    return ReadoutModel.uniform(n, float(spec.get("p01", 0.0)), float(spec.get("p10", spec.get("p01", 0.0))))


def estimate(cfg: ExperimentConfig, problem: KrylovProblem | None = None, dt: float | None = None):
    """Krylov pair and (for measured modes) the raw data object supporting resampling."""
    problem = problem or cfg.problem()
    evo = cfg.evolution(dt)
    if cfg.mode == "exact":
        fn = exact_elements if cfg.structure == "toeplitz" else exact_elements_hermitian
        return fn(problem, evo, cfg.D), None
    plan = MeasurementPlan.build(problem)
    if cfg.mode == "shots":
        data = estimate_shots(plan, evo, cfg.D, cfg.shots, cfg.seed)
        return data.pair(), data
    data = noisy_krylov_run(
        plan, evo, cfg.D, noise_models(cfg, problem), cfg.gains, cfg.twirls, cfg.shots,
        readout_model(cfg, problem.layout.n_sites), cfg.seed, cfg.calibration_shots,
    )
    data.mitigate = cfg.mitigate and len(set(cfg.gains)) > 1
    return data.pair(), data


def solve_curve(cfg: ExperimentConfig, pair: KrylovPair):
    if cfg.auto_reg:
        return auto_regularize(pair, cfg.regularization_config())
    return cfg.eps, energy_curve(pair, cfg.eps)


def spectral_norm(problem: KrylovProblem) -> float:
    """Operator norm of the full Heisenberg Hamiltonian.

    For a bipartite lattice with uniform-sign couplings, both extreme eigenvalues
    belong to spin multiplets that include the half-filling sector, so the
    k = N // 2 sector suffices.
    """
    lo, hi = ss.sector_spectrum_bounds(problem.system, problem.system.n_sites // 2)
    return max(abs(lo), abs(hi))


def run(cfg: ExperimentConfig, out_dir: str | Path, threads: int = 1) -> dict:
    """Execute the pipeline and write pair.json, curve.csv, optional bootstrap/heatmap CSVs, manifest.json."""
    start = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash()
    problem = cfg.problem()
    n_sites = problem.system.n_sites
    written = []

    pair, data = estimate(cfg, problem)
    (out / "pair.json").write_text(json.dumps(pair.to_dict(), sort_keys=True, indent=1))
    written.append("pair.json")
    eps, curve = solve_curve(cfg, pair)

    boot = None
    if cfg.bootstrap:
        boot = bootstrap(data, cfg.bootstrap, cfg.regularization_config(), seed=cfg.seed)
        curve.std, curve.n_accepted, curve.n_rejected = boot.std, boot.n_accepted, boot.n_rejected
    (out / "curve.csv").write_text(
        _csv_text(["D", "energy", "threshold", "energy_per_site", "std", "accepted_resamples"], curve.to_csv_rows(n_sites), h)
    )
    written.append("curve.csv")
    if boot is not None:
        rows = [[n + 1, boot.std[n], boot.n_accepted, boot.n_rejected, boot.rejected_energy, boot.rejected_fit] for n in range(pair.D)]
        (out / "bootstrap.csv").write_text(_csv_text(["D", "std", "accepted", "rejected", "rejected_energy", "rejected_fit"], rows, h))
        written.append("bootstrap.csv")

    extra = {}
    if cfg.dt_sweep:
        e0 = problem.ground_energy()

        def one(dt):
            p, _ = estimate(cfg, problem, dt)
            return energy_curve(p, cfg.eps).energies

        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            curves = list(pool.map(one, cfg.dt_sweep))
        rows = [[dt, n + 1, c[n], c[n] - e0] for dt, c in zip(cfg.dt_sweep, curves) for n in range(cfg.D)]
        (out / "heatmap.csv").write_text(_csv_text(["dt", "D", "energy", "delta_E"], rows, h))
        written.append("heatmap.csv")
        norm = spectral_norm(problem)
        extra = {"ground_energy": e0, "spectral_norm": norm, "pi_over_norm": float(np.pi / norm)}

    manifest = {
        "config": cfg.to_dict(),
        "config_hash": h,
        "seed": cfg.seed,
        "threshold_base": eps,
        "final_energy": float(curve.energies[-1]),
        "final_energy_per_site": float(curve.energies[-1] / n_sites),
        "outputs": written,
        "versions": {"kqd": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()},
        "wall_time_s": time.perf_counter() - start,
        "threads": threads,
        **extra,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1, default=float))
    return manifest


def _read_curve(path: Path) -> dict[int, float]:
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return {int(r["D"]): float(r["energy"]) for r in csv.DictReader(lines)}


def compare(dir_a: str | Path, dir_b: str | Path) -> str:
    """CSV text of per-D energy differences and entrywise pair differences (also scaled by N)."""
    a, b = Path(dir_a), Path(dir_b)
    pa = KrylovPair.from_dict(json.loads((a / "pair.json").read_text()))
    pb = KrylovPair.from_dict(json.loads((b / "pair.json").read_text()))
    if pa.D != pb.D:
        raise ValueError("runs have different Krylov dimensions")
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    n_sites = ExperimentConfig.from_dict(ma["config"]).problem().system.n_sites
    ea, eb = _read_curve(a / "curve.csv"), _read_curve(b / "curve.csv")
    rows = []
    for d in range(1, pa.D + 1):
        dH = np.abs(pa.H[:d, :d] - pb.H[:d, :d]).max()
        dS = np.abs(pa.S[:d, :d] - pb.S[:d, :d]).max()
        rows.append([d, ea[d], eb[d], ea[d] - eb[d], dH, dH / n_sites, dS])
    header = ["D", "energy_a", "energy_b", "energy_diff", "max_abs_dH", "max_abs_dH_per_site", "max_abs_dS"]
    return _csv_text(header, rows, f"{ma['config_hash']}:{mb['config_hash']}")
