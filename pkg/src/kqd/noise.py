"""Pauli-Lindblad noise, twirling, noisy trajectories, TREX and noise extrapolation."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from itertools import product
import warnings

import numpy as np
from scipy.optimize import curve_fit

from . import sector_sim as ss
from .circuits import Layer, LayeredCircuit, run_dense, synthesize_controlled_prep
from .krylov import Evolution, KrylovPair, MeasurementPlan, pair_from_items
from .lattice import EdgeColoredLattice
from .pauli import PAULI_MATRICES, PauliTerm, pauli_product

DEFAULT_GENERATOR_CAP = 4096
TREX_FLOOR = 0.05

PEA_PRESETS = {
    "pea-300": {"twirls": 300, "shots": 500, "gains": (1.0, 1.5, 3.0)},
    "pea-100": {"twirls": 100, "shots": 500, "gains": (1.0, 1.3, 1.6)},
}


class ReadoutSignalLost(RuntimeError):
    pass


# --- Pauli-Lindblad models -------------------------------------------------------

@dataclass(frozen=True)
class PauliLindbladModel:
    """L(rho) = sum_k rate_k (P_k rho P_k - rho), attached to one layer id."""

    layer_id: str
    generators: tuple[tuple[PauliTerm, float], ...]
    cap: int = DEFAULT_GENERATOR_CAP

    def __post_init__(self):
        gens = tuple((PauliTerm(1.0, p.ops), float(r)) for p, r in self.generators)
        if any(r < 0 for _, r in gens):
            raise ValueError("rates must be non-negative")
        if any(p.weight == 0 for p, _ in gens):
            raise ValueError("identity generator")
        if len(gens) > self.cap:
            raise ValueError(f"{len(gens)} generators exceed cap {self.cap}")
        object.__setattr__(self, "generators", gens)

    @property
    def rates(self) -> np.ndarray:
        return np.array([r for _, r in self.generators])

    def flip_probabilities(self, gain: float = 1.0) -> np.ndarray:
        """w_k = (1 - exp(-2 G rate_k)) / 2."""
        return (1 - np.exp(-2 * gain * self.rates)) / 2

    def support(self) -> set[int]:
        return {s for p, _ in self.generators for s in p.support}

    def to_dict(self) -> dict:
        return {"layer": self.layer_id, "generators": [[p.label, r] for p, r in self.generators]}

    @classmethod
    def from_dict(cls, data: dict) -> "PauliLindbladModel":
        return cls(data["layer"], tuple((PauliTerm.from_label(lbl), float(r)) for lbl, r in data["generators"]))


def sample_error(model: PauliLindbladModel, gain: float, rng: np.random.Generator) -> PauliTerm:
    """Product of independently inserted generators (phase dropped)."""
    if gain < 1:
        raise ValueError("gain must be >= 1")
    if not model.generators:
        return PauliTerm(1.0, ())
    hits = rng.random(len(model.generators)) < model.flip_probabilities(gain)
    out = PauliTerm(1.0, ())
    for (p, _), hit in zip(model.generators, hits):
        if hit:
            out = pauli_product(out, p)[1]
    return PauliTerm(1.0, out.ops)


def pauli_fidelity(model: PauliLindbladModel, pauli: PauliTerm, gain: float = 1.0) -> float:
    """prod over anticommuting generators of exp(-2 G rate_k)."""
    lam = sum(r for p, r in model.generators if not p.commutes(pauli))
    return float(np.exp(-2 * gain * lam))


def monte_carlo_fidelity(model: PauliLindbladModel, pauli: PauliTerm, n_samples: int, rng: np.random.Generator, gain: float = 1.0) -> tuple[float, float]:
    """Mean and standard error of the commutation sign of sampled errors with ``pauli``."""
    anti = np.array([not p.commutes(pauli) for p, _ in model.generators], dtype=bool)
    w = model.flip_probabilities(gain)
    hits = rng.random((n_samples, len(w))) < w
    signs = 1 - 2 * (np.count_nonzero(hits[:, anti], axis=1) % 2)
    return float(signs.mean()), float(signs.std(ddof=1) / np.sqrt(n_samples))


def local_model(layout: EdgeColoredLattice, layer: Layer, rate1: float, rate2: float) -> PauliLindbladModel:
    """Weight-1 generators on every qubit touched by the layer, weight-2 ones on its edges."""
    qubits = sorted({q for g in layer.gates for q in g.qubits})
    gens = [(PauliTerm(1.0, ((q, l),)), rate1) for q in qubits for l in "XYZ"]
    for g in layer.gates:
        i, j = sorted(g.qubits)
        gens += [(PauliTerm(1.0, ((i, a), (j, b))), rate2) for a, b in product("XYZ", repeat=2)]
    return PauliLindbladModel(layer_id(layer), tuple(gens))


def random_model(qubits: list[int], n_generators: int, max_rate: float, rng: np.random.Generator, layer: str = "random") -> PauliLindbladModel:
    gens = []
    for _ in range(n_generators):
        w = int(rng.integers(1, min(2, len(qubits)) + 1))
        sites = rng.choice(qubits, size=w, replace=False)
        gens.append((PauliTerm(1.0, tuple((int(s), str(rng.choice(list("XYZ")))) for s in sites)), float(rng.uniform(0, max_rate))))
    return PauliLindbladModel(layer, tuple(gens))


def layer_id(layer: Layer) -> str:
    return f"{layer.kind}-{layer.color}"


# --- twirling --------------------------------------------------------------------

def _paulis(n: int) -> list[np.ndarray]:
    mats = [PAULI_MATRICES[l] for l in "IXYZ"]
    return [reduce(np.kron, combo) for combo in product(mats, repeat=n)]


def superop_from_kraus(kraus: list[np.ndarray]) -> np.ndarray:
    """Column-stacking superoperator: vec(K rho K^dag) = (conj(K) x K) vec(rho)."""
    return sum(np.kron(K.conj(), K) for K in kraus)


def apply_superop(superop: np.ndarray, rho: np.ndarray) -> np.ndarray:
    d = rho.shape[0]
    return (superop @ rho.reshape(-1, order="F")).reshape(d, d, order="F")


def ptm(superop: np.ndarray) -> np.ndarray:
    """Pauli transfer matrix R_ij = Tr[P_i L(P_j)] / 2^n."""
    d = int(round(np.sqrt(superop.shape[0])))
    n = int(round(np.log2(d)))
    ps = _paulis(n)
    R = np.empty((len(ps), len(ps)))
    for j, Pj in enumerate(ps):
        out = apply_superop(superop, Pj)
        for i, Pi in enumerate(ps):
            R[i, j] = np.trace(Pi @ out).real / d
    return R


def twirl_channel(superop: np.ndarray) -> np.ndarray:
    """Average P^dag L(P rho P^dag) P over the full Pauli group (1 or 2 qubits)."""
    d = int(round(np.sqrt(superop.shape[0])))
    if d not in (2, 4):
        raise ValueError("brute-force twirl supports 1 or 2 qubits only")
    n = d.bit_length() - 1
    acc = np.zeros_like(superop, dtype=complex)
    for P in _paulis(n):
        conj = np.kron(P.conj(), P)
        acc += conj.conj().T @ superop @ conj
    return acc / 4 ** n


def amplitude_damping(gamma: float) -> list[np.ndarray]:
    return [np.array([[1, 0], [0, np.sqrt(1 - gamma)]]), np.array([[0, np.sqrt(gamma)], [0, 0]])]


def depolarizing(p: float, n: int = 1) -> list[np.ndarray]:
    ps = _paulis(n)
    return [np.sqrt(1 - p + p / 4 ** n) * ps[0]] + [np.sqrt(p / 4 ** n) * P for P in ps[1:]]


def random_channel(n: int, rng: np.random.Generator, n_kraus: int = 3) -> list[np.ndarray]:
    """Random CPTP map from a Haar-like isometry."""
    d = 2 ** n
    z = rng.normal(size=(d * n_kraus, d)) + 1j * rng.normal(size=(d * n_kraus, d))
    q, _ = np.linalg.qr(z)
    return [q[r * d:(r + 1) * d, :] for r in range(n_kraus)]


# --- readout ---------------------------------------------------------------------

@dataclass(frozen=True)
class ReadoutModel:
    p01: tuple[float, ...]  # P(read 1 | 0) per qubit
    p10: tuple[float, ...]  # P(read 0 | 1) per qubit

    def __post_init__(self):
        if len(self.p01) != len(self.p10):
            raise ValueError("p01 and p10 lengths differ")
        for p in self.p01 + self.p10:
            if not 0 <= p < 0.5:
                raise ValueError("flip probabilities must lie in [0, 1/2)")

    @classmethod
    def uniform(cls, n: int, p01: float, p10: float | None = None) -> "ReadoutModel":
        return cls((p01,) * n, ((p01 if p10 is None else p10),) * n)

    @property
    def n_qubits(self) -> int:
        return len(self.p01)

    def twirled_factor(self, sites) -> float:
        """Exact TREX factor prod_q (1 - p01_q - p10_q) for a Z-type parity on ``sites``."""
        return float(np.prod([1 - self.p01[q] - self.p10[q] for q in sites]))

    def measure(self, bits: np.ndarray, rng: np.random.Generator, twirl: bool = True) -> np.ndarray:
        """Noisy readout of (shots, n) bits, optionally with random X twirls undone classically."""
        bits = np.asarray(bits, dtype=np.uint8)
        r = rng.integers(0, 2, size=bits.shape, dtype=np.uint8) if twirl else np.zeros_like(bits)
        physical = bits ^ r
        p = np.where(physical == 0, np.asarray(self.p01), np.asarray(self.p10))
        flips = (rng.random(bits.shape) < p).astype(np.uint8)
        return physical ^ flips ^ r

    def to_dict(self) -> dict:
        return {"p01": list(self.p01), "p10": list(self.p10)}


def learn_trex_factors(readout: ReadoutModel, supports: list[tuple[int, ...]], shots: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Measure |0...0> with twirled readout; returns per-support (+1 counts, factor estimate)."""
    zero = np.zeros((shots, readout.n_qubits), dtype=np.uint8)
    bits = readout.measure(zero, rng, twirl=True)
    plus = np.array([np.count_nonzero(bits[:, list(s)].sum(axis=1) % 2 == 0) if s else shots for s in supports])
    return plus, 2 * plus / shots - 1


def trex_mitigate(raw: np.ndarray | float, factor: np.ndarray | float, floor: float = TREX_FLOOR):
    """Divide twirled-readout estimates by the learned factor."""
    factor = np.asarray(factor, dtype=float)
    if np.any(factor < floor):
        raise ReadoutSignalLost(f"readout signal lost: TREX factor {factor.min():.3g} below {floor}")
    return np.asarray(raw) / factor


# --- extrapolation ---------------------------------------------------------------

@dataclass(frozen=True)
class ExtrapolationResult:
    gains: tuple[float, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]
    method: str
    value: float
    value_std: float
    chi2_exp: float
    chi2_lin: float
    std_ratio: float
    exp_value: float
    lin_value: float


def _exp_model(g, a, b):
    return a * np.exp(-b * g)


def extrapolate(gains, means, stds) -> ExtrapolationResult:
    """Zero-noise value by exponential fit, downgraded to linear unless all three checks pass.

    Checks: exponential value within [-1, 1], exponential chi^2 below linear chi^2,
    and relative uncertainty of the exponential value below 0.5.
    """
    g = np.asarray(gains, dtype=float)
    y = np.asarray(means, dtype=float)
    s = np.asarray(stds, dtype=float)
    if np.unique(g).size < 2:
        raise ValueError("need at least two distinct gains")
    weighted = bool(np.all(s > 0) and np.all(np.isfinite(s)))
    w = 1 / s ** 2 if weighted else np.ones_like(y)

    X = np.column_stack([np.ones_like(g), g])
    cov_lin = np.linalg.inv(X.T @ (w[:, None] * X))
    coef = cov_lin @ (X.T @ (w * y))
    chi2_lin = float(np.sum(w * (y - X @ coef) ** 2))
    lin_value = float(coef[0])
    lin_std = float(np.sqrt(cov_lin[0, 0])) if weighted else float(np.sqrt(cov_lin[0, 0] * chi2_lin / max(g.size - 2, 1)))

    exp_value, exp_std, chi2_exp = np.nan, np.inf, np.inf
    if np.all(y != 0) and (np.all(y > 0) or np.all(y < 0)):
        slope, inter = np.polyfit(g, np.log(np.abs(y)), 1)
        p0 = [np.sign(y[0]) * np.exp(inter), max(-slope, 0.0)]
    else:
        p0 = [y[0], 0.0]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            popt, pcov = curve_fit(_exp_model, g, y, p0=p0, sigma=s if weighted else None, absolute_sigma=weighted, maxfev=2000)
        exp_value = float(popt[0])
        exp_std = float(np.sqrt(pcov[0, 0])) if np.isfinite(pcov[0, 0]) else np.inf
        chi2_exp = float(np.sum(w * (y - _exp_model(g, *popt)) ** 2))
    except (RuntimeError, ValueError):
        pass
    ratio = exp_std / abs(exp_value) if np.isfinite(exp_value) and exp_value != 0 else np.inf
    use_exp = np.isfinite(exp_value) and -1 <= exp_value <= 1 and chi2_exp < chi2_lin and ratio < 0.5
    return ExtrapolationResult(
        tuple(g), tuple(y), tuple(s),
        "exponential" if use_exp else "linear",
        exp_value if use_exp else lin_value,
        exp_std if use_exp else lin_std,
        chi2_exp, chi2_lin, float(ratio), exp_value, lin_value,
    )


# --- noisy Krylov estimation -----------------------------------------------------

_BASIS_CHANGE = {
    "X": ss.HADAMARD,
    "Y": ss.HADAMARD @ np.diag([1, -1j]),
    "Z": np.eye(2, dtype=complex),
}


def krylov_circuit(plan: MeasurementPlan, evolution: Evolution, d: int) -> LayeredCircuit:
    """Preparation followed by the evolution for distance d, on layout qubits."""
    problem = plan.problem
    prep = synthesize_controlled_prep(problem.layout, problem.target)
    system = problem.system
    if evolution.exact:
        raise ValueError("noisy runs need a Trotterized evolution")
    reps = 1 if evolution.mode == "fixed" else d
    evo = evolution.circuit(system, d).relabel(problem.to_layout, problem.layout.n_sites)
    layers = prep.layers + evo.layers * reps
    return LayeredCircuit(problem.layout.n_sites, layers, problem.control, prep.split_site)


def _item_masks(plan: MeasurementPlan) -> tuple[list[tuple[int, ...]], np.ndarray]:
    supports = [it.obs.observable.support for it in plan.items]
    signs = np.array([it.obs.observable.coefficient for it in plan.items])
    return supports, signs


@dataclass
class NoisyData:
    """Per-twirl counts of +1 parities for every (gain, distance, twirl, item)."""

    plan: MeasurementPlan
    gains: tuple[float, ...]
    plus: np.ndarray  # (G, D-1, T, n_items)
    shots: int
    cal_plus: np.ndarray  # (n_items,)
    cal_shots: int
    phases: np.ndarray
    dt: float
    signs: np.ndarray
    seed: int | None = None
    trex: bool = True
    mitigate: bool = True

    @property
    def twirls(self) -> int:
        return self.plus.shape[2]

    def trex_factors(self) -> np.ndarray:
        return 2 * self.cal_plus / self.cal_shots - 1

    def gain_statistics(self) -> tuple[np.ndarray, np.ndarray]:
        """Signed item means and standard errors per gain, shape (G, D-1, n_items)."""
        per_twirl = 2 * self.plus / self.shots - 1
        mean = per_twirl.mean(axis=2)
        if self.twirls > 1:
            err = per_twirl.std(axis=2, ddof=1) / np.sqrt(self.twirls)
        else:
            err = np.sqrt(np.clip(1 - mean ** 2, 0, None) / self.shots)
        if self.trex:
            f = self.trex_factors()
            mean = trex_mitigate(mean, f)
            err = err / f
        return mean * self.signs, err

    def item_values(self) -> np.ndarray:
        mean, err = self.gain_statistics()
        if not self.mitigate:
            return mean[0]
        out = np.empty(mean.shape[1:])
        for d in range(mean.shape[1]):
            for n in range(mean.shape[2]):
                out[d, n] = extrapolate(self.gains, mean[:, d, n], err[:, d, n]).value
        return out

    def pair(self) -> KrylovPair:
        prov = {"kind": "noisy", "gains": list(self.gains), "twirls": self.twirls, "shots": self.shots,
                "trex": self.trex, "extrapolated": self.mitigate, "seed": self.seed}
        return pair_from_items(self.plan, self.item_values(), self.phases, self.dt, prov).hermitized()

    def with_options(self, trex: bool | None = None, mitigate: bool | None = None) -> "NoisyData":
        return NoisyData(self.plan, self.gains, self.plus, self.shots, self.cal_plus, self.cal_shots, self.phases, self.dt,
                         self.signs, self.seed, self.trex if trex is None else trex, self.mitigate if mitigate is None else mitigate)

    def resample(self, rng: np.random.Generator) -> "NoisyData":
        """Redraw twirl instances with replacement per (gain, distance) and calibration shots binomially."""
        G, Dm, T, _ = self.plus.shape
        idx = rng.integers(0, T, size=(G, Dm, T))
        plus = np.take_along_axis(self.plus, idx[..., None], axis=2)
        if T == 1:
            plus = rng.binomial(self.shots, self.plus / self.shots)
        cal = rng.binomial(self.cal_shots, self.cal_plus / self.cal_shots)
        out = self.with_options()
        out.plus, out.cal_plus = plus, cal
        return out


def noisy_krylov_run(
    plan: MeasurementPlan,
    evolution: Evolution,
    D: int,
    models: dict[str, PauliLindbladModel],
    gains=(1.0,),
    twirls: int = 100,
    shots: int = 500,
    readout: ReadoutModel | None = None,
    seed: int = 0,
    calibration_shots: int = 20000,
    cap: int = ss.DEFAULT_DENSE_CAP,
) -> NoisyData:
    """Stochastic Pauli-error trajectories of every Hadamard-test circuit.

    For each (gain, distance, basis, twirl) one error pattern is drawn per layer,
    the state is simulated exactly, and ``shots`` readouts are sampled from it.
    """
    problem = plan.problem
    n = problem.layout.n_sites
    if n > cap:
        raise ss.BudgetError(f"{n} qubits exceed dense cap {cap}")
    readout = readout or ReadoutModel.uniform(n, 0.0)
    supports, signs = _item_masks(plan)
    masks = np.zeros((len(supports), n), dtype=np.uint8)
    for r, sup in enumerate(supports):
        masks[r, list(sup)] = 1
    phases = np.array([evolution.vacuum_phase(problem.system, d) for d in range(D)])
    plus = np.zeros((len(gains), D - 1, twirls, len(supports)), dtype=np.int32)
    root = np.random.SeedSequence(seed)
    cal_rng = np.random.default_rng(root.spawn(1)[0])
    cal_plus, _ = learn_trex_factors(readout, supports, calibration_shots, cal_rng)
    task_seeds = iter(root.spawn(len(gains) * (D - 1) * len(plan.bases)))
    all_bits = ((np.arange(2 ** n)[:, None] >> np.arange(n)) & 1).astype(np.uint8)

    for gi, gain in enumerate(gains):
        for d in range(1, D):
            circ = krylov_circuit(plan, evolution, d)
            for b, basis in enumerate(plan.bases):
                rng = np.random.default_rng(next(task_seeds))
                items = plan.basis_items(b)
                for t in range(twirls):
                    errors = [sample_error(models[layer_id(L)], gain, rng) if layer_id(L) in models else None for L in circ.layers]

                    def inject(k, layer, state, errors=errors):
                        e = errors[k]
                        return state if e is None or not e.ops else ss.apply_pauli(state, e)

                    state = run_dense(circ, ss.DenseState.zeros(n, cap), inject)
                    for q, letter in enumerate(basis.letters):
                        if letter != "Z":
                            state = ss.apply_unitary_1q(state, _BASIS_CHANGE[letter], q)
                    probs = np.abs(state.amplitudes) ** 2
                    outcomes = rng.choice(probs.size, size=shots, p=probs / probs.sum())
                    bits = readout.measure(all_bits[outcomes], rng, twirl=True)
                    parity = (bits.astype(np.int32) @ masks[items].T.astype(np.int32)) % 2
                    plus[gi, d - 1, t, items] = np.count_nonzero(parity == 0, axis=0)
    return NoisyData(plan, tuple(float(g) for g in gains), plus, shots, cal_plus, calibration_shots, phases, evolution.dt, signs, seed)


def layer_models(layout: EdgeColoredLattice, rate1: float, rate2: float) -> dict[str, PauliLindbladModel]:
    """Local models for every (gate kind, color) layer id, built on full color classes."""
    from .circuits import Gate

    models = {}
    for kind in ("cx", "heis"):
        for color, edges in layout.color_classes().items():
            layer = Layer(kind, color, tuple(Gate(kind, e) for e in edges))
            models[layer_id(layer)] = local_model(layout, layer, rate1, rate2)
    return models
