"""Krylov matrix pairs (H~, S~) from exact inner products or emulated Hadamard tests."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import sector_sim as ss
from .circuits import (
    ConjugatedObservable,
    LayeredCircuit,
    MeasurementBasis,
    PreparationTarget,
    build_trotter,
    measurement_bases,
    run_sector,
    synthesize_controlled_prep,
    system_terms_on_layout,
    _is_yy,
)
from .lattice import EdgeColoredLattice, Sublattice, flat_terms, induced_sublattice
from .pauli import PauliTerm

EVOLUTION_MODES = ("power", "fixed")


@dataclass
class KrylovPair:
    """Projected Hamiltonian and overlap matrices of a D-dimensional Krylov space."""

    H: np.ndarray
    S: np.ndarray
    structure: str  # "toeplitz" or "hermitian"
    dt: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=complex)
        self.S = np.asarray(self.S, dtype=complex)
        if self.H.shape != self.S.shape or self.H.ndim != 2 or self.H.shape[0] != self.H.shape[1]:
            raise ValueError("H and S must be square matrices of equal shape")
        if self.structure not in ("toeplitz", "hermitian"):
            raise ValueError(f"unknown structure {self.structure!r}")

    @property
    def D(self) -> int:
        return self.H.shape[0]

    @classmethod
    def from_toeplitz(cls, m: Sequence[complex], s: Sequence[complex], dt: float, provenance: dict | None = None) -> "KrylovPair":
        """Fill H_jk = m_{k-j}, S_jk = s_{k-j} above the diagonal, conjugates below."""
        m, s = np.asarray(m, dtype=complex), np.asarray(s, dtype=complex)
        D = m.size
        H = np.empty((D, D), dtype=complex)
        S = np.empty((D, D), dtype=complex)
        for j in range(D):
            for k in range(D):
                d = k - j
                H[j, k] = m[d] if d >= 0 else np.conj(m[-d])
                S[j, k] = s[d] if d >= 0 else np.conj(s[-d])
        np.fill_diagonal(H, m[0].real)
        np.fill_diagonal(S, 1.0)
        return cls(H, S, "toeplitz", dt, provenance or {})

    def hermitized(self) -> "KrylovPair":
        return KrylovPair((self.H + self.H.conj().T) / 2, (self.S + self.S.conj().T) / 2, self.structure, self.dt, dict(self.provenance))

    def leading(self, d: int) -> "KrylovPair":
        return KrylovPair(self.H[:d, :d], self.S[:d, :d], self.structure, self.dt, dict(self.provenance))

    def to_dict(self) -> dict:
        def enc(M):
            return [[float(v.real), float(v.imag)] for v in M.ravel()]

        return {
            "D": self.D,
            "dt": self.dt,
            "structure": self.structure,
            "H": enc(self.H),
            "S": enc(self.S),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KrylovPair":
        D = int(data["D"])

        def dec(rows):
            a = np.array(rows, dtype=float)
            return (a[:, 0] + 1j * a[:, 1]).reshape(D, D)

        return cls(dec(data["H"]), dec(data["S"]), data["structure"], float(data["dt"]), data.get("provenance", {}))


# --- problem description ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KrylovProblem:
    """A system lattice, a basis reference state, and (optionally) the control qubit.

    ``layout`` includes the control; the system is the induced lattice on the
    remaining sites.  Particles are given in layout indices.
    """

    layout: EdgeColoredLattice
    particles: tuple[int, ...]
    control: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "particles", tuple(sorted(int(p) for p in self.particles)))
        if self.control is not None:
            PreparationTarget(self.control, self.particles).validate(self.layout)
        else:
            for p in self.particles:
                if not 0 <= p < self.layout.n_sites:
                    raise ValueError(f"particle site {p} not on the lattice")

    @cached_property
    def _sub(self) -> Sublattice:
        if self.control is None:
            return Sublattice(self.layout, {s: s for s in range(self.layout.n_sites)}, None)
        keep = [s for s in range(self.layout.n_sites) if s != self.control]
        return induced_sublattice(self.layout, keep)

    @property
    def system(self) -> EdgeColoredLattice:
        return self._sub.lattice

    @property
    def to_system(self) -> dict[int, int]:
        return self._sub.site_map

    @cached_property
    def to_layout(self) -> list[int]:
        inv = [0] * self.system.n_sites
        for a, b in self.to_system.items():
            inv[b] = a
        return inv

    @property
    def k(self) -> int:
        return len(self.particles)

    @property
    def system_particles(self) -> tuple[int, ...]:
        return tuple(self.to_system[p] for p in self.particles)

    @property
    def target(self) -> PreparationTarget:
        if self.control is None:
            raise ValueError("problem has no control qubit")
        return PreparationTarget(self.control, self.particles)

    @cached_property
    def basis(self) -> ss.SectorBasis:
        return ss.SectorBasis(self.system.n_sites, self.k)

    def reference_state(self) -> ss.SectorState:
        mask = sum(1 << p for p in self.system_particles)
        return ss.SectorState.basis_state(self.basis, mask)

    def reference_energy(self) -> float:
        """<psi0|H|psi0> for the basis reference state (ZZ bookkeeping only)."""
        occ = set(self.system_particles)
        return float(sum(J * (1 if ((i in occ) == (j in occ)) else -1) for (i, j), J in zip(self.system.edges, self.system.couplings)))

    @cached_property
    def hamiltonian(self):
        return ss.sector_hamiltonian(self.system, self.basis)

    def ground_energy(self) -> float:
        return ss.sector_ground_energy(self.system, self.k)

    @cached_property
    def layout_terms(self) -> list[PauliTerm]:
        return system_terms_on_layout(self.system, self.to_layout)

    def to_dict(self) -> dict:
        return {"layout": self.layout.to_dict(), "particles": list(self.particles), "control": self.control}

    @classmethod
    def from_dict(cls, data: dict) -> "KrylovProblem":
        return cls(EdgeColoredLattice.from_dict(data["layout"]), tuple(data["particles"]), data.get("control"))


@dataclass(frozen=True)
class Evolution:
    """How the Krylov basis states psi_d are produced.

    ``power``: psi_d = W^d psi0 with W the Trotter circuit for one ``dt``.
    ``fixed``: psi_d = W_d psi0 with W_d a fixed-depth Trotter circuit for time d*dt.
    ``exact`` replaces the product formula with the matrix exponential.
    """

    dt: float
    steps: int = 2
    order: int = 2
    mode: str = "power"
    exact: bool = False

    def __post_init__(self):
        if self.mode not in EVOLUTION_MODES:
            raise ValueError(f"mode must be one of {EVOLUTION_MODES}")
        if self.steps < 1:
            raise ValueError("steps must be positive")

    def circuit(self, system: EdgeColoredLattice, d: int) -> LayeredCircuit:
        """Circuit whose action on psi0 gives psi_d (only for ``fixed`` or d <= 1)."""
        if self.mode == "fixed":
            return build_trotter(system, d * self.dt, self.steps, self.order)
        return build_trotter(system, self.dt, self.steps, self.order)

    def vacuum_phase(self, system: EdgeColoredLattice, d: int) -> float:
        if self.exact:
            return -d * self.dt * float(sum(system.couplings))
        if self.mode == "fixed":
            return self.circuit(system, d).vacuum_phase
        return d * self.circuit(system, 1).vacuum_phase

    def states(self, problem: KrylovProblem, D: int) -> list[ss.SectorState]:
        psi0 = problem.reference_state()
        system = problem.system
        if self.exact:
            prop = ss.exact_sector_propagator(system, problem.basis, self.dt)
            out = [psi0]
            for _ in range(1, D):
                out.append(ss.SectorState(problem.basis, prop @ out[-1].amplitudes))
            return out
        if self.mode == "power":
            W = self.circuit(system, 1)
            out = [psi0]
            for _ in range(1, D):
                out.append(run_sector(W, out[-1]))
            return out
        return [psi0] + [run_sector(self.circuit(system, d), psi0) for d in range(1, D)]


def exact_elements(problem: KrylovProblem, evolution: Evolution, D: int) -> KrylovPair:
    """Toeplitz pair from m_d = <psi0|H|psi_d> and s_d = <psi0|psi_d>."""
    if D < 1:
        raise ValueError("D must be positive")
    states = evolution.states(problem, D)
    psi0 = states[0].amplitudes
    h_psi0 = problem.hamiltonian @ psi0
    m = np.array([np.vdot(h_psi0, st.amplitudes) for st in states])
    s = np.array([np.vdot(psi0, st.amplitudes) for st in states])
    m[0] = problem.reference_energy()
    return KrylovPair.from_toeplitz(m, s, evolution.dt, {"kind": "exact", "evolution": _evo_dict(evolution)})


def exact_elements_hermitian(problem: KrylovProblem, evolution: Evolution, D: int) -> KrylovPair:
    """General Hermitian pair H_jk = <psi_j|H|psi_k>, S_jk = <psi_j|psi_k>."""
    if D < 1:
        raise ValueError("D must be positive")
    V = np.column_stack([st.amplitudes for st in evolution.states(problem, D)])
    HV = problem.hamiltonian @ V
    H = V.conj().T @ HV
    S = V.conj().T @ V
    pair = KrylovPair(H, S, "hermitian", evolution.dt, {"kind": "exact", "evolution": _evo_dict(evolution)}).hermitized()
    np.fill_diagonal(pair.S, 1.0)
    pair.H[0, 0] = problem.reference_energy()
    return pair


def _evo_dict(evo: Evolution) -> dict:
    return {"dt": evo.dt, "steps": evo.steps, "order": evo.order, "mode": evo.mode, "exact": evo.exact}


# --- Hadamard-test emulation --------------------------------------------------------

@dataclass(frozen=True)
class PlanItem:
    """One estimated quantity: a signed ancilla-system Pauli measured in ``basis``."""

    basis: int
    obs: ConjugatedObservable
    role: str  # "H" (Hamiltonian term) or "S" (overlap probe)


@dataclass(frozen=True, eq=False)
class MeasurementPlan:
    problem: KrylovProblem
    bases: tuple[MeasurementBasis, ...]
    items: tuple[PlanItem, ...]
    skip_yy: bool

    @classmethod
    def build(cls, problem: KrylovProblem, skip_yy: bool = True) -> "MeasurementPlan":
        bases = tuple(measurement_bases(problem.layout, problem.target, problem.layout_terms, skip_yy))
        items = []
        for b, basis in enumerate(bases):
            items += [PlanItem(b, obs, "H") for obs in basis.covers]
            if basis.overlap_probe is not None:
                items.append(PlanItem(b, basis.overlap_probe, "S"))
        return cls(problem, bases, tuple(items), skip_yy)

    def basis_items(self, b: int) -> list[int]:
        return [n for n, it in enumerate(self.items) if it.basis == b]

    @cached_property
    def _reconstruction(self):
        """Linear maps from item values to Re/Im of m_d (before the phase) and s_d."""
        n = len(self.items)
        h_re, h_im = np.zeros(n), np.zeros(n)
        s_re, s_im = np.zeros(n), np.zeros(n)
        by_key: dict[tuple[str, tuple], list[int]] = {}
        for idx, it in enumerate(self.items):
            if it.role == "H":
                by_key.setdefault((it.obs.control_pauli, it.obs.term.ops), []).append(idx)
        n_re = sum(1 for it in self.items if it.role == "S" and it.obs.control_pauli == "X")
        n_im = sum(1 for it in self.items if it.role == "S" and it.obs.control_pauli == "Y")
        for idx, it in enumerate(self.items):
            if it.role == "S":
                sign = (-1.0) ** it.obs.term.weight
                if it.obs.control_pauli == "X":
                    s_re[idx] = sign / n_re
                else:
                    s_im[idx] = sign / n_im
        for term in self.problem.layout_terms:
            ops = term.ops
            if self.skip_yy and _is_yy(term):
                ops = tuple((s, "X") for s, _ in ops)
            for q, vec in (("X", h_re), ("Y", h_im)):
                found = by_key[(q, ops)]
                for idx in found:
                    vec[idx] += term.coefficient / len(found)
        return h_re, h_im, s_re, s_im

    def reconstruct(self, values: np.ndarray, phase: float) -> tuple[complex, complex]:
        """(m_d, s_d) from item values (signed expectations) and the vacuum phase."""
        h_re, h_im, s_re, s_im = self._reconstruction
        rot = np.exp(1j * phase)
        m = rot * (h_re @ values + 1j * (h_im @ values))
        s = rot * (s_re @ values + 1j * (s_im @ values))
        return complex(m), complex(s)


def _split_observable(problem: KrylovProblem, obs: PauliTerm) -> tuple[str, PauliTerm]:
    ctrl = obs.letter(problem.control)
    rest = tuple((problem.to_system[s], l) for s, l in obs.ops if s != problem.control)
    return ctrl, PauliTerm(obs.coefficient, rest)


_Q = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def hadamard_test_expectations(
    problem: KrylovProblem, chi: ss.SectorState, phase: float, observables: Sequence[ConjugatedObservable]
) -> np.ndarray:
    """Exact <O'> of each measured observable on the state before the second preparation.

    That state is (e^{i phase}|0>_a|0^N> + |1>_a chi)/sqrt2 with chi = U psi0, and
    O' is the Heisenberg image of (Q_a x P) through the open-controlled preparation.
    """
    if phase is None or not np.isfinite(phase):
        raise ValueError("vacuum phase unavailable")
    vac = ss.SectorState(ss.SectorBasis(problem.system.n_sites, 0), np.ones(1))
    out = np.empty(len(observables))
    for n, c in enumerate(observables):
        q, p = _split_observable(problem, c.observable)
        Q = _Q[q]
        v00 = ss.pauli_matrix_element(vac, p, vac)
        v11 = ss.pauli_matrix_element(chi, p, chi)
        v01 = ss.pauli_matrix_element(vac, p, chi)
        val = 0.5 * (Q[0, 0] * v00 + Q[1, 1] * v11) + (np.exp(-1j * phase) * Q[0, 1] * v01).real
        out[n] = float(np.real(val))
    return out


def item_expectations(plan: MeasurementPlan, evolution: Evolution, D: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact item values for d = 1..D-1 (rows) and the vacuum phases per d."""
    problem = plan.problem
    states = evolution.states(problem, D)
    obs = [it.obs for it in plan.items]
    phases = np.array([evolution.vacuum_phase(problem.system, d) for d in range(D)])
    values = np.array([hadamard_test_expectations(problem, states[d], phases[d], obs) for d in range(1, D)])
    return values.reshape(D - 1, len(obs)), phases


def pair_from_items(plan: MeasurementPlan, values: np.ndarray, phases: np.ndarray, dt: float, provenance: dict) -> KrylovPair:
    D = values.shape[0] + 1
    m = np.empty(D, dtype=complex)
    s = np.empty(D, dtype=complex)
    m[0], s[0] = plan.problem.reference_energy(), 1.0
    for d in range(1, D):
        m[d], s[d] = plan.reconstruct(values[d - 1], phases[d])
    return KrylovPair.from_toeplitz(m, s, dt, provenance)


def hadamard_elements(plan: MeasurementPlan, evolution: Evolution, D: int) -> KrylovPair:
    """Toeplitz pair reconstructed from exact Hadamard-test expectations."""
    values, phases = item_expectations(plan, evolution, D)
    return pair_from_items(plan, values, phases, evolution.dt, {"kind": "hadamard", "evolution": _evo_dict(evolution)})


# --- finite shots ----------------------------------------------------------------------

def sample_shots(expectations: np.ndarray, n_shots: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Binomial +-1 outcomes per expectation; returns (empirical means, counts of +1)."""
    e = np.asarray(expectations, dtype=float)
    if n_shots < 1:
        raise ValueError("n_shots must be positive")
    if np.any(np.abs(e) > 1 + 1e-12):
        raise ValueError("expectations must lie in [-1, 1]")
    p = np.clip((1 + e) / 2, 0.0, 1.0)
    counts = rng.binomial(n_shots, p)
    return 2 * counts / n_shots - 1, counts


@dataclass
class ShotData:
    """Raw finite-shot outcomes: counts of +1 per (distance, item)."""

    plan: MeasurementPlan
    counts: np.ndarray  # int, shape (D-1, n_items)
    shots: int
    phases: np.ndarray
    dt: float
    seed: int | None = None

    def means(self) -> np.ndarray:
        return 2 * self.counts / self.shots - 1

    def pair(self) -> KrylovPair:
        prov = {"kind": "shots", "shots": self.shots, "seed": self.seed}
        return pair_from_items(self.plan, self.means(), self.phases, self.dt, prov).hermitized()

    def resample(self, rng: np.random.Generator) -> "ShotData":
        """Redraw every item's shots with replacement (binomial at the observed rate)."""
        p = self.counts / self.shots
        return ShotData(self.plan, rng.binomial(self.shots, p), self.shots, self.phases, self.dt, self.seed)


def estimate_shots(plan: MeasurementPlan, evolution: Evolution, D: int, shots: int, seed: int) -> ShotData:
    values, phases = item_expectations(plan, evolution, D)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    _, counts = sample_shots(values.ravel(), shots, rng)
    return ShotData(plan, counts.reshape(values.shape), shots, phases, evolution.dt, seed)
