"""State-vector simulation in fixed-Hamming-weight sectors, plus a small dense backend.

Sector basis states are the weight-``k`` bitmasks in increasing integer order,
which coincides with colexicographic order of their occupied-site sets, so
``rank`` is the standard combinadic sum ``sum_i C(p_i, i + 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from math import comb

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .lattice import EdgeColoredLattice, flat_terms
from .pauli import PauliTerm, apply_to_indices, popcount

DEFAULT_DENSE_CAP = 16
DEFAULT_SECTOR_BUDGET = 5_000_000
NORM_TOLERANCE = 1e-8


class NormDriftError(RuntimeError):
    """A supposedly unitary update changed the state norm."""


class BudgetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SectorBasis:
    n_sites: int
    k: int

    def __post_init__(self):
        if not 0 <= self.k <= self.n_sites:
            raise ValueError(f"k={self.k} outside [0, {self.n_sites}]")
        if self.n_sites > 62:
            raise ValueError("at most 62 sites supported by int64 bitmasks")

    @property
    def dim(self) -> int:
        return comb(self.n_sites, self.k)

    @cached_property
    def _binom(self) -> np.ndarray:
        n = self.n_sites
        table = np.zeros((n + 1, self.k + 2), dtype=np.int64)
        for a in range(n + 1):
            for b in range(self.k + 2):
                table[a, b] = comb(a, b)
        return table

    @cached_property
    def states(self) -> np.ndarray:
        """All weight-k bitmasks, ascending (colex order)."""
        masks = np.fromiter(
            (sum(1 << p for p in c) for c in combinations(range(self.n_sites), self.k)),
            dtype=np.int64,
            count=self.dim,
        )
        masks.sort()
        return masks

    def rank(self, mask: int) -> int:
        mask = int(mask)
        if bin(mask).count("1") != self.k or mask >> self.n_sites:
            raise ValueError(f"mask {mask:#b} not in sector k={self.k}")
        r, i = 0, 0
        for p in range(self.n_sites):
            if mask >> p & 1:
                i += 1
                r += comb(p, i)
        return r

    def unrank(self, index: int) -> int:
        if not 0 <= index < self.dim:
            raise IndexError(index)
        mask = 0
        for i in range(self.k, 0, -1):
            p = i - 1
            while comb(p + 1, i) <= index:
                p += 1
            index -= comb(p, i)
            mask |= 1 << p
        return mask

    def rank_many(self, masks: np.ndarray) -> np.ndarray:
        """Vectorised rank; callers guarantee every mask has weight ``k``."""
        masks = np.asarray(masks, dtype=np.int64)
        ranks = np.zeros(masks.shape, dtype=np.int64)
        count = np.zeros(masks.shape, dtype=np.int64)
        binom = self._binom
        for p in range(self.n_sites):
            bit = (masks >> p) & 1
            count += bit
            ranks += bit * binom[p, np.minimum(count, self.k)]
        return ranks

    @cached_property
    def _edge_pairs(self) -> dict:
        return {}

    def edge_pairs(self, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Index pairs ``(a, b)``: state ``a`` has bit i set, j clear; ``b`` is it swapped."""
        key = (i, j) if i < j else (j, i)
        cache = self._edge_pairs
        if key not in cache:
            s = self.states
            sel = np.nonzero(((s >> key[0]) & 1) != ((s >> key[1]) & 1))[0]
            # keep one representative per swapped pair
            sel = sel[((s[sel] >> key[0]) & 1) == 1]
            partner = self.rank_many(s[sel] ^ ((1 << key[0]) | (1 << key[1])))
            cache[key] = (sel.astype(np.int64), partner)
        return cache[key]


def _check_norm(amps: np.ndarray, what: str):
    drift = abs(np.linalg.norm(amps) - 1.0)
    if drift > NORM_TOLERANCE:
        raise NormDriftError(f"{what}: norm drift {drift:.3e}")


@dataclass
class SectorState:
    basis: SectorBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (self.basis.dim,):
            raise ValueError("amplitude vector has wrong length")

    @classmethod
    def basis_state(cls, basis: SectorBasis, mask: int) -> "SectorState":
        amps = np.zeros(basis.dim, dtype=complex)
        amps[basis.rank(mask)] = 1.0
        return cls(basis, amps)

    @classmethod
    def from_sites(cls, n_sites: int, occupied) -> "SectorState":
        occupied = sorted(set(occupied))
        basis = SectorBasis(n_sites, len(occupied))
        return cls.basis_state(basis, sum(1 << p for p in occupied))

    def copy(self) -> "SectorState":
        return SectorState(self.basis, self.amplitudes.copy())

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def to_dense(self) -> "DenseState":
        amps = np.zeros(2 ** self.basis.n_sites, dtype=complex)
        amps[self.basis.states] = self.amplitudes
        return DenseState(self.basis.n_sites, amps)


@dataclass
class DenseState:
    n_qubits: int
    amplitudes: np.ndarray
    cap: int = field(default=DEFAULT_DENSE_CAP, repr=False)

    def __post_init__(self):
        if self.n_qubits > self.cap:
            raise BudgetError(f"{self.n_qubits} qubits exceed dense cap {self.cap}")
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (2 ** self.n_qubits,):
            raise ValueError("amplitude vector has wrong length")

    @classmethod
    def zeros(cls, n_qubits: int, cap: int = DEFAULT_DENSE_CAP) -> "DenseState":
        if n_qubits > cap:
            raise BudgetError(f"{n_qubits} qubits exceed dense cap {cap}")
        amps = np.zeros(2 ** n_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(n_qubits, amps, cap)

    @classmethod
    def basis_state(cls, n_qubits: int, mask: int, cap: int = DEFAULT_DENSE_CAP) -> "DenseState":
        st = cls.zeros(n_qubits, cap)
        st.amplitudes[0] = 0
        st.amplitudes[mask] = 1
        return st

    def copy(self) -> "DenseState":
        return DenseState(self.n_qubits, self.amplitudes.copy(), self.cap)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def to_sector(self, k: int, tol: float = 1e-12) -> SectorState:
        basis = SectorBasis(self.n_qubits, k)
        amps = self.amplitudes[basis.states]
        leak = self.norm() ** 2 - np.linalg.norm(amps) ** 2
        if leak > tol:
            raise ValueError(f"state has weight {leak:.3e} outside sector k={k}")
        return SectorState(basis, amps)


# --- sector gates ---------------------------------------------------------------

def heisenberg_edge_unitary(angle: float) -> np.ndarray:
    """exp(-i angle (XX + YY + ZZ)) in the basis |00>, |01>, |10>, |11>."""
    c, s = np.cos(2 * angle), np.sin(2 * angle)
    u = np.zeros((4, 4), dtype=complex)
    u[0, 0] = u[3, 3] = np.exp(-1j * angle)
    u[1, 1] = u[2, 2] = np.exp(1j * angle) * c
    u[1, 2] = u[2, 1] = -1j * np.exp(1j * angle) * s
    return u


def _heisenberg_inplace(basis: SectorBasis, amps: np.ndarray, i: int, j: int, angle: float):
    a_idx, b_idx = basis.edge_pairs(i, j)
    a = amps[a_idx]
    b = amps[b_idx]
    amps *= np.exp(-1j * angle)
    c, s = np.cos(2 * angle), np.sin(2 * angle)
    ph = np.exp(1j * angle)
    amps[a_idx] = ph * (c * a - 1j * s * b)
    amps[b_idx] = ph * (c * b - 1j * s * a)


def apply_heisenberg_edge(state: SectorState, edge, angle: float) -> SectorState:
    """Return exp(-i angle (X_i X_j + Y_i Y_j + Z_i Z_j)) |state>."""
    i, j = int(edge[0]), int(edge[1])
    n = state.basis.n_sites
    if i == j or not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"invalid edge {edge} for {n} sites")
    out = state.copy()
    _heisenberg_inplace(out.basis, out.amplitudes, i, j, angle)
    _check_norm(out.amplitudes, "heisenberg edge")
    return out


# --- dense gates ----------------------------------------------------------------

def _check_dense_sites(n: int, *qubits: int):
    for q in qubits:
        if not 0 <= q < n:
            raise ValueError(f"qubit {q} outside {n}-qubit register")


def apply_unitary_1q(state: DenseState, u: np.ndarray, q: int) -> DenseState:
    _check_dense_sites(state.n_qubits, q)
    n = state.n_qubits
    psi = state.amplitudes.reshape(2 ** (n - 1 - q), 2, 2 ** q)
    out = np.einsum("ab,xby->xay", u, psi).reshape(-1)
    return DenseState(n, out, state.cap)


def apply_unitary_2q(state: DenseState, u: np.ndarray, qa: int, qb: int) -> DenseState:
    """Apply a 4x4 ``u`` written in the basis ``|b_qa b_qb>`` (qa most significant)."""
    _check_dense_sites(state.n_qubits, qa, qb)
    if qa == qb:
        raise ValueError("two-qubit gate needs distinct qubits")
    n = state.n_qubits
    psi = state.amplitudes.reshape([2] * n)
    ax_a, ax_b = n - 1 - qa, n - 1 - qb
    psi = np.moveaxis(psi, (ax_a, ax_b), (0, 1))
    shape = psi.shape
    psi = (u @ psi.reshape(4, -1)).reshape(shape)
    psi = np.moveaxis(psi, (0, 1), (ax_a, ax_b))
    return DenseState(n, psi.reshape(-1), state.cap)


def apply_cx(state: DenseState, control: int, target: int) -> DenseState:
    _check_dense_sites(state.n_qubits, control, target)
    idx = np.arange(state.amplitudes.size)
    src = np.where((idx >> control) & 1, idx ^ (1 << target), idx)
    return DenseState(state.n_qubits, state.amplitudes[src], state.cap)


def apply_pauli(state: DenseState, pauli: PauliTerm) -> DenseState:
    """Apply the Pauli unitary (coefficient ignored apart from its sign)."""
    if pauli.ops:
        _check_dense_sites(state.n_qubits, *pauli.support)
    unit = PauliTerm(1.0 if pauli.coefficient >= 0 else -1.0, pauli.ops)
    idx = np.arange(state.amplitudes.size)
    dest, factor = apply_to_indices(unit, idx)
    out = np.empty_like(state.amplitudes)
    out[dest] = factor * state.amplitudes
    return DenseState(state.n_qubits, out, state.cap)


def apply_dense_heisenberg_edge(state: DenseState, edge, angle: float) -> DenseState:
    return apply_unitary_2q(state, heisenberg_edge_unitary(angle), int(edge[0]), int(edge[1]))


HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


# --- observables ----------------------------------------------------------------

def pauli_matrix_element(bra: SectorState, pauli: PauliTerm, ket: SectorState) -> complex:
    """<bra| P |ket> for sector states (bra and ket may sit in different sectors)."""
    if pauli.ops and max(pauli.support) >= ket.basis.n_sites:
        raise ValueError("observable support outside register")
    dest, factor = apply_to_indices(pauli, ket.basis.states)
    weight_ok = popcount(dest) == bra.basis.k
    if not np.any(weight_ok):
        return 0.0j
    ranks = bra.basis.rank_many(dest[weight_ok])
    return complex(np.vdot(bra.amplitudes[ranks], factor[weight_ok] * ket.amplitudes[weight_ok]))


def expectation(state, obs: PauliTerm) -> float:
    """<state| obs |state> for a ``SectorState`` or ``DenseState`` (coefficient included)."""
    if isinstance(state, SectorState):
        return float(pauli_matrix_element(state, obs, state).real)
    if obs.ops and max(obs.support) >= state.n_qubits:
        raise ValueError("observable support outside register")
    idx = np.arange(state.amplitudes.size)
    dest, factor = apply_to_indices(obs, idx)
    return float(np.vdot(state.amplitudes[dest], factor * state.amplitudes).real)


def inner_product(a, b) -> complex:
    """<a|b>; conjugate-linear in ``a``."""
    if isinstance(a, SectorState):
        if not isinstance(b, SectorState) or a.basis.n_sites != b.basis.n_sites or a.basis.k != b.basis.k:
            raise ValueError("basis mismatch")
    elif a.n_qubits != b.n_qubits:
        raise ValueError("register size mismatch")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


# --- Hamiltonians ----------------------------------------------------------------

def sector_hamiltonian(lat: EdgeColoredLattice, basis: SectorBasis) -> scipy.sparse.csr_matrix:
    """Heisenberg Hamiltonian restricted to the sector as a sparse matrix.

    Uses ``XX + YY + ZZ = 2 SWAP - 1``: diagonal ``+J`` on aligned pairs, ``-J`` on
    anti-aligned pairs, and hopping amplitude ``2J`` between swapped states.
    """
    if basis.n_sites != lat.n_sites:
        raise ValueError("basis and lattice sizes differ")
    s = basis.states
    diag = np.zeros(basis.dim)
    rows, cols, vals = [], [], []
    for (i, j), J in zip(lat.edges, lat.couplings):
        same = ((s >> i) & 1) == ((s >> j) & 1)
        diag += np.where(same, J, -J)
        a_idx, b_idx = basis.edge_pairs(i, j)
        rows += [a_idx, b_idx]
        cols += [b_idx, a_idx]
        vals += [np.full(a_idx.size, 2 * J)] * 2
    rows.append(np.arange(basis.dim))
    cols.append(np.arange(basis.dim))
    vals.append(diag)
    return scipy.sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(basis.dim, basis.dim),
    )


def sector_spectrum_bounds(lat: EdgeColoredLattice, k: int, budget: int = DEFAULT_SECTOR_BUDGET) -> tuple[float, float]:
    basis = _budgeted_basis(lat, k, budget)
    h = sector_hamiltonian(lat, basis)
    if basis.dim <= 400:
        w = np.linalg.eigvalsh(h.toarray())
        return float(w[0]), float(w[-1])
    lo = scipy.sparse.linalg.eigsh(h, k=1, which="SA", return_eigenvectors=False)[0]
    hi = scipy.sparse.linalg.eigsh(h, k=1, which="LA", return_eigenvectors=False)[0]
    return float(lo), float(hi)


def _budgeted_basis(lat: EdgeColoredLattice, k: int, budget: int) -> SectorBasis:
    dim = comb(lat.n_sites, k)
    if dim > budget:
        raise BudgetError(f"sector dimension {dim} exceeds budget {budget}")
    return SectorBasis(lat.n_sites, k)


def sector_ground_energy(lat: EdgeColoredLattice, k: int, budget: int = DEFAULT_SECTOR_BUDGET) -> float:
    """Lowest eigenvalue of the Heisenberg Hamiltonian in the k-particle sector.

    Small sectors are diagonalized densely; larger ones use Lanczos (ARPACK).
    """
    basis = _budgeted_basis(lat, k, budget)
    h = sector_hamiltonian(lat, basis)
    if basis.dim <= 400:
        return float(np.linalg.eigvalsh(h.toarray())[0])
    v0 = np.ones(basis.dim) / np.sqrt(basis.dim)
    return float(scipy.sparse.linalg.eigsh(h, k=1, which="SA", v0=v0, tol=1e-12, return_eigenvectors=False)[0])


def exact_sector_propagator(lat: EdgeColoredLattice, basis: SectorBasis, t: float) -> np.ndarray:
    """Dense exp(-i H t) on the sector (small sectors; oracle use)."""
    if basis.dim > 4000:
        raise BudgetError("dense sector propagator limited to dimension 4000")
    return scipy.linalg.expm(-1j * t * sector_hamiltonian(lat, basis).toarray())

