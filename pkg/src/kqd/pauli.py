"""Sparse Pauli strings with real coefficients.

A Pauli string is stored as a sorted tuple of ``(site, letter)`` pairs with
identity implied elsewhere.  Qubit ``q`` corresponds to bit ``q`` of a
computational-basis index (little endian).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
import re

import numpy as np

LETTERS = ("X", "Y", "Z")

_I2 = np.eye(2, dtype=complex)
PAULI_MATRICES = {
    "I": _I2,
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

_LABEL_RE = re.compile(r"([IXYZ])(\d+)")


@dataclass(frozen=True)
class PauliTerm:
    coefficient: float
    ops: tuple[tuple[int, str], ...]

    def __post_init__(self):
        sites = [s for s, _ in self.ops]
        if len(set(sites)) != len(sites):
            raise ValueError(f"repeated site in Pauli string {self.ops}")
        if any(letter not in LETTERS for _, letter in self.ops):
            raise ValueError(f"bad Pauli letter in {self.ops}")
        if any(s < 0 for s in sites):
            raise ValueError("negative site index")
        if np.iscomplexobj(self.coefficient):
            raise TypeError("coefficient must be real")
        object.__setattr__(self, "ops", tuple(sorted(self.ops)))

    @classmethod
    def from_dict(cls, ops: dict[int, str], coefficient: float = 1.0) -> "PauliTerm":
        return cls(float(coefficient), tuple((int(s), l) for s, l in ops.items() if l != "I"))

    @classmethod
    def from_label(cls, label: str, coefficient: float = 1.0) -> "PauliTerm":
        """Parse labels like ``"X0 Z3"`` or ``"X0Z3"``; ``""`` is the identity."""
        body = label.replace(" ", "")
        found = _LABEL_RE.findall(body)
        if "".join(f"{a}{b}" for a, b in found) != body:
            raise ValueError(f"cannot parse Pauli label {label!r}")
        return cls.from_dict({int(s): l for l, s in found}, coefficient)

    @property
    def label(self) -> str:
        return " ".join(f"{l}{s}" for s, l in self.ops)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(s for s, _ in self.ops)

    @property
    def letters(self) -> dict[int, str]:
        return dict(self.ops)

    def letter(self, site: int) -> str:
        return self.letters.get(site, "I")

    @property
    def weight(self) -> int:
        return len(self.ops)

    def masks(self) -> tuple[int, int, int]:
        """Return ``(flip_mask, sign_mask, n_y)``.

        ``P|b> = i**n_y * (-1)**popcount(b & sign_mask) |b ^ flip_mask>``.
        """
        flip = sign = 0
        n_y = 0
        for s, l in self.ops:
            if l in ("X", "Y"):
                flip |= 1 << s
            if l in ("Y", "Z"):
                sign |= 1 << s
            n_y += l == "Y"
        return flip, sign, n_y

    def symplectic(self) -> tuple[int, int]:
        x, z, _ = self.masks()
        return x, z

    def commutes(self, other: "PauliTerm") -> bool:
        x1, z1 = self.symplectic()
        x2, z2 = other.symplectic()
        return bin((x1 & z2) ^ (z1 & x2)).count("1") % 2 == 0

    def scaled(self, factor: float) -> "PauliTerm":
        return PauliTerm(self.coefficient * factor, self.ops)

    def relabel(self, mapping) -> "PauliTerm":
        return PauliTerm(self.coefficient, tuple((int(mapping[s]), l) for s, l in self.ops))

    def restricted(self, sites) -> "PauliTerm":
        keep = set(sites)
        return PauliTerm(self.coefficient, tuple(o for o in self.ops if o[0] in keep))

    def to_dense(self, n_qubits: int) -> np.ndarray:
        """Dense ``2**n x 2**n`` matrix including the coefficient (oracle use only)."""
        if self.ops and max(self.support) >= n_qubits:
            raise ValueError("support exceeds register")
        letters = self.letters
        # kron from the most significant qubit down
        mats = [PAULI_MATRICES[letters.get(q, "I")] for q in reversed(range(n_qubits))]
        return self.coefficient * reduce(np.kron, mats, np.eye(1, dtype=complex))

    def __str__(self) -> str:
        return f"{self.coefficient:+g}*[{self.label or 'I'}]"


def pauli_product(a: PauliTerm, b: PauliTerm) -> tuple[complex, PauliTerm]:
    """Return ``(phase, P)`` with ``a*b = phase * P`` and ``P`` carrying coefficient 1."""
    la, lb = a.letters, b.letters
    phase = complex(a.coefficient * b.coefficient)
    out = {}
    for s in sorted(set(la) | set(lb)):
        p, q = la.get(s, "I"), lb.get(s, "I")
        ph, r = _SINGLE_PRODUCT[p, q]
        phase *= ph
        if r != "I":
            out[s] = r
    return phase, PauliTerm.from_dict(out)


def _single_products():
    table = {}
    for p in "IXYZ":
        for q in "IXYZ":
            m = PAULI_MATRICES[p] @ PAULI_MATRICES[q]
            for r in "IXYZ":
                c = np.trace(PAULI_MATRICES[r].conj().T @ m) / 2
                if abs(c) > 0.5:
                    table[p, q] = (complex(np.round(c)), r)
    return table


_SINGLE_PRODUCT = _single_products()


def _cx_table():
    """Conjugation table CX (P_c ⊗ P_t) CX = sign * (P_c' ⊗ P_t')."""
    cx = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
    table = {}
    for pc in "IXYZ":
        for pt in "IXYZ":
            m = cx @ np.kron(PAULI_MATRICES[pc], PAULI_MATRICES[pt]) @ cx
            for qc in "IXYZ":
                for qt in "IXYZ":
                    ref = np.kron(PAULI_MATRICES[qc], PAULI_MATRICES[qt])
                    c = np.trace(ref.conj().T @ m) / 4
                    if abs(c) > 0.5:
                        table[pc, pt] = (int(np.round(c.real)), qc, qt)
    return table


CX_CONJUGATION = _cx_table()


def conjugate_by_cx(term: PauliTerm, control: int, target: int) -> PauliTerm:
    """``CX P CX`` for a CX with the given control and target (CX is self-inverse)."""
    letters = term.letters
    sign, qc, qt = CX_CONJUGATION[letters.get(control, "I"), letters.get(target, "I")]
    letters[control] = qc
    letters[target] = qt
    return PauliTerm.from_dict(letters, term.coefficient * sign)


def conjugate_by_x(term: PauliTerm, site: int) -> PauliTerm:
    letter = term.letter(site)
    sign = -1.0 if letter in ("Y", "Z") else 1.0
    return term.scaled(sign)


def popcount(a: np.ndarray) -> np.ndarray:
    return np.bitwise_count(a.astype(np.uint64)).astype(np.int64)


def apply_to_indices(term: PauliTerm, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Action of ``term`` on basis states ``|b>``: returns ``(b ^ flip, amplitude factor)``."""
    flip, sign, n_y = term.masks()
    idx = np.asarray(indices, dtype=np.int64)
    parity = popcount(idx & sign) & 1
    factor = term.coefficient * (1j ** n_y) * (1 - 2 * parity)
    return idx ^ flip, factor
