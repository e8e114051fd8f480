"""Circuit synthesis: controlled preparation, layered Trotter evolution, measurement bases.

All two-qubit layers follow the lattice edge coloring, so a circuit only ever
uses three distinct layer shapes (one per color).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import ceil
from typing import Callable, Iterable, Sequence

import numpy as np

from .lattice import COLORS, EdgeColoredLattice, hamiltonian_terms
from .pauli import PauliTerm, conjugate_by_cx, conjugate_by_x
from . import sector_sim as ss


@dataclass(frozen=True)
class Gate:
    kind: str  # "cx" (qubits = control, target) or "heis" (qubits = edge, angle)
    qubits: tuple[int, int]
    angle: float = 0.0

    def to_list(self) -> list:
        return [self.kind, list(self.qubits), self.angle]


@dataclass(frozen=True)
class Layer:
    kind: str  # "cx" or "heis"
    color: str
    gates: tuple[Gate, ...]

    def __post_init__(self):
        used = [q for g in self.gates for q in g.qubits]
        if len(used) != len(set(used)):
            raise ValueError(f"overlapping gates in {self.color} layer")


@dataclass(frozen=True)
class LayeredCircuit:
    n_qubits: int
    layers: tuple[Layer, ...]
    control_qubit: int | None = None
    split_site: int | None = None  # qubit that receives the initial Hadamard, if any
    vacuum_phase: float = 0.0
    info: dict = field(default_factory=dict, compare=False)

    @property
    def depth(self) -> int:
        """Number of two-qubit gate layers."""
        return len(self.layers)

    def relabel(self, mapping: Sequence[int] | dict, n_qubits: int) -> "LayeredCircuit":
        def m(q):
            return int(mapping[q])

        layers = tuple(
            Layer(L.kind, L.color, tuple(Gate(g.kind, (m(g.qubits[0]), m(g.qubits[1])), g.angle) for g in L.gates))
            for L in self.layers
        )
        return replace(
            self,
            n_qubits=n_qubits,
            layers=layers,
            control_qubit=None if self.control_qubit is None else m(self.control_qubit),
            split_site=None if self.split_site is None else m(self.split_site),
        )

    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "control_qubit": self.control_qubit,
            "split_site": self.split_site,
            "vacuum_phase": self.vacuum_phase,
            "layers": [{"kind": L.kind, "color": L.color, "gates": [g.to_list() for g in L.gates]} for L in self.layers],
            "info": self.info,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LayeredCircuit":
        layers = tuple(
            Layer(L["kind"], L["color"], tuple(Gate(g[0], (int(g[1][0]), int(g[1][1])), float(g[2])) for g in L["gates"]))
            for L in data["layers"]
        )
        return cls(data["n_qubits"], layers, data.get("control_qubit"), data.get("split_site"), float(data.get("vacuum_phase", 0.0)), data.get("info", {}))


# --- evolution ------------------------------------------------------------------

def trotter_schedule(steps: int, order: int = 2) -> list[tuple[str, float]]:
    """(color, fraction of the step time) sequence with adjacent same-color layers merged."""
    if steps < 1:
        raise ValueError("steps must be positive")
    if order == 2:
        one = [("R", 0.5), ("G", 0.5), ("B", 1.0), ("G", 0.5), ("R", 0.5)]
    elif order == 1:
        one = [("R", 1.0), ("G", 1.0), ("B", 1.0)]
    else:
        raise ValueError("order must be 1 or 2")
    merged: list[tuple[str, float]] = []
    for _ in range(steps):
        for color, frac in one:
            if merged and merged[-1][0] == color:
                merged[-1] = (color, merged[-1][1] + frac)
            else:
                merged.append((color, frac))
    return merged


def build_trotter(lat: EdgeColoredLattice, dt: float, steps: int, order: int = 2) -> LayeredCircuit:
    """Product-formula approximation of exp(-i H dt) with ``steps`` steps.

    Each layer applies exp(-i J t (XX + YY + ZZ)) to every edge of one color.
    """
    if not np.isfinite(dt):
        raise ValueError("dt must be finite")
    tau = dt / steps
    classes = lat.color_classes()
    coupling = lat.coupling
    layers = []
    for color, frac in trotter_schedule(steps, order):
        gates = tuple(Gate("heis", e, coupling[e] * tau * frac) for e in classes[color])
        layers.append(Layer("heis", color, gates))
    circ = LayeredCircuit(lat.n_sites, tuple(layers),
                          info={"dt": dt, "steps": steps, "order": order})
    return replace(circ, vacuum_phase=vacuum_phase(circ))


def vacuum_phase(circ: LayeredCircuit) -> float:
    """Phase phi with circ |0...0> = exp(i phi) |0...0>."""
    phi = 0.0
    for layer in circ.layers:
        for g in layer.gates:
            if g.kind == "heis":
                phi -= g.angle
            elif g.kind != "cx":
                raise ValueError(f"gate {g.kind!r} does not fix the vacuum")
    return phi


def run_sector(circ: LayeredCircuit, state: ss.SectorState, repeat: int = 1) -> ss.SectorState:
    """Apply a Hamming-weight-preserving circuit ``repeat`` times to a sector state."""
    if circ.n_qubits != state.basis.n_sites:
        raise ValueError("circuit and state sizes differ")
    out = state.copy()
    for _ in range(repeat):
        for layer in circ.layers:
            for g in layer.gates:
                if g.kind != "heis":
                    raise ValueError(f"gate {g.kind!r} leaves the sector")
                ss._heisenberg_inplace(out.basis, out.amplitudes, g.qubits[0], g.qubits[1], g.angle)
    ss._check_norm(out.amplitudes, "sector circuit")
    return out


def run_dense(
    circ: LayeredCircuit,
    state: ss.DenseState,
    before_layer: Callable[[int, Layer, ss.DenseState], ss.DenseState] | None = None,
) -> ss.DenseState:
    """Apply ``circ`` to a dense state; ``before_layer`` may inject errors ahead of each layer."""
    if circ.n_qubits != state.n_qubits:
        raise ValueError("circuit and state sizes differ")
    if circ.split_site is not None:
        state = ss.apply_unitary_1q(state, ss.HADAMARD, circ.split_site)
    for n, layer in enumerate(circ.layers):
        if before_layer is not None:
            state = before_layer(n, layer, state)
        for g in layer.gates:
            if g.kind == "cx":
                state = ss.apply_cx(state, *g.qubits)
            elif g.kind == "heis":
                state = ss.apply_dense_heisenberg_edge(state, g.qubits, g.angle)
            else:
                raise ValueError(f"unknown gate {g.kind!r}")
    ss._check_norm(state.amplitudes, "dense circuit")
    return state


# --- controlled preparation -------------------------------------------------------

@dataclass(frozen=True)
class PreparationTarget:
    """Reference state |s> (ones on ``particles``) prepared controlled on ``control``."""

    control: int
    particles: tuple[int, ...]

    def __post_init__(self):
        parts = tuple(sorted(int(p) for p in self.particles))
        if len(set(parts)) != len(parts):
            raise ValueError("repeated particle site")
        if self.control in parts:
            raise ValueError("control qubit cannot host a particle")
        object.__setattr__(self, "particles", parts)

    @property
    def k(self) -> int:
        return len(self.particles)

    @property
    def ones(self) -> tuple[int, ...]:
        """Sites equal to 1 in the |1>_control branch (control included)."""
        return tuple(sorted((self.control,) + self.particles))

    def validate(self, lat: EdgeColoredLattice, allow_empty: bool = False):
        n = lat.n_sites
        for s in self.ones:
            if not 0 <= s < n:
                raise ValueError(f"site {s} not on the lattice")
        if self.k < 1 and not allow_empty:
            raise ValueError("at least one particle required")
        for a in self.particles:
            for b in self.particles:
                if a < b and lat.has_edge(a, b):
                    raise ValueError(f"particles {a} and {b} are adjacent")
        dist = lat.bfs_distances(self.control)
        if any(dist[p] < 0 for p in self.particles):
            raise ValueError("particles not connected to the control")

    def excitation_distance(self, lat: EdgeColoredLattice) -> int:
        """Largest graph distance between two sites that end up as 1 (control included)."""
        ones = self.ones
        return int(max(lat.bfs_distances(a)[list(ones)].max() for a in ones))


def prep_depth_bound(lat: EdgeColoredLattice, target: PreparationTarget) -> int:
    return 3 * (ceil(target.excitation_distance(lat) / 2) + 2)


def _bfs_tree(lat: EdgeColoredLattice, root: int, terminals: Iterable[int]) -> dict[int, int | None]:
    """Parent map of the union of BFS shortest paths from ``root`` to ``terminals``."""
    dist = lat.bfs_distances(root)
    parent_full: dict[int, int | None] = {root: None}
    frontier = [root]
    while frontier:
        nxt = []
        for u in frontier:
            for v in lat.neighbors[u]:
                if v not in parent_full:
                    parent_full[v] = u
                    nxt.append(v)
        frontier = sorted(nxt)
    tree: dict[int, int | None] = {root: None}
    for t in terminals:
        if dist[t] < 0:
            raise ValueError("terminal unreachable")
        x = t
        while x not in tree:
            tree[x] = parent_full[x]
            x = parent_full[x]
    return tree


def _tree_schedule(lat, tree, root, sp, start, max_layers):
    """Copy the 1 from ``root`` down the tree and reset nodes that end at 0.

    Works on color layers cycling from ``start``; returns a list of (color, gates)
    with only effective gates, or None when the layer budget is exhausted.
    """
    children: dict[int, list[int]] = {u: [] for u in tree}
    for v, u in tree.items():
        if u is not None:
            children[u].append(v)
    edge_color = lat.color
    by_color: dict[str, list[tuple[int, int]]] = {c: [] for c in COLORS}
    for v, u in tree.items():
        if u is not None:
            by_color[edge_color[(min(u, v), max(u, v))]].append((u, v))
    cur = {x: 0 for x in tree}
    cur[root] = 1
    active = {root}
    out = []
    t = 0

    def done(x):
        return all(y in active for y in children[x])

    def settled(x):
        return x in active and cur[x] == sp[x] and (sp[x] == 1 or done(x))

    while not (len(active) == len(tree) and all(cur[x] == sp[x] for x in tree)):
        if t >= max_layers:
            return None
        color = COLORS[(start + t) % 3]
        before = dict(cur)
        was_active = set(active)
        gates = []
        for u, v in by_color[color]:
            if v not in was_active:
                if u in was_active and before[u] == 1:
                    gates.append((u, v))
                    cur[v] = 1
                    active.add(v)
                continue
            if sp[v] == 0 and before[v] == 1 and before[u] == 1 and sp[u] == 1 and all(y in was_active for y in children[v]):
                gates.append((u, v))
                cur[v] = 0
            elif (
                sp[u] == 0
                and before[u] == 1
                and before[v] == 1
                and all(y in was_active for y in children[u])
                and (tree[u] is None or settled(tree[u]))
            ):
                gates.append((v, u))
                cur[u] = 0
        out.append((color, gates))
        t += 1
    return out


def _fill_layer(lat, color, gates, bits, pad=True):
    """Complete a CX layer with no-op gates; returns (gates, n_unpadded_edges)."""
    used = {q for g in gates for q in g}
    full = list(gates)
    skipped = 0
    if not pad:
        return full, 0
    for i, j in lat.color_classes()[color]:
        if i in used or j in used:
            continue
        if bits[i] and bits[j]:
            skipped += 1
            continue
        if bits[i] == 0 and bits[j] == 0:
            full.append((i, j))
        elif bits[i] == 0:
            full.append((i, j))
        else:
            full.append((j, i))
    return full, skipped


def synthesize_controlled_prep(lat: EdgeColoredLattice, target: PreparationTarget, pad: bool = True) -> LayeredCircuit:
    """CX-layer circuit mapping (|0> + |1>)/sqrt2 on one qubit to (|0..0> + |s>)/sqrt2.

    ``s`` has ones on the control and on every particle.  The construction reduces
    ``s`` to a bitstring without adjacent ones, grows that from a single root through
    a shortest-path tree using only full color layers, then undoes the reduction.
    Layers whose gates would all be no-ops are dropped.
    """
    target.validate(lat)
    n = lat.n_sites
    s = [0] * n
    for q in target.ones:
        s[q] = 1

    # reduction to a sparse bitstring, one pass through the colors
    cur = list(s)
    reduction = []
    for color in COLORS:
        gates = []
        for i, j in lat.color_classes()[color]:
            if cur[i] and cur[j]:
                keep, drop = (i, j) if (j != target.control and (i == target.control or i < j)) else (j, i)
                gates.append((keep, drop))
                cur[drop] = 0
        reduction.append((color, gates))
    sp = cur
    ones_sp = [q for q in range(n) if sp[q]]

    component = set(np.nonzero(lat.bfs_distances(target.control) >= 0)[0].tolist())
    best = None
    for root in sorted(component):
        tree = _bfs_tree(lat, root, ones_sp)
        sp_tree = {x: sp[x] for x in tree}
        depth_t = 0
        for x in tree:
            d, y = 0, x
            while tree[y] is not None:
                y, d = tree[y], d + 1
            depth_t = max(depth_t, d)
        for start in range(3):
            limit = 3 * (depth_t + 3) + 3
            sched = _tree_schedule(lat, tree, root, sp_tree, start, limit)
            if sched is None:
                continue
            n_eff = sum(1 for _, g in sched if g)
            key = (n_eff, depth_t, root, start)
            if best is None or key < best[0]:
                best = (key, root, sched)
    if best is None:
        raise RuntimeError("controlled-preparation schedule failed")
    _, root, sched = best

    # assemble: tree growth then inverse reduction, tracking the |s> branch bits
    bits = [0] * n
    bits[root] = 1
    layers = []
    unpadded = 0
    for color, gates in sched + [(c, g) for c, g in reversed(reduction)]:
        if not gates:
            continue
        full, skipped = _fill_layer(lat, color, gates, bits, pad)
        unpadded += skipped
        for c, t in gates:
            bits[t] ^= bits[c]
        layers.append(Layer("cx", color, tuple(Gate("cx", (c, t)) for c, t in full)))
    if bits != s:
        raise RuntimeError("controlled-preparation synthesis did not reach the target")
    circ = LayeredCircuit(
        n,
        tuple(layers),
        control_qubit=target.control,
        split_site=root,
        vacuum_phase=0.0,
        info={"depth_bound": prep_depth_bound(lat, target), "unpadded_edges": unpadded},
    )
    if circ.depth > circ.info["depth_bound"]:
        raise RuntimeError(f"depth {circ.depth} exceeds bound {circ.info['depth_bound']}")
    return circ


# --- observables and measurement bases --------------------------------------------

@dataclass(frozen=True)
class ConjugatedObservable:
    control_pauli: str  # X -> real part, Y -> imaginary part
    term: PauliTerm  # system Pauli (layout indices), unit coefficient
    observable: PauliTerm  # Pauli actually measured, coefficient +-1


def conjugate_through_prep(obs: PauliTerm, target: PreparationTarget, open_control: bool = True) -> PauliTerm:
    """Heisenberg-picture image of ``obs`` under the logical controlled preparation.

    The logical circuit is a CX from the control to every particle; with
    ``open_control`` it fires on control state |0>, i.e. it is wrapped in X gates.
    """
    out = obs
    if open_control:
        out = conjugate_by_x(out, target.control)
    for p in target.particles:
        out = conjugate_by_cx(out, target.control, p)
    if open_control:
        out = conjugate_by_x(out, target.control)
    return out


def conjugate_observables(
    terms: Iterable[PauliTerm], control_pauli: str, target: PreparationTarget, open_control: bool = True
) -> list[ConjugatedObservable]:
    if control_pauli not in ("X", "Y"):
        raise ValueError("control Pauli must be X or Y")
    parts = set(target.particles)
    out = []
    for term in terms:
        if target.control in term.support:
            raise ValueError("Hamiltonian term acts on the control qubit")
        if len(parts & set(term.support)) > 1:
            raise ValueError(f"term {term.label} spans two particles")
        unit = PauliTerm(1.0, term.ops)
        src = PauliTerm(1.0, ((target.control, control_pauli),) + unit.ops)
        out.append(ConjugatedObservable(control_pauli, unit, conjugate_through_prep(src, target, open_control)))
    return out


def is_diagonal_in(obs: PauliTerm, letters: Sequence[str]) -> bool:
    return all(letters[s] == l for s, l in obs.ops)


@dataclass(frozen=True)
class MeasurementBasis:
    letters: tuple[str, ...]  # per layout qubit, control included
    kind: str
    covers: tuple[ConjugatedObservable, ...]
    overlap_probe: ConjugatedObservable | None  # estimates +-S element from this basis

    @property
    def overlap_sign(self) -> float:
        """Factor turning the probe value into the overlap element (Z on a particle flips sign)."""
        return (-1.0) ** self.overlap_probe.term.weight


def _table_bases(n: int, target: PreparationTarget) -> list[tuple[str, list[str]]]:
    a, parts = target.control, target.particles

    def make(ctrl, on_particles, elsewhere, special=None):
        letters = [elsewhere] * n
        for p in parts:
            letters[p] = on_particles
        if special is not None:
            letters[special[0]] = special[1]
        letters[a] = ctrl
        return letters

    bases = [
        ("all-X", make("X", "X", "X")),
        ("Y-ctrl/X", make("Y", "X", "X")),
        ("X-ctrl/X-particles/Z", make("X", "X", "Z")),
        ("Y-ctrl/X-particles/Z", make("Y", "X", "Z")),
    ]
    bases += [(f"Y-ctrl/Y{p}/Z", make("Y", "X", "Z", (p, "Y"))) for p in parts]
    bases += [(f"X-ctrl/Y{p}/Z", make("X", "X", "Z", (p, "Y"))) for p in parts]
    return bases


def required_observables(terms: Sequence[PauliTerm], target: PreparationTarget, skip_yy: bool = True) -> list[ConjugatedObservable]:
    chosen = [t for t in terms if not (skip_yy and _is_yy(t))]
    return conjugate_observables(chosen, "X", target) + conjugate_observables(chosen, "Y", target)


def _is_yy(term: PauliTerm) -> bool:
    return term.weight == 2 and all(l == "Y" for _, l in term.ops)


def measurement_bases(
    lat: EdgeColoredLattice, target: PreparationTarget, terms: Sequence[PauliTerm], skip_yy: bool = True
) -> list[MeasurementBasis]:
    """Partition the conjugated observables into co-measurable single-qubit bases.

    With ``skip_yy`` the 2(k+2) bases of the standard table suffice; otherwise
    extra bases are added greedily for the YY terms.
    """
    target.validate(lat)
    n = lat.n_sites
    needed = required_observables(terms, target, skip_yy)
    probes = [
        c
        for q in ("X", "Y")
        for c in conjugate_observables(
            [PauliTerm(1.0, ())] + [PauliTerm(1.0, ((p, "Z"),)) for p in target.particles], q, target
        )
    ]
    specs = _table_bases(n, target)
    assigned: list[list[ConjugatedObservable]] = [[] for _ in specs]
    leftovers = []
    for obs in needed:
        for b, (_, letters) in enumerate(specs):
            if is_diagonal_in(obs.observable, letters):
                assigned[b].append(obs)
                break
        else:
            leftovers.append(obs)
    while leftovers:
        letters = ["Z"] * n
        fixed: set[int] = set()
        group, rest = [], []
        for obs in leftovers:
            if all(s not in fixed or letters[s] == l for s, l in obs.observable.ops):
                for s, l in obs.observable.ops:
                    letters[s] = l
                    fixed.add(s)
                group.append(obs)
            else:
                rest.append(obs)
        specs.append((f"extra-{len(specs)}", letters))
        assigned.append(group)
        leftovers = rest
    out = []
    for (kind, letters), group in zip(specs, assigned):
        probe = next((p for p in probes if is_diagonal_in(p.observable, letters)), None)
        out.append(MeasurementBasis(tuple(letters), kind, tuple(group), probe))
    return out


def system_terms_on_layout(system: EdgeColoredLattice, to_layout: Sequence[int]) -> list[PauliTerm]:
    return [t.relabel(to_layout) for c in COLORS for t in hamiltonian_terms(system)[c]]
