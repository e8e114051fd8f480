"""Heavy-hex lattices with an edge three-coloring and the Heisenberg Hamiltonian."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple
import warnings

import numpy as np

from .pauli import PauliTerm

COLORS = ("R", "G", "B")

Edge = tuple[int, int]


def _norm_edge(e) -> Edge:
    i, j = int(e[0]), int(e[1])
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True, eq=False)
class EdgeColoredLattice:
    """Qubit graph with couplings and a proper edge coloring.

    ``edges``, ``couplings`` and ``colors`` are parallel tuples; edges are stored
    as ``(i, j)`` with ``i < j`` in sorted order.
    """

    n_sites: int
    edges: tuple[Edge, ...]
    couplings: tuple[float, ...]
    colors: tuple[str, ...]

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError("n_sites must be positive")
        if not (len(self.edges) == len(self.couplings) == len(self.colors)):
            raise ValueError("edges, couplings and colors must have equal length")
        order = sorted(range(len(self.edges)), key=lambda t: _norm_edge(self.edges[t]))
        edges = tuple(_norm_edge(self.edges[t]) for t in order)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "couplings", tuple(float(self.couplings[t]) for t in order))
        object.__setattr__(self, "colors", tuple(self.colors[t] for t in order))
        if len(set(edges)) != len(edges):
            raise ValueError("duplicate edge")
        for (i, j), c in zip(edges, self.colors):
            if i == j:
                raise ValueError(f"self-loop on site {i}")
            if not (0 <= i < self.n_sites and 0 <= j < self.n_sites):
                raise ValueError(f"edge {(i, j)} out of range for {self.n_sites} sites")
            if c not in COLORS:
                raise ValueError(f"unknown color {c!r}")
        for c, members in self.color_classes().items():
            used = [s for e in members for s in e]
            if len(used) != len(set(used)):
                raise ValueError(f"color class {c} is not a matching")

    @property
    def coupling(self) -> dict[Edge, float]:
        return dict(zip(self.edges, self.couplings))

    @property
    def color(self) -> dict[Edge, str]:
        return dict(zip(self.edges, self.colors))

    def color_classes(self) -> dict[str, list[Edge]]:
        out: dict[str, list[Edge]] = {c: [] for c in COLORS}
        for e, c in zip(self.edges, self.colors):
            out[c].append(e)
        return out

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        adj: list[list[int]] = [[] for _ in range(self.n_sites)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return tuple(tuple(sorted(a)) for a in adj)

    def degree(self, site: int) -> int:
        return len(self.neighbors[site])

    def edge_color(self, i: int, j: int) -> str:
        return self.color[_norm_edge((i, j))]

    def has_edge(self, i: int, j: int) -> bool:
        return _norm_edge((i, j)) in self.color

    def bfs_distances(self, source: int) -> np.ndarray:
        """Graph distances from ``source``; unreachable sites get -1."""
        dist = np.full(self.n_sites, -1, dtype=np.int64)
        dist[source] = 0
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for v in self.neighbors[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist

    def is_connected(self) -> bool:
        return bool(np.all(self.bfs_distances(0) >= 0))

    def to_dict(self) -> dict:
        return {
            "n_sites": self.n_sites,
            "sites": list(range(self.n_sites)),
            "edges": [[i, j, J, c] for (i, j), J, c in zip(self.edges, self.couplings, self.colors)],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EdgeColoredLattice":
        records = data["edges"]
        n = int(data.get("n_sites", len(data.get("sites", []))))
        return cls(
            n,
            tuple((int(r[0]), int(r[1])) for r in records),
            tuple(float(r[2]) for r in records),
            tuple(str(r[3]) for r in records),
        )

    def __repr__(self) -> str:
        return f"EdgeColoredLattice(n_sites={self.n_sites}, n_edges={len(self.edges)})"


def color_bipartite_edges(n_sites: int, edges: Iterable[Edge]) -> dict[Edge, str]:
    """Deterministic proper 3-edge-coloring of a bipartite graph with max degree 3.

    Edges are colored in sorted order; conflicts are resolved by swapping the two
    colors along an alternating path (König's construction), which always
    terminates away from the starting vertex in a bipartite graph.
    """
    edges = sorted(_norm_edge(e) for e in edges)
    adj: list[list[int]] = [[] for _ in range(n_sites)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    if any(len(a) > 3 for a in adj):
        raise ValueError("maximum degree exceeds 3; no three-coloring by construction")
    side = np.full(n_sites, -1)
    for s in range(n_sites):
        if side[s] >= 0:
            continue
        side[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if side[v] < 0:
                    side[v] = 1 - side[u]
                    queue.append(v)
                elif side[v] == side[u]:
                    raise ValueError("graph is not bipartite; edge three-coloring not attempted")

    # at[v][c] = neighbour joined to v by an edge of color c
    at: list[dict[str, int]] = [dict() for _ in range(n_sites)]

    def free(v):
        return [c for c in COLORS if c not in at[v]]

    for u, v in edges:
        a = free(u)[0]
        if a in at[v]:
            b = free(v)[0]
            # swap colors a<->b along the path from v alternating a, b, a, ...
            path = [v]
            c, x = a, v
            while c in at[x]:
                y = at[x][c]
                path.append(y)
                x = y
                c = b if c == a else a
            for p in range(len(path) - 1):
                x, y = path[p], path[p + 1]
                old = a if p % 2 == 0 else b
                new = b if old == a else a
                del at[x][old]
                del at[y][old]
            for p in range(len(path) - 1):
                x, y = path[p], path[p + 1]
                new = b if p % 2 == 0 else a
                at[x][new] = y
                at[y][new] = x
        at[u][a] = v
        at[v][a] = u
    return {_norm_edge((u, v)): c for u in range(n_sites) for c, v in at[u].items()}


def from_edges(n_sites: int, edges: Iterable[Edge], couplings: Mapping[Edge, float] | None = None) -> EdgeColoredLattice:
    """Build a lattice from an edge list, coloring it automatically."""
    edges = sorted({_norm_edge(e) for e in edges})
    colors = color_bipartite_edges(n_sites, edges)
    couplings = {} if couplings is None else {_norm_edge(e): J for e, J in couplings.items()}
    return EdgeColoredLattice(
        n_sites,
        tuple(edges),
        tuple(couplings.get(e, 1.0) for e in edges),
        tuple(colors[e] for e in edges),
    )


def chain(n_sites: int) -> EdgeColoredLattice:
    return from_edges(n_sites, [(i, i + 1) for i in range(n_sites - 1)])


def heavy_hex_coordinates(rows: int, cols: int) -> tuple[list[tuple[int, int]], list[tuple[tuple[int, int], tuple[int, int]]]]:
    """Grid coordinates and edges of a brick-wall heavy-hex patch.

    The underlying honeycomb is a brick wall with ``rows`` rows of ``cols``
    hexagons; honeycomb vertex ``(r, c)`` sits at grid point ``(2r, 2c)`` and every
    honeycomb edge is subdivided by one extra site at its midpoint.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")

    def brick_span(r):
        off = r % 2
        return off, off + 2 * cols

    honey_edges = set()
    for line in range(rows + 1):
        spans = [brick_span(r) for r in (line - 1, line) if 0 <= r < rows]
        lo = min(s[0] for s in spans)
        hi = max(s[1] for s in spans)
        for c in range(lo, hi):
            honey_edges.add(((line, c), (line, c + 1)))
    for r in range(rows):
        lo, hi = brick_span(r)
        for c in range(lo, hi + 1, 2):
            honey_edges.add(((r, c), (r + 1, c)))

    points = set()
    grid_edges = []
    for (r0, c0), (r1, c1) in sorted(honey_edges):
        a, b = (2 * r0, 2 * c0), (2 * r1, 2 * c1)
        m = (r0 + r1, c0 + c1)
        points.update((a, b, m))
        grid_edges += [(a, m), (m, b)]
    return sorted(points), grid_edges


def build_heavy_hex(rows: int, cols: int, coupling: float = 1.0) -> EdgeColoredLattice:
    """Heavy-hex patch of ``rows x cols`` hexagons, sites numbered row-major on the grid."""
    points, grid_edges = heavy_hex_coordinates(rows, cols)
    index = {p: n for n, p in enumerate(points)}
    edges = [(index[a], index[b]) for a, b in grid_edges]
    return from_edges(len(points), edges, {_norm_edge(e): coupling for e in edges})


class Sublattice(NamedTuple):
    lattice: EdgeColoredLattice
    site_map: dict[int, int]  # parent site -> new site
    warning: str | None


def induced_sublattice(lat: EdgeColoredLattice, sites: Iterable[int]) -> Sublattice:
    """Induced subgraph on ``sites`` with inherited couplings and colors.

    Sites are renumbered contiguously in increasing parent order.
    """
    chosen = sorted({int(s) for s in sites})
    if not chosen:
        raise ValueError("empty site set")
    if chosen[0] < 0 or chosen[-1] >= lat.n_sites:
        raise ValueError("site outside lattice")
    site_map = {s: n for n, s in enumerate(chosen)}
    keep = [(e, J, c) for e, J, c in zip(lat.edges, lat.couplings, lat.colors) if e[0] in site_map and e[1] in site_map]
    sub = EdgeColoredLattice(
        len(chosen),
        tuple((site_map[i], site_map[j]) for (i, j), _, _ in keep),
        tuple(J for _, J, _ in keep),
        tuple(c for _, _, c in keep),
    )
    warning = None
    if not sub.is_connected():
        warning = "induced sublattice is disconnected"
        warnings.warn(warning, stacklevel=2)
    return Sublattice(sub, site_map, warning)


def hamiltonian_terms(lat: EdgeColoredLattice) -> dict[str, list[PauliTerm]]:
    """Heisenberg terms J(XX + YY + ZZ) per edge, grouped by edge color."""
    groups: dict[str, list[PauliTerm]] = {c: [] for c in COLORS}
    for (i, j), J, c in zip(lat.edges, lat.couplings, lat.colors):
        for p in ("X", "Y", "Z"):
            groups[c].append(PauliTerm(J, ((i, p), (j, p))))
    return groups


def flat_terms(lat: EdgeColoredLattice) -> list[PauliTerm]:
    return [t for c in COLORS for t in hamiltonian_terms(lat)[c]]


def dense_hamiltonian(lat: EdgeColoredLattice) -> np.ndarray:
    """Full ``2**n`` Heisenberg matrix; oracle use for small lattices only."""
    if lat.n_sites > 14:
        raise ValueError("dense Hamiltonian limited to 14 sites")
    dim = 2 ** lat.n_sites
    idx = np.arange(dim)
    h = np.zeros((dim, dim), dtype=complex)
    for term in flat_terms(lat):
        from .pauli import apply_to_indices

        out, amp = apply_to_indices(term, idx)
        h[out, idx] += amp
    return h


def total_z(n_sites: int) -> np.ndarray:
    idx = np.arange(2 ** n_sites)
    bits = (idx[:, None] >> np.arange(n_sites)) & 1
    return np.diag((1 - 2 * bits).sum(axis=1).astype(complex))
