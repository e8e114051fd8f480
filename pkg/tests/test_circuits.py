import json

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from kqd import sector_sim as ss
from kqd.circuits import (
    LayeredCircuit,
    PreparationTarget,
    build_trotter,
    conjugate_observables,
    is_diagonal_in,
    measurement_bases,
    prep_depth_bound,
    required_observables,
    run_dense,
    run_sector,
    synthesize_controlled_prep,
    trotter_schedule,
    vacuum_phase,
)
from kqd.lattice import build_heavy_hex, chain, dense_hamiltonian, flat_terms, from_edges, induced_sublattice
from kqd.pauli import PauliTerm
from conftest import random_connected_subgraph, random_target_sites


def test_trotter_layer_counts():
    lat = build_heavy_hex(1, 2)
    assert build_trotter(lat, 0.1, 2).depth == 9
    for n in (1, 3, 5):
        assert build_trotter(lat, 0.1, n).depth == 4 * n + 1
        assert build_trotter(lat, 0.1, n, order=1).depth == 3 * n
    assert [c for c, _ in trotter_schedule(2)] == ["R", "G", "B", "G", "R", "G", "B", "G", "R"]


def test_trotter_layers_respect_colors():
    lat = build_heavy_hex(1, 2)
    for layer in build_trotter(lat, 0.3, 3).layers:
        assert {g.qubits for g in layer.gates} == set(lat.color_classes()[layer.color])


def test_single_edge_is_exact():
    lat = chain(2)
    circ = build_trotter(lat, 0.7, 1)
    state = ss.DenseState.basis_state(2, 0b01)
    out = run_dense(circ, state)
    ref = scipy.linalg.expm(-0.7j * dense_hamiltonian(lat)) @ state.amplitudes
    assert np.abs(out.amplitudes - ref).max() <= 1e-12


def test_vacuum_phase():
    lat = chain(2)
    assert build_trotter(lat, 0.25, 1).vacuum_phase == pytest.approx(-0.25)
    prep = synthesize_controlled_prep(chain(3), PreparationTarget(0, (2,)))
    assert vacuum_phase(prep) == 0.0
    tri = from_edges(4, [(0, 1), (1, 2), (2, 3)])
    circ = build_trotter(tri, 0.3, 2)
    out = run_dense(circ, ss.DenseState.zeros(4))
    assert abs(out.amplitudes[0] - np.exp(1j * circ.vacuum_phase)) <= 1e-12
    assert circ.vacuum_phase == pytest.approx(-0.3 * 3)


def test_trotter_error_slope():
    lat = induced_sublattice(build_heavy_hex(1, 1), range(6)).lattice
    basis = ss.SectorBasis(6, 2)
    exact = ss.exact_sector_propagator(lat, basis, 1.0)
    errs = []
    steps = np.array([4, 8, 16, 32])
    for n in steps:
        cols = []
        for i in range(basis.dim):
            e = ss.SectorState(basis, np.eye(basis.dim)[i])
            cols.append(run_sector(build_trotter(lat, 1.0, int(n)), e).amplitudes)
        errs.append(np.linalg.norm(np.column_stack(cols) - exact, 2))
    slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert -2.3 <= slope <= -1.7


def test_sector_runner_rejects_cx():
    prep = synthesize_controlled_prep(chain(3), PreparationTarget(0, (2,)))
    with pytest.raises(ValueError):
        run_sector(prep, ss.SectorState.from_sites(3, [0]))


def _expected_prep_state(n, target):
    ref = np.zeros(2**n, dtype=complex)
    ref[0] = ref[sum(1 << q for q in target.ones)] = 1 / np.sqrt(2)
    return ref


def test_adjacent_particle_needs_one_layer():
    lat = build_heavy_hex(1, 1)
    i, j = lat.edges[0]
    circ = synthesize_controlled_prep(lat, PreparationTarget(i, (j,)))
    assert circ.depth == 1
    out = run_dense(circ, ss.DenseState.zeros(12))
    assert np.abs(out.amplitudes - _expected_prep_state(12, PreparationTarget(i, (j,)))).max() <= 1e-12


@given(st.integers(0, 2**20))
def test_prep_random_instances(seed):
    rng = np.random.default_rng(seed)
    lat = random_connected_subgraph(build_heavy_hex(2, 2), int(rng.integers(3, 12)), rng)
    control, parts = random_target_sites(lat, int(rng.integers(1, 4)), rng)
    target = PreparationTarget(control, parts)
    circ = synthesize_controlled_prep(lat, target)
    assert circ.depth <= prep_depth_bound(lat, target)
    for layer in circ.layers:
        assert {tuple(sorted(g.qubits)) for g in layer.gates} <= set(lat.color_classes()[layer.color])
    out = run_dense(circ, ss.DenseState.zeros(lat.n_sites))
    assert np.abs(out.amplitudes - _expected_prep_state(lat.n_sites, target)).max() <= 1e-12


def test_prep_errors():
    lat = chain(5)
    with pytest.raises(ValueError):
        synthesize_controlled_prep(lat, PreparationTarget(0, (1, 2)))
    disconnected = from_edges(4, [(0, 1), (2, 3)])
    with pytest.raises(ValueError):
        synthesize_controlled_prep(disconnected, PreparationTarget(0, (3,)))
    with pytest.raises(ValueError):
        PreparationTarget(1, (1,))


def test_circuit_dump_roundtrip():
    circ = synthesize_controlled_prep(build_heavy_hex(1, 1), PreparationTarget(0, (3, 7)))
    back = LayeredCircuit.from_dict(json.loads(json.dumps(circ.to_dict())))
    assert back.layers == circ.layers and back.split_site == circ.split_site


def test_conjugation_examples():
    target = PreparationTarget(0, (1,))
    xx = conjugate_observables([PauliTerm.from_label("X1")], "X", target, open_control=False)[0]
    assert xx.observable == PauliTerm.from_label("X0")
    xz = conjugate_observables([PauliTerm.from_label("Z1")], "X", target, open_control=False)[0]
    assert xz.observable == PauliTerm.from_label("Y0 Y1", -1.0)
    empty = PreparationTarget(0, ())
    same = conjugate_observables([PauliTerm.from_label("Z1 Z2")], "Y", empty)[0]
    assert same.observable == PauliTerm.from_label("Y0 Z1 Z2")
    with pytest.raises(ValueError):
        conjugate_observables([PauliTerm.from_label("X1 X3")], "X", PreparationTarget(0, (1, 3)))


def test_measurement_basis_counts():
    lat = build_heavy_hex(2, 2)
    for k in range(1, 6):
        control, parts = random_target_sites(lat, k, np.random.default_rng(k), control=0)
        target = PreparationTarget(control, parts)
        system_terms = [t for t in flat_terms(lat) if control not in t.support]
        bases = measurement_bases(lat, target, system_terms)
        assert len(bases) == 2 * (k + 2)
        for obs in required_observables(system_terms, target):
            assert any(is_diagonal_in(obs.observable, b.letters) for b in bases)
        assert all(b.overlap_probe is not None for b in bases)


def test_measuring_yy_adds_bases():
    lat = build_heavy_hex(1, 1)
    target = PreparationTarget(0, (4,))
    terms = [t for t in flat_terms(lat) if 0 not in t.support]
    bases = measurement_bases(lat, target, terms, skip_yy=False)
    assert len(bases) > 6
    for obs in required_observables(terms, target, skip_yy=False):
        assert any(is_diagonal_in(obs.observable, b.letters) for b in bases)
