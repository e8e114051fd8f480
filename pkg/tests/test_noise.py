import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from kqd import sector_sim as ss
from kqd.circuits import LayeredCircuit, build_trotter, run_dense
from kqd.krylov import Evolution, KrylovProblem, MeasurementPlan, exact_elements, item_expectations
from kqd.lattice import chain
from kqd.noise import (
    PEA_PRESETS,
    PauliLindbladModel,
    ReadoutModel,
    ReadoutSignalLost,
    amplitude_damping,
    apply_superop,
    depolarizing,
    extrapolate,
    layer_id,
    layer_models,
    learn_trex_factors,
    monte_carlo_fidelity,
    noisy_krylov_run,
    pauli_fidelity,
    ptm,
    random_channel,
    random_model,
    sample_error,
    superop_from_kraus,
    trex_mitigate,
    twirl_channel,
)
from kqd.pauli import PauliTerm


def P(label):
    return PauliTerm.from_label(label)


# --- twirling --------------------------------------------------------------------

def test_twirl_fixed_points():
    ident = superop_from_kraus([np.eye(2)])
    assert np.allclose(twirl_channel(ident), ident, atol=1e-14)
    dep = superop_from_kraus(depolarizing(0.3, 2))
    assert np.allclose(twirl_channel(dep), dep, atol=1e-14)


@pytest.mark.parametrize("gamma", [0.0, 0.1, 0.5, 0.9])
def test_twirl_amplitude_damping(gamma):
    R = ptm(twirl_channel(superop_from_kraus(amplitude_damping(gamma))))
    s = np.sqrt(1 - gamma)
    assert np.allclose(R, np.diag([1, s, s, 1 - gamma]), atol=1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([1, 2]))
def test_twirl_diagonalizes(seed, n):
    rng = np.random.default_rng(seed)
    L = superop_from_kraus(random_channel(n, rng))
    R, Rt = ptm(L), ptm(twirl_channel(L))
    off = Rt - np.diag(np.diag(Rt))
    assert np.max(np.abs(off)) <= 1e-12
    assert np.allclose(np.diag(Rt), np.diag(R), atol=1e-12)


def test_twirl_rejects_three_qubits():
    with pytest.raises(ValueError):
        twirl_channel(np.eye(64))


# --- Pauli-Lindblad models -------------------------------------------------------

def test_model_validation():
    with pytest.raises(ValueError):
        PauliLindbladModel("x", ((P("Z0"), -0.1),))
    with pytest.raises(ValueError):
        PauliLindbladModel("x", ((PauliTerm(1.0, ()), 0.1),))
    with pytest.raises(ValueError):
        PauliLindbladModel("x", ((P("Z0"), 0.1), (P("X0"), 0.1)), cap=1)
    with pytest.raises(ValueError):
        sample_error(PauliLindbladModel("x", ((P("Z0"), 0.1),)), 0.5, np.random.default_rng(0))


def test_model_roundtrip(rng):
    m = random_model(list(range(4)), 6, 0.05, rng, layer="heis-R")
    assert PauliLindbladModel.from_dict(m.to_dict()) == m


def test_zero_rates_identity(rng):
    m = PauliLindbladModel("x", ((P("Z0"), 0.0), (P("X0 X1"), 0.0)))
    assert all(sample_error(m, 1.5, rng).weight == 0 for _ in range(200))


def test_insert_frequency(rng):
    lam, n = 0.05, 40000
    m = PauliLindbladModel("x", ((P("Y2"), lam),))
    hits = sum(sample_error(m, 1.0, rng).weight for _ in range(n))
    w = (1 - np.exp(-2 * lam)) / 2
    assert abs(hits / n - w) < 3 * np.sqrt(w * (1 - w) / n)


def test_unraveling_matches_product_channel():
    # exp of the Lindbladian lam (P rho P - rho) vs the (1 - w) rho + w P rho P mixture
    lam = 0.13
    for label in ["Z0", "X0 Y1", "Y0 Y1"]:
        Pm = P(label).to_dense(2)
        gen = lam * (np.kron(Pm.conj(), Pm) - np.eye(16))
        exact = scipy.linalg.expm(gen)
        w = (1 - np.exp(-2 * lam)) / 2
        mix = superop_from_kraus([np.sqrt(1 - w) * np.eye(4), np.sqrt(w) * Pm])
        assert np.allclose(exact, mix, atol=1e-12)


def test_fidelity_examples():
    lam = 0.07
    m = PauliLindbladModel("x", ((P("Z0"), lam),))
    assert pauli_fidelity(m, PauliTerm(1.0, ())) == 1
    assert pauli_fidelity(m, P("Z0")) == 1
    assert np.isclose(pauli_fidelity(m, P("X0")), np.exp(-2 * lam))
    # against 2^-n Tr[P Lambda(P)] from the dense channel
    Z, X = P("Z0").to_dense(1), P("X0").to_dense(1)
    L = scipy.linalg.expm(lam * (np.kron(Z.conj(), Z) - np.eye(4)))
    assert np.isclose(np.trace(X @ apply_superop(L, X)).real / 2, np.exp(-2 * lam))


@given(st.integers(0, 2 ** 32 - 1))
def test_gain_composition(seed):
    rng = np.random.default_rng(seed)
    m = random_model(list(range(3)), 5, 0.1, rng)
    pa = P("X0 Z1 Y2")
    f1, f2 = pauli_fidelity(m, pa, 1.0), pauli_fidelity(m, pa, 2.0)
    assert np.isclose(f2, f1 ** 2)
    g = float(rng.uniform(1, 3))
    assert np.isclose(pauli_fidelity(m, pa, 1 + g), f1 * pauli_fidelity(m, pa, g))


def test_gain_composition_sampled(rng):
    m = PauliLindbladModel("x", ((P("Z0"), 0.1), (P("X1"), 0.05)))
    pa = P("X0 Z1")
    f1, e1 = monte_carlo_fidelity(m, pa, 40000, rng, 1.0)
    f2, e2 = monte_carlo_fidelity(m, pa, 40000, rng, 2.0)
    assert abs(f2 - f1 ** 2) < 3 * np.hypot(e2, 2 * f1 * e1)


def test_monte_carlo_fidelity(rng):
    for _ in range(10):
        m = random_model(list(range(4)), 8, 0.1, rng)
        pa = PauliTerm(1.0, tuple((q, str(rng.choice(list("XYZ")))) for q in range(4)))
        est, err = monte_carlo_fidelity(m, pa, 5000, rng)
        assert abs(est - pauli_fidelity(m, pa)) <= 3 * err + 1e-12


def test_layer_models_cover_circuits():
    lat = chain(5)
    models = layer_models(lat, 1e-3, 1e-3)
    circ = build_trotter(lat, 0.2, 2)
    assert all(layer_id(L) in models for L in circ.layers)
    assert all(p.weight <= 2 for m in models.values() for p, _ in m.generators)


def test_z_rate_damping(rng):
    # |+> on qubit 0 through L identity layers, a Z error of rate lam before each one
    lam, L, n = 0.04, 6, 4000
    lat = chain(2)
    base = build_trotter(lat, 0.0, L // 2)
    circ = LayeredCircuit(2, base.layers[:L], None, 0)
    model = PauliLindbladModel("z", ((P("Z0"), lam),))
    total = 0.0
    for _ in range(n):
        errs = [sample_error(model, 1.0, rng) for _ in circ.layers]
        state = run_dense(circ, ss.DenseState.zeros(2), lambda k, layer, s: ss.apply_pauli(s, errs[k]) if errs[k].ops else s)
        state = ss.apply_unitary_1q(state, ss.HADAMARD, 0)  # X measured in the Z basis
        total += ss.expectation(state, P("Z0")).real
    expected = np.exp(-2 * lam * L)
    assert abs(total / n - expected) < 3 * np.sqrt((1 - expected ** 2) / n)


# --- readout and TREX ------------------------------------------------------------

def test_readout_validation():
    with pytest.raises(ValueError):
        ReadoutModel((0.6,), (0.1,))
    with pytest.raises(ValueError):
        ReadoutModel((0.1, 0.1), (0.1,))


def test_trex_single_qubit(rng):
    p, shots = 0.1, 200000
    ro = ReadoutModel.uniform(1, p)
    _, lam = learn_trex_factors(ro, [(0,)], shots, rng)
    assert abs(lam[0] - (1 - 2 * p)) < 3 * 2 / np.sqrt(shots)
    assert np.isclose(ro.twirled_factor([0]), 1 - 2 * p)


def test_trex_product(rng):
    ro = ReadoutModel((0.05, 0.1), (0.05, 0.1))
    _, lam = learn_trex_factors(ro, [(0, 1)], 200000, rng)
    assert abs(lam[0] - 0.9 * 0.8) < 3 * 2 / np.sqrt(200000)
    assert np.isclose(ro.twirled_factor([0, 1]), 0.9 * 0.8)


def test_trex_perfect_readout(rng):
    _, lam = learn_trex_factors(ReadoutModel.uniform(2, 0.0), [(0,), (0, 1)], 1000, rng)
    assert np.all(lam == 1)
    assert trex_mitigate(0.37, lam[0]) == 0.37


def test_trex_floor():
    with pytest.raises(ReadoutSignalLost):
        trex_mitigate(0.1, 0.01)


def test_trex_unbiased(rng):
    # asymmetric flips: twirling symmetrizes them, TREX removes the factor
    ro = ReadoutModel((0.02,), (0.15,))
    truth, shots, runs = 0.6, 2000, 200
    lam = ro.twirled_factor([0])
    ests = []
    for _ in range(runs):
        bits = (rng.random((shots, 1)) > (1 + truth) / 2).astype(np.uint8)
        noisy = ro.measure(bits, rng)
        ests.append(trex_mitigate(1 - 2 * noisy.mean(), lam))
    ests = np.array(ests)
    assert abs(ests.mean() - truth) < 3 * ests.std(ddof=1) / np.sqrt(runs)


# --- extrapolation ---------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_extrapolate_exponential(seed):
    rng = np.random.default_rng(seed)
    gains = np.array([1.0, 1.3, 1.6])
    sigma = 1e-4
    means = 0.8 * np.exp(-0.3 * gains) + rng.normal(0, sigma, 3)
    res = extrapolate(gains, means, np.full(3, sigma))
    assert res.method == "exponential"
    assert abs(res.value - 0.8) < 2 * res.value_std


def test_extrapolate_constant():
    res = extrapolate([1, 1.3, 1.6], [0.4, 0.4, 0.4], [0.01, 0.01, 0.01])
    assert np.isclose(res.value, 0.4, atol=1e-6)


def test_extrapolate_downgrade_near_zero():
    res = extrapolate([1, 1.3, 1.6], [0.01, -0.02, 0.015], [0.05, 0.05, 0.05])
    assert res.method == "linear"
    assert res.std_ratio >= 0.5


def test_extrapolate_out_of_range_downgrades():
    # steep growth towards G=0 pushes the exponential intercept outside [-1, 1]
    gains = np.array([1.0, 1.3, 1.6])
    res = extrapolate(gains, 0.9 * np.exp(-(gains - 1) * 2.0) * 1.0, [1e-3] * 3)
    assert res.exp_value > 1 and res.method == "linear"


def test_extrapolate_needs_two_gains():
    with pytest.raises(ValueError):
        extrapolate([1, 1], [0.5, 0.5], [0.1, 0.1])


# --- noisy Krylov runs -----------------------------------------------------------

@pytest.fixture(scope="module")
def chain_plan():
    problem = KrylovProblem(chain(5), (2,), control=0)
    return MeasurementPlan.build(problem)


def test_presets_accepted(chain_plan):
    assert PEA_PRESETS["pea-300"] == {"twirls": 300, "shots": 500, "gains": (1.0, 1.5, 3.0)}
    assert PEA_PRESETS["pea-100"] == {"twirls": 100, "shots": 500, "gains": (1.0, 1.3, 1.6)}
    models = layer_models(chain_plan.problem.layout, 1e-3, 1e-3)
    for preset in PEA_PRESETS.values():
        data = noisy_krylov_run(chain_plan, Evolution(0.2), 2, models, gains=preset["gains"], twirls=2, shots=preset["shots"], seed=0, calibration_shots=100)
        assert data.plus.shape[:3] == (3, 1, 2)


def test_null_noise_matches_exact(chain_plan):
    evo, D, shots = Evolution(0.3), 3, 40000
    data = noisy_krylov_run(chain_plan, evo, D, {}, twirls=1, shots=shots, seed=4, calibration_shots=100)
    data = data.with_options(mitigate=False)
    values, _ = item_expectations(chain_plan, evo, D)
    assert np.max(np.abs(data.item_values() - values)) < 5 / np.sqrt(shots)
    exact = exact_elements(chain_plan.problem, evo, D)
    pair = data.pair()
    assert np.max(np.abs(pair.S - exact.S)) < 10 / np.sqrt(shots)
    assert np.max(np.abs(pair.H - exact.H)) < 10 * 4 / np.sqrt(shots)


def test_noisy_run_deterministic_and_resample(chain_plan):
    models = layer_models(chain_plan.problem.layout, 5e-3, 5e-3)
    kw = dict(gains=(1.0, 1.5), twirls=3, shots=50, readout=ReadoutModel.uniform(5, 0.02), seed=7, calibration_shots=500)
    a = noisy_krylov_run(chain_plan, Evolution(0.2), 3, models, **kw)
    b = noisy_krylov_run(chain_plan, Evolution(0.2), 3, models, **kw)
    assert np.array_equal(a.plus, b.plus) and np.array_equal(a.cal_plus, b.cal_plus)
    r = a.resample(np.random.default_rng(1))
    assert r.plus.shape == a.plus.shape
    # every resampled twirl row is one of the original rows
    for g in range(2):
        for d in range(2):
            rows = {tuple(x) for x in a.plus[g, d]}
            assert all(tuple(x) in rows for x in r.plus[g, d])
    assert np.isfinite(a.pair().H).all()


def test_noise_damps_signal(chain_plan):
    evo = Evolution(0.2)
    strong = layer_models(chain_plan.problem.layout, 0.05, 0.05)
    clean = noisy_krylov_run(chain_plan, evo, 2, {}, twirls=1, shots=4000, seed=2, calibration_shots=100).with_options(mitigate=False)
    noisy = noisy_krylov_run(chain_plan, evo, 2, strong, twirls=20, shots=200, seed=2, calibration_shots=100).with_options(mitigate=False)
    assert np.abs(noisy.item_values()).sum() < np.abs(clean.item_values()).sum()


def test_dense_cap(chain_plan):
    with pytest.raises(ss.BudgetError):
        noisy_krylov_run(chain_plan, Evolution(0.2), 2, {}, twirls=1, shots=10, cap=3)
