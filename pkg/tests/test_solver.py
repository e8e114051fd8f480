import numpy as np
import pytest
from hypothesis import given, strategies as st

from kqd.krylov import Evolution, KrylovPair, KrylovProblem, MeasurementPlan, ShotData, estimate_shots, exact_elements, exact_elements_hermitian
from kqd.lattice import build_heavy_hex
from kqd.solver import (
    EmptySubspaceError,
    EnergyCurve,
    IllConditionedError,
    RegularizationConfig,
    SearchTrace,
    auto_regularize,
    bootstrap,
    check_resample,
    energy_curve,
    fit_exponential_decay,
    solve_regularized,
)


def _pair(H, S):
    return KrylovPair(np.asarray(H, dtype=complex), np.asarray(S, dtype=complex), "hermitian", 0.1)


@pytest.fixture(scope="module")
def problem():
    return KrylovProblem(build_heavy_hex(1, 1), (3, 7), control=0)


def test_trivial_solves():
    assert solve_regularized(_pair([[2.5]], [[1]]), 0.0)[0] == 2.5
    e, c = solve_regularized(_pair(np.diag([5, -100]), np.diag([1, 1e-12])), 0.01)
    assert e == 5
    with pytest.raises(EmptySubspaceError):
        solve_regularized(_pair([[1]], [[1e-3]]), 0.1)


def test_ritz_vector_normalized(problem):
    pair = exact_elements_hermitian(problem, Evolution(0.3), 4)
    e, c = solve_regularized(pair, 1e-10)
    assert abs(c.conj() @ pair.S @ c - 1) <= 1e-8
    assert abs(c.conj() @ pair.H @ c - e) <= 1e-8


def test_variational_against_oracle(problem):
    pair = exact_elements_hermitian(problem, Evolution(0.3, exact=True), 6)
    curve = energy_curve(pair, 1e-12)
    e0 = problem.ground_energy()
    assert np.all(curve.energies >= e0 - 1e-8)
    assert np.all(np.diff(curve.energies) <= 1e-9)


def test_curve_basics(problem):
    pair = exact_elements(problem, Evolution(0.3), 5)
    curve = energy_curve(pair, 1e-8)
    assert curve.energies[0] == problem.reference_energy()
    assert np.allclose(curve.thresholds, 1e-8 * np.arange(1, 6))
    flat = energy_curve(exact_elements(problem, Evolution(0.0), 5), 1e-8)
    assert np.allclose(flat.energies, problem.reference_energy())


@given(st.integers(0, 2**16), st.floats(0.1, 10))
def test_threshold_monotone_and_scale_covariant(seed, scale):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    S = A @ A.conj().T / 5
    B = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    H = (B + B.conj().T) / 2
    w = np.linalg.eigvalsh(S)
    kept = [np.count_nonzero(w > eps) for eps in np.geomspace(1e-4, 10, 12)]
    assert all(a >= b for a, b in zip(kept, kept[1:]))
    eps = float((w[1] + w[2]) / 2)
    try:
        e1 = solve_regularized(_pair(H, S), eps)[0]
    except EmptySubspaceError:
        return
    e2 = solve_regularized(_pair(scale * H, scale * S), scale * eps)[0]
    assert e2 == pytest.approx(e1, rel=1e-8, abs=1e-8)


def test_fit_recovers_exponential():
    x = np.arange(1, 11)
    fit = fit_exponential_decay(-3 + 4 * np.exp(-0.7 * x))
    assert fit.converged and fit.rms < 1e-6
    assert fit.e_inf == pytest.approx(-3, abs=1e-5)


def test_auto_regularize_keeps_initial_threshold(problem):
    pair = exact_elements(problem, Evolution(0.3), 6)
    eps, curve = auto_regularize(pair)
    assert eps == 1e-8 and curve.accepted and curve.fit.rms <= 0.5


def test_auto_regularize_with_noise():
    lat = build_heavy_hex(1, 1)
    problem = KrylovProblem(lat, (4,))
    pair = exact_elements(problem, Evolution(0.3), 10)
    rng = np.random.default_rng(2)
    noisy = KrylovPair(pair.H + 1e-2 * rng.normal(size=pair.H.shape), pair.S + 1e-2 * rng.normal(size=pair.S.shape), "toeplitz", pair.dt).hermitized()
    trace = SearchTrace()
    eps, curve = auto_regularize(noisy, RegularizationConfig(), trace)
    assert eps > 1e-8
    assert curve.fit.rms <= 0.5


def test_auto_regularize_gives_up():
    cfg = RegularizationConfig(eps_init=1e-3, max_threshold=1e-2)
    # a wildly oscillating curve never fits a decay
    H = np.diag([0.0, 50.0, -50.0, 50.0, -50.0])
    with pytest.raises(IllConditionedError, match="ill-conditioned data"):
        auto_regularize(_pair(H, np.eye(5)), cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        RegularizationConfig(eps_init=2.0)
    with pytest.raises(ValueError):
        RegularizationConfig(factor=1.0)


def test_bootstrap_zero_variance(problem):
    plan = MeasurementPlan.build(problem)
    data = estimate_shots(plan, Evolution(0.0), 2, 100, 0)
    data.counts = np.where(data.counts >= 50, 100, 0)  # every shot of an item identical
    again = data.resample(np.random.default_rng(3))
    assert np.array_equal(again.counts, data.counts)

    exact = exact_elements(problem, Evolution(0.3), 6)

    class Frozen:
        def resample(self, rng):
            return self

        def pair(self):
            return exact

    res = bootstrap(Frozen(), 20, seed=1)
    assert res.n_accepted == 20 and res.n_rejected == 0
    assert np.allclose(res.std, 0, atol=1e-12)


def test_rejection_rules():
    trace = SearchTrace()
    up = EnergyCurve(np.array([1.0, 2.0, 0.5]), np.ones(3), 1e-8)
    assert check_resample(up, trace) == "energy"
    down = EnergyCurve(np.array([1.0, 0.5, 0.4]), np.ones(3), 1e-8)
    assert check_resample(down, trace) is None
    from kqd.solver import FitResult

    trace.fits.append(FitResult(0, 0, 0, np.inf, False))
    assert check_resample(down, trace) == "fit"


def test_bootstrap_needs_accepted():
    class Bad:
        def resample(self, rng):
            return self

        def pair(self):
            return _pair(np.diag([0.0, 50.0, -50.0, 50.0, -50.0]), np.eye(5))

    with pytest.raises(IllConditionedError):
        bootstrap(Bad(), 3, RegularizationConfig(eps_init=1e-3, max_threshold=1e-2))
