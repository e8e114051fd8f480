"""Thresholded generalized eigenproblem, automated threshold search, and bootstrap errors."""
from __future__ import annotations

from dataclasses import dataclass, field
import warnings

import numpy as np
from scipy.optimize import least_squares

from .krylov import KrylovPair


class EmptySubspaceError(ValueError):
    """Every overlap eigenvalue fell below the threshold."""


class IllConditionedError(RuntimeError):
    pass


@dataclass(frozen=True)
class RegularizationConfig:
    eps_init: float = 1e-8
    factor: float = 10.0
    rms_tol: float = 0.5
    max_threshold: float = 1.0

    def __post_init__(self):
        if not 0 < self.eps_init < self.max_threshold:
            raise ValueError("need 0 < eps_init < max_threshold")
        if self.factor <= 1:
            raise ValueError("search factor must exceed 1")


@dataclass(frozen=True)
class FitResult:
    e_inf: float
    amplitude: float
    rate: float
    rms: float
    converged: bool


@dataclass
class EnergyCurve:
    """Lowest energy for every leading D' x D' block (index D' - 1; NaN if degenerate)."""

    energies: np.ndarray
    thresholds: np.ndarray
    eps_base: float
    fit: FitResult | None = None
    accepted: bool = False
    std: np.ndarray | None = None
    n_accepted: int | None = None
    n_rejected: int | None = None

    @property
    def D(self) -> int:
        return self.energies.size

    def to_csv_rows(self, n_sites: int | None = None) -> list[list]:
        rows = []
        for n in range(self.D):
            row = [n + 1, self.energies[n], self.thresholds[n]]
            if n_sites:
                row.append(self.energies[n] / n_sites)
            row.append("" if self.std is None else self.std[n])
            row.append("" if self.n_accepted is None else self.n_accepted)
            rows.append(row)
        return rows


def solve_regularized(pair: KrylovPair, eps: float) -> tuple[float, np.ndarray]:
    """Lowest generalized eigenvalue after discarding overlap eigenvalues <= eps.

    Returns the energy and the coordinate vector c with c^dagger S c = 1.
    """
    if eps < 0:
        raise ValueError("threshold must be non-negative")
    w, V = np.linalg.eigh(pair.S)
    keep = w > eps
    if not np.any(keep):
        raise EmptySubspaceError(f"no overlap eigenvalue above {eps:.3g}")
    Vk = V[:, keep]
    W = Vk / np.sqrt(w[keep])
    A = W.conj().T @ pair.H @ W
    A = (A + A.conj().T) / 2
    e, y = np.linalg.eigh(A)
    c = W @ y[:, 0]
    return float(e[0]), c


def energy_curve(pair: KrylovPair, eps_base: float) -> EnergyCurve:
    D = pair.D
    energies = np.full(D, np.nan)
    thresholds = eps_base * np.arange(1, D + 1)
    for n in range(1, D + 1):
        try:
            energies[n - 1] = solve_regularized(pair.leading(n), thresholds[n - 1])[0]
        except EmptySubspaceError:
            pass
    return EnergyCurve(energies, thresholds, eps_base)


def fit_exponential_decay(energies: np.ndarray) -> FitResult:
    """Least-squares fit of E(D') = E_inf + A exp(-beta D') with A, beta >= 0."""
    x = np.arange(1, energies.size + 1, dtype=float)
    ok = np.isfinite(energies)
    x, y = x[ok], energies[ok]
    if y.size == 0:
        return FitResult(np.nan, np.nan, np.nan, np.inf, False)
    if y.size < 3 or np.ptp(y) == 0:
        e_inf = float(y.min()) if np.ptp(y) == 0 else float(y.mean())
        rms = float(np.sqrt(np.mean((y - e_inf) ** 2)))
        return FitResult(e_inf, 0.0, 0.0, rms, True)

    def resid(p):
        return p[0] + p[1] * np.exp(-p[2] * x) - y

    p0 = [float(y.min()), float(np.ptp(y)), 1.0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = least_squares(resid, p0, bounds=([-np.inf, 0, 0], [np.inf, np.inf, np.inf]), x_scale="jac", max_nfev=5000)
    rms = float(np.sqrt(np.mean(res.fun ** 2)))
    return FitResult(float(res.x[0]), float(res.x[1]), float(res.x[2]), rms, bool(res.status > 0) and bool(np.isfinite(rms)))


@dataclass
class SearchTrace:
    eps_values: list[float] = field(default_factory=list)
    fits: list[FitResult] = field(default_factory=list)

    @property
    def any_fit_failed(self) -> bool:
        return any(not f.converged for f in self.fits)


def auto_regularize(pair: KrylovPair, cfg: RegularizationConfig = RegularizationConfig(), trace: SearchTrace | None = None) -> tuple[float, EnergyCurve]:
    """Raise the threshold by ``cfg.factor`` until the curve fits an exponential decay."""
    eps = cfg.eps_init
    while eps < cfg.max_threshold * (1 + 1e-12):
        curve = energy_curve(pair, eps)
        fit = fit_exponential_decay(curve.energies)
        if trace is not None:
            trace.eps_values.append(eps)
            trace.fits.append(fit)
        if fit.converged and fit.rms <= cfg.rms_tol and np.isfinite(curve.energies[0]):
            curve.fit = fit
            curve.accepted = True
            return eps, curve
        eps *= cfg.factor
    raise IllConditionedError("ill-conditioned data: no threshold below the maximum gives a good fit")


@dataclass
class BootstrapResult:
    std: np.ndarray
    n_accepted: int
    n_rejected: int
    rejected_energy: int  # rule (a)
    rejected_fit: int  # rule (b)
    samples: np.ndarray  # accepted energy curves, shape (n_accepted, D)


def check_resample(curve: EnergyCurve | None, trace: SearchTrace) -> str | None:
    """Rejection reason for one bootstrap resample, or None if accepted."""
    if trace.any_fit_failed or curve is None:
        return "fit"
    e = curve.energies
    if np.any(e[1:][np.isfinite(e[1:])] > e[0]):
        return "energy"
    return None


def bootstrap(data, n_resamples: int = 1000, cfg: RegularizationConfig = RegularizationConfig(), seed: int = 0) -> BootstrapResult:
    """Bootstrap the auto-regularized energy curve.

    ``data`` exposes ``resample(rng)`` and ``pair()``; each resample owns a
    derived random stream so the result is independent of evaluation order.
    """
    streams = np.random.SeedSequence(seed).spawn(n_resamples)
    kept, n_energy, n_fit = [], 0, 0
    for ss_ in streams:
        rng = np.random.default_rng(ss_)
        trace = SearchTrace()
        try:
            _, curve = auto_regularize(data.resample(rng).pair(), cfg, trace)
        except IllConditionedError:
            curve = None
        reason = check_resample(curve, trace)
        if reason == "fit":
            n_fit += 1
        elif reason == "energy":
            n_energy += 1
        else:
            kept.append(curve.energies)
    if not kept:
        raise IllConditionedError("no bootstrap resample was accepted")
    samples = np.array(kept)
    return BootstrapResult(np.nanstd(samples, axis=0), len(kept), n_energy + n_fit, n_energy, n_fit, samples)
