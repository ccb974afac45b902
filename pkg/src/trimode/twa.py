"""Truncated Wigner approximation: sampling, observables, semi-classical OTOCs.

The Wigner function of the reference state with all atoms in mode 0 is
approximated by Gaussian side-mode amplitudes (x + iy)/2 with x, y drawn at
standard deviation 1/sqrt(N) — half a quantum per side mode — while mode 0
carries the normalization remainder.  Arbitrary coherent centers are reached
by rotating the samples with a unitary that maps (0, 1, 0) onto the center.
Squared commutators follow from the phase-space average of the squared
Poisson bracket, evaluated per sample from the stability of rho_0(t) against
a shift of Im zeta_0(0) in the gauge where zeta_0(0) is real.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import IntegratorConfig, integrate_ensemble, integrate_ensemble_variational
from .model import ClassicalState, ModelParams
from .quantum import OtocSeries

_DERIVATIVE_METHODS = ("fundamental_matrix", "two_trajectory")


@dataclass(frozen=True)
class TwaConfig:
    """Sampling and derivative-evaluation choices for TWA runs."""

    n_samples: int = 1000
    hbar_eff: Optional[float] = None  # None -> 1/N exactly
    seed: int = 0
    derivative: str = "fundamental_matrix"
    d0: float = 1e-6
    n_bootstrap: int = 200

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if not 1e-10 < self.d0 < 1e-3:
            raise ValueError("d0 must lie in (1e-10, 1e-3)")
        if self.derivative not in _DERIVATIVE_METHODS:
            raise ValueError(f"derivative must be one of {_DERIVATIVE_METHODS}")

    def effective_hbar(self, n_atoms: int) -> float:
        return self.hbar_eff if self.hbar_eff is not None else 1.0 / n_atoms


@dataclass(frozen=True)
class WignerEnsemble:
    """Normalized phase-space samples of a coherent state's Wigner function."""

    center: np.ndarray
    samples: np.ndarray
    n_atoms: int
    seed: int

    def __post_init__(self):
        norms = np.sum(np.abs(self.samples) ** 2, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("ensemble members must be normalized")


def rotation_to(center: np.ndarray) -> np.ndarray:
    """A 3x3 unitary U with U (0, 1, 0)^T = center.

    Built as a global phase times two complex Givens rotations, first mixing
    mode 0 with mode +1, then with mode -1.  Any unitary with this property
    works (coherent-state Wigner functions transform covariantly); this one
    is deterministic and smooth away from |center_+1| = 1.
    """
    c = np.asarray(center, dtype=complex)
    if abs(np.sum(np.abs(c) ** 2) - 1.0) > 1e-10:
        raise ValueError("center must be normalized")
    global_phase = np.exp(1j * np.angle(c[1])) if abs(c[1]) > 0 else 1.0
    cp = c / global_phase  # cp[1] real and >= 0

    sin_a = min(abs(cp[0]), 1.0)
    cos_a = math.sqrt(max(1.0 - sin_a**2, 0.0))
    phase_p = np.exp(1j * np.angle(cp[0])) if abs(cp[0]) > 0 else 1.0
    # maps e0 -> sin_a phase_p e_plus + cos_a e0
    g1 = np.array(
        [
            [cos_a * phase_p, sin_a * phase_p, 0.0],
            [-sin_a, cos_a, 0.0],
            [0.0, 0.0, 1.0],
        ],
        dtype=complex,
    )

    if cos_a > 1e-15:
        sin_b = min(abs(cp[2]) / cos_a, 1.0)
        cos_b = max(cp[1].real, 0.0) / cos_a
        scale = math.hypot(sin_b, cos_b)
        sin_b /= scale
        cos_b /= scale
        phase_m = np.exp(1j * np.angle(cp[2])) if abs(cp[2]) > 0 else 1.0
    else:
        sin_b, cos_b, phase_m = 0.0, 1.0, 1.0
    # maps e0 -> cos_b e0 + sin_b phase_m e_minus, leaves e_plus alone
    g2 = np.array(
        [
            [1.0, 0.0, 0.0],
            [0.0, cos_b, -sin_b * np.conj(phase_m)],
            [0.0, sin_b * phase_m, cos_b],
        ],
        dtype=complex,
    )

    return global_phase * (g2 @ g1)


def sample_wigner(center, n_atoms: int, cfg: TwaConfig) -> WignerEnsemble:
    """Draw the Gaussian Wigner ensemble around a coherent center.

    Side modes get independent real/imaginary components of width
    1/(2 sqrt N) (so N <|zeta_side|^2> = 1/2); mode 0 is fixed by
    normalization.  Draws that would leave mode 0 unpopulated are redrawn
    (exponentially rare for N >> 1).  The whole ensemble is then rotated to
    the requested center.
    """
    center = center.zeta if isinstance(center, ClassicalState) else np.asarray(center, dtype=complex)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    n = cfg.n_samples
    samples = np.empty((n, 3), dtype=complex)
    todo = np.arange(n)
    while len(todo):
        draws = rng.normal(scale=1.0 / math.sqrt(n_atoms), size=(len(todo), 4))
        zp = (draws[:, 0] + 1j * draws[:, 1]) / 2.0
        zm = (draws[:, 2] + 1j * draws[:, 3]) / 2.0
        side = np.abs(zp) ** 2 + np.abs(zm) ** 2
        ok = side < 1.0
        rows = todo[ok]
        samples[rows, 0] = zp[ok]
        samples[rows, 1] = np.sqrt(1.0 - side[ok])
        samples[rows, 2] = zm[ok]
        todo = todo[~ok]
    u = rotation_to(center)
    samples = samples @ u.T
    # kill rounding dust so the norm invariant is exact
    samples /= np.sqrt(np.sum(np.abs(samples) ** 2, axis=1))[:, None]
    return WignerEnsemble(center=center, samples=samples, n_atoms=n_atoms, seed=cfg.seed)


@dataclass(frozen=True)
class TwaObservableSeries:
    """Ensemble mean and standard deviation of a mode occupation."""

    times: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    mean_stderr: np.ndarray
    label: str


_MODE_INDEX = {"n1": 0, "n0": 1, "nm1": 2}


def twa_observable(
    center,
    n_atoms: int,
    label: str,
    times,
    cfg: TwaConfig,
    params: ModelParams,
    *,
    integrator: Optional[IntegratorConfig] = None,
) -> TwaObservableSeries:
    """TWA expectation value and standard deviation of a number operator.

    Classical occupations estimate symmetrically ordered moments, so the
    Weyl corrections <N_i> = N <rho_i>_W - 1/2 and
    <N_i^2> = N^2 <rho_i^2>_W - N <rho_i>_W are applied.
    """
    if label not in _MODE_INDEX:
        raise ValueError(f"unknown observable label {label!r}; valid: {sorted(_MODE_INDEX)}")
    mode = _MODE_INDEX[label]
    times = np.asarray(times, dtype=float)
    ens = sample_wigner(center, n_atoms, cfg)
    integrator = integrator or IntegratorConfig()
    zetas = integrate_ensemble(ens.samples, times[-1], integrator, params, times)
    rho = np.abs(zetas[:, :, mode]) ** 2  # (nt, n_samples)
    first = n_atoms * rho.mean(axis=1)
    second = n_atoms**2 * (rho**2).mean(axis=1)
    mean = first - 0.5
    var = second - first - mean**2
    std = np.sqrt(np.maximum(var, 0.0))
    stderr = n_atoms * rho.std(axis=1, ddof=1) / math.sqrt(cfg.n_samples)
    return TwaObservableSeries(times=times, mean=mean, std=std, mean_stderr=stderr, label=label)


def _phase_gauge(samples: np.ndarray) -> np.ndarray:
    """Rotate each sample's global phase so zeta_0 is real and non-negative."""
    phase = np.exp(-1j * np.angle(samples[:, 1]))
    return samples * phase[:, None]


def _derivative_fundamental(samples, times, params, integrator):
    """d rho_0(t) / d Im zeta_0(0) from fundamental-matrix entries.

    Chain rule on rho_0 = x0^2 + y0^2 gives
    2 [ x0(t) Phi_{x0,y0} + y0(t) Phi_{y0,y0} ] with the real-variable
    ordering (x1, y1, x0, y0, xm, ym).
    """
    zetas, phis = integrate_ensemble_variational(samples, integrator, params, times)
    x0 = zetas[:, :, 1].real
    y0 = zetas[:, :, 1].imag
    return 2.0 * (x0 * phis[:, :, 2, 3] + y0 * phis[:, :, 3, 3])


def _derivative_two_trajectory(samples, times, params, integrator, d0):
    """Finite-difference derivative from a co-integrated shifted copy."""
    shifted = samples.copy()
    shifted[:, 1] = shifted[:, 1] + 1j * d0
    stacked = np.concatenate([samples, shifted], axis=0)
    zetas = integrate_ensemble(stacked, times[-1], integrator, params, times)
    n = samples.shape[0]
    rho = np.abs(zetas[:, :n, 1]) ** 2
    rho_shift = np.abs(zetas[:, n:, 1]) ** 2
    return (rho_shift - rho) / d0


def twa_otoc(
    center,
    n_atoms: int,
    times,
    cfg: TwaConfig,
    params: ModelParams,
    *,
    integrator: Optional[IntegratorConfig] = None,
) -> OtocSeries:
    """Semi-classical squared commutator of rho_0 with itself.

    C(t) = hbar_eff^2 < | 2 zeta_0^R(0) d rho_0(t) / d zeta_0^I(0) |^2 >
    over the Wigner ensemble, each sample taken in the gauge where its
    initial zeta_0 is real.  The derivative uses the configured method;
    with ``two_trajectory`` a run at d0/2 is co-propagated and a warning is
    emitted if halving d0 moves C(t) by more than 1% anywhere.
    """
    times = np.asarray(times, dtype=float)
    ens = sample_wigner(center, n_atoms, cfg)
    samples = _phase_gauge(ens.samples)
    integrator = integrator or IntegratorConfig()

    if cfg.derivative == "fundamental_matrix":
        deriv = _derivative_fundamental(samples, times, params, integrator)
    else:
        deriv = _derivative_two_trajectory(samples, times, params, integrator, cfg.d0)
        deriv_half = _derivative_two_trajectory(samples, times, params, integrator, cfg.d0 / 2.0)

    weights = (2.0 * samples[:, 1].real) ** 2  # |2 zeta_0^R(0)|^2 per sample
    hbar = cfg.effective_hbar(n_atoms)
    per_sample = weights[None, :] * deriv**2  # (nt, n_samples)
    values = hbar**2 * per_sample.mean(axis=1)

    if cfg.derivative == "two_trajectory":
        values_half = hbar**2 * (weights[None, :] * deriv_half**2).mean(axis=1)
        # compare only where C carries signal; near t = 0 the finite
        # difference sits on its O(d0) floor and the ratio is meaningless
        finite = np.abs(values) > 1e-8 * float(np.max(values, initial=0.0))
        rel = np.abs(values_half[finite] - values[finite]) / np.abs(values[finite])
        if rel.size and float(rel.max()) > 0.01:
            warnings.warn(
                f"two-trajectory OTOC is d0-sensitive: halving d0 moves C(t) "
                f"by up to {100 * float(rel.max()):.2f}%",
                stacklevel=2,
            )

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x80071]))
    idx = rng.integers(0, cfg.n_samples, size=(cfg.n_bootstrap, cfg.n_samples))
    boot = hbar**2 * per_sample[:, idx].mean(axis=2)  # (nt, n_bootstrap)
    stderr = boot.std(axis=1, ddof=1)

    return OtocSeries(times=times, values=values, v_label="rho0", w_label="rho0", std_error=stderr)


@dataclass(frozen=True)
class GrowthFit:
    """Least-squares line fit to a transformed OTOC window."""

    rate: float
    intercept: float
    residual_rms: float
    window: tuple
    kind: str


def otoc_growth_fit(series: OtocSeries, window) -> GrowthFit:
    """Exponential growth rate from a line fit to log C(t) over a window.

    Returns the rate (inverse time) and the RMS residual of the fit in log
    space.  No claim is made that the rate equals a Lyapunov exponent; the
    specific phase-space derivatives probed by an OTOC need not grow with
    the largest exponent.
    """
    t_lo, t_hi = window
    t, c = series.window(t_lo, t_hi)
    if len(t) < 3:
        raise ValueError("window contains fewer than 3 points")
    if np.any(c <= 0.0):
        raise ValueError("window contains non-positive OTOC values")
    log_c = np.log(c)
    slope, intercept = np.polyfit(t, log_c, 1)
    residual = float(np.sqrt(np.mean((log_c - (slope * t + intercept)) ** 2)))
    return GrowthFit(float(slope), float(intercept), residual, (t_lo, t_hi), "exponential")


def power_law_fit(series: OtocSeries, window) -> GrowthFit:
    """Best power law C ~ t^p on the same window, fitted in log-log space.

    The residual is measured in log C, the same metric as
    :func:`otoc_growth_fit`, so the two fits are directly comparable.
    """
    t_lo, t_hi = window
    t, c = series.window(t_lo, t_hi)
    if len(t) < 3:
        raise ValueError("window contains fewer than 3 points")
    if np.any(c <= 0.0) or np.any(t <= 0.0):
        raise ValueError("window must have positive times and OTOC values")
    log_t = np.log(t)
    log_c = np.log(c)
    slope, intercept = np.polyfit(log_t, log_c, 1)
    residual = float(np.sqrt(np.mean((log_c - (slope * log_t + intercept)) ** 2)))
    return GrowthFit(float(slope), float(intercept), residual, (t_lo, t_hi), "power_law")


def fit_scale_factor(twa: OtocSeries, reference: OtocSeries, t_max: float) -> float:
    """Least-squares scale a minimizing ||a C_twa - C_ref|| for t <= t_max.

    The TWA carries an overall order-1 factor relative to the exact
    squared commutator (it depends on the state and couplings, not on N);
    comparisons fit this one global number and report it.
    """
    mask = (twa.times <= t_max) & (reference.times <= t_max)
    if not np.allclose(twa.times[mask], reference.times[mask]):
        raise ValueError("series must share a time grid for scale fitting")
    x = twa.values[mask]
    y = reference.values[mask]
    denom = float(np.dot(x, x))
    if denom == 0.0:
        raise ValueError("TWA series vanishes on the window")
    return float(np.dot(x, y) / denom)
