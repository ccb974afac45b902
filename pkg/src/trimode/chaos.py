"""Poincare sections, Lyapunov exponents, and fixed-energy phase-space rasters.

Two independent Lyapunov algorithms are provided: the companion-trajectory
reset procedure (finite separation, renormalized along the separation vector
after every reset interval) and the tangent-space scheme that propagates a
deviation vector with the fundamental-matrix equations (exactly linear in the
perturbation).  Both average the per-interval stretching exponents
log(xi(T_r)/xi_0)/T_r over resets after a transient is discarded.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .dynamics import (
    IntegrationError,
    IntegratorConfig,
    _rhs_complex,
    jacobian_real,
    real_to_zeta,
    zeta_to_real,
)
from .model import (
    CanonicalCoords,
    ClassicalState,
    EnergyShellSpec,
    ModelParams,
    canonical_to_zeta,
    mf_energy_zeta_array,
    solve_m_for_energy,
    zeta_to_canonical,
)

#: looser tolerances are enough for exponent statistics; conservation is still
#: monitored by the shared-step co-integration of each pair
_LYAP_INTEGRATOR = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12)


@dataclass(frozen=True)
class LyapunovConfig:
    """Procedure parameters for both Lyapunov estimators."""

    xi0: float = 1e-8
    t_reset: float = 1.0
    t_min: float = 100.0
    t_total: float = 2000.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.xi0 < 0.1:
            raise ValueError("xi0 must be a small positive separation")
        if not self.t_min < self.t_total:
            raise ValueError("t_min must be smaller than t_total")
        if (self.t_total - self.t_min) / self.t_reset < 10:
            raise ValueError(
                "fewer than 10 reset intervals between t_min and t_total; "
                "increase t_total or decrease t_reset"
            )

    @property
    def n_intervals(self) -> int:
        return int(round(self.t_total / self.t_reset))


@dataclass(frozen=True)
class LyapunovEstimate:
    lam: float
    std_error: float
    method: str

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("std_error must be non-negative")

    def agrees_with(self, other: "LyapunovEstimate", n_sigma: float = 2.0) -> bool:
        """True when the two estimates overlap within combined error bars."""
        return abs(self.lam - other.lam) <= n_sigma * (self.std_error + other.std_error)


@dataclass(frozen=True)
class PoincareSection:
    """Crossings of trajectories with the theta_m = 0 plane.

    ``crossings[k]`` is an (n_k, 2) array of (rho0, theta_s) points for the
    k-th initial condition.  ``energy`` is the common shell energy, or None
    when the initial conditions have different energies (each trajectory is
    then checked against its own conserved energy, stored in
    ``trajectory_energies``).
    """

    energy: Optional[float]
    crossings: List[np.ndarray]
    crossing_direction: str
    trajectory_energies: np.ndarray
    max_theta_m_residual: float
    max_energy_residual: float

    def occupancy_area(self, bins: int = 100, trajectory: Optional[int] = None) -> float:
        """Fraction of (rho0, theta_s) bins visited, times the domain area.

        Measured on a ``bins x bins`` grid over rho0 in [0, 1] and theta_s in
        (-2*pi, 2*pi]; used to compare the covering of a chaotic section with
        the curve of an integrable one.
        """
        pts = (
            np.vstack([c for c in self.crossings if len(c)])
            if trajectory is None
            else self.crossings[trajectory]
        )
        if len(pts) == 0:
            return 0.0
        i = np.clip((pts[:, 0] * bins).astype(int), 0, bins - 1)
        j = np.clip(((pts[:, 1] + 2 * np.pi) / (4 * np.pi) * bins).astype(int), 0, bins - 1)
        occupied = len(set(zip(i.tolist(), j.tolist())))
        return occupied / (bins * bins)


@dataclass(frozen=True)
class LyapunovMap:
    """Raster of Lyapunov estimates on an energy shell; NaN marks empty cells."""

    shell: EnergyShellSpec
    lam: np.ndarray
    std_error: np.ndarray
    m_values: np.ndarray
    method: str

    def __post_init__(self):
        if self.lam.shape != self.shell.grid:
            raise ValueError("grid shape mismatch")

    @property
    def populated(self) -> np.ndarray:
        return ~np.isnan(self.lam)

    def estimate(self, i: int, j: int) -> Optional[LyapunovEstimate]:
        if np.isnan(self.lam[i, j]):
            return None
        return LyapunovEstimate(float(self.lam[i, j]), float(self.std_error[i, j]), self.method)


def poincare_section(
    initials,
    t_end: float,
    params: ModelParams,
    *,
    direction: str = "both",
    cfg: Optional[IntegratorConfig] = None,
) -> PoincareSection:
    """Record crossings of theta_m = 0, projected to (rho0, theta_s).

    theta_m == 0 (mod 2*pi) is equivalent to w = zeta_1 conj(zeta_-1) being
    real and positive, so sign changes of Im(w) with Re(w) > 0 locate the
    crossings without tracking a continuous angle lift (crossings through
    theta_m = pi have Re(w) < 0 and are rejected).  Crossing times are
    refined on the integrator's dense output; every accepted crossing
    satisfies |theta_m| < 1e-8 and conserves the trajectory's energy to 1e-6
    (both residuals are recorded).  Trajectories that never cross (fixed
    points, empty side modes) produce a warning and an empty crossing list.
    """
    if direction not in ("both", "positive", "negative"):
        raise ValueError(f"unknown crossing direction {direction!r}")
    cfg = cfg or IntegratorConfig()

    def event(t, y):
        z = real_to_zeta(y)
        w = z[0] * np.conj(z[2])
        return w.imag

    event.direction = 0.0

    crossings = []
    energies = []
    max_tm = 0.0
    max_de = 0.0
    for k, state in enumerate(initials):
        zeta0 = state.zeta if isinstance(state, ClassicalState) else np.asarray(state, dtype=complex)
        e0 = float(mf_energy_zeta_array(zeta0, params))
        energies.append(e0)
        sol = solve_ivp(
            lambda t, y: zeta_to_real(_rhs_complex(real_to_zeta(y), params)),
            (0.0, t_end),
            zeta_to_real(zeta0),
            method=cfg.method,
            rtol=cfg.rel_tol,
            atol=cfg.abs_tol,
            events=event,
        )
        if not sol.success:
            raise IntegrationError(sol.message)
        points = []
        for t_ev, y_ev in zip(sol.t_events[0], sol.y_events[0]):
            z = real_to_zeta(y_ev)
            w = z[0] * np.conj(z[2])
            if w.real <= 0.0 or abs(w) < 1e-12:
                continue  # theta_m = pi crossing, or a side mode is empty
            dz = _rhs_complex(z, params)
            wdot = dz[0] * np.conj(z[2]) + z[0] * np.conj(dz[2])
            going_up = wdot.imag > 0.0
            if direction == "positive" and not going_up:
                continue
            if direction == "negative" and going_up:
                continue
            coords = zeta_to_canonical(ClassicalState.from_unnormalized(z))
            points.append((coords.rho0, coords.theta_s))
            max_tm = max(max_tm, abs(coords.theta_m))
            max_de = max(max_de, abs(float(mf_energy_zeta_array(z, params)) - e0))
        if not points:
            warnings.warn(f"trajectory {k} produced no section crossings", stacklevel=2)
        crossings.append(np.array(points).reshape(-1, 2))

    energies = np.asarray(energies)
    common = float(energies[0]) if np.all(np.abs(energies - energies[0]) < 1e-9) else None
    return PoincareSection(
        energy=common,
        crossings=crossings,
        crossing_direction=direction,
        trajectory_energies=energies,
        max_theta_m_residual=max_tm,
        max_energy_residual=max_de,
    )


def _tangent_directions(states6: np.ndarray, rng) -> np.ndarray:
    """Random unit vectors orthogonal to the norm-constraint gradient.

    The constraint |zeta|^2 = 1 has gradient 2*y in the real embedding, so
    directions are drawn isotropically on the 5-sphere tangent to it; almost
    every such direction converges to the largest exponent.
    """
    u = rng.normal(size=states6.shape)
    proj = np.sum(u * states6, axis=-1, keepdims=True) / np.sum(states6 * states6, axis=-1, keepdims=True)
    u -= proj * states6
    return u / np.linalg.norm(u, axis=-1, keepdims=True)


def _collect(lam_samples: np.ndarray, cfg: LyapunovConfig):
    """Average interval exponents recorded after the transient t_min."""
    times = (np.arange(1, cfg.n_intervals + 1)) * cfg.t_reset
    kept = lam_samples[times > cfg.t_min]
    lam = kept.mean(axis=0)
    std_error = kept.std(axis=0, ddof=1) / math.sqrt(kept.shape[0])
    return lam, std_error


def _benettin_reset_batch(zetas0: np.ndarray, cfg: LyapunovConfig, params: ModelParams, rngs):
    """Companion-trajectory reset procedure for a batch of initial states."""
    n = zetas0.shape[0]
    y1 = zeta_to_real(zetas0)
    u = np.stack([_tangent_directions(y1[i], rng) for i, rng in enumerate(rngs)])
    state = np.concatenate([y1, y1 + cfg.xi0 * u], axis=0)  # (2n, 6): trajectories then companions

    icfg = _LYAP_INTEGRATOR

    def rhs(t, y):
        zeta = real_to_zeta(y.reshape(2 * n, 6))
        return zeta_to_real(_rhs_complex(zeta, params)).ravel()

    lam_samples = np.empty((cfg.n_intervals, n))
    t = 0.0
    y = state.ravel()
    for k in range(cfg.n_intervals):
        sol = solve_ivp(
            rhs, (t, t + cfg.t_reset), y, method=icfg.method, rtol=icfg.rel_tol, atol=icfg.abs_tol
        )
        if not sol.success:
            raise IntegrationError(sol.message)
        y = sol.y[:, -1]
        t += cfg.t_reset
        pair = y.reshape(2 * n, 6)
        delta = pair[n:] - pair[:n]
        xi = np.linalg.norm(delta, axis=1)
        lam_samples[k] = np.log(xi / cfg.xi0) / cfg.t_reset
        pair[n:] = pair[:n] + (cfg.xi0 / xi)[:, None] * delta
        y = pair.ravel()
    return _collect(lam_samples, cfg)


def _benettin_tangent_batch(zetas0: np.ndarray, cfg: LyapunovConfig, params: ModelParams, rngs):
    """Tangent-space (fundamental matrix) procedure for a batch of states.

    Evolves a unit deviation vector with xi' = D_zeta F(zeta(t)) xi, i.e. the
    action of the fundamental matrix on a single random direction, and
    renormalizes it at every reset (QR-free single-vector scheme).  The
    deviation is renormalized early whenever it grows past 1e6 so the linear
    system cannot overflow for large reset times.
    """
    n = zetas0.shape[0]
    y1 = zeta_to_real(zetas0)
    xi = np.stack([_tangent_directions(y1[i], rng) for i, rng in enumerate(rngs)])

    icfg = _LYAP_INTEGRATOR
    overflow_guard = 1e6

    def rhs(t, y):
        ys = y[: 6 * n].reshape(n, 6)
        vs = y[6 * n :].reshape(n, 6)
        zeta = real_to_zeta(ys)
        dy = zeta_to_real(_rhs_complex(zeta, params))
        dv = np.einsum("nij,nj->ni", jacobian_real(zeta, params), vs)
        return np.concatenate([dy.ravel(), dv.ravel()])

    def too_large(t, y):
        vs = y[6 * n :].reshape(n, 6)
        return float(np.max(np.sum(vs * vs, axis=1)) - overflow_guard**2)

    too_large.terminal = True
    too_large.direction = 1.0

    lam_samples = np.empty((cfg.n_intervals, n))
    t = 0.0
    carried_log = np.zeros(n)
    y = np.concatenate([y1.ravel(), xi.ravel()])
    for k in range(cfg.n_intervals):
        t_stop = t + cfg.t_reset
        while True:
            sol = solve_ivp(
                rhs,
                (t, t_stop),
                y,
                method=icfg.method,
                rtol=icfg.rel_tol,
                atol=icfg.abs_tol,
                events=too_large,
            )
            if not sol.success:
                raise IntegrationError(sol.message)
            y = sol.y[:, -1]
            t = sol.t[-1]
            if sol.status != 1:
                break
            # early renormalization: fold the accumulated growth into the log
            vs = y[6 * n :].reshape(n, 6)
            norms = np.linalg.norm(vs, axis=1)
            carried_log += np.log(norms)
            y[6 * n :] = (vs / norms[:, None]).ravel()
        vs = y[6 * n :].reshape(n, 6)
        norms = np.linalg.norm(vs, axis=1)
        lam_samples[k] = (carried_log + np.log(norms)) / cfg.t_reset
        carried_log[:] = 0.0
        y[6 * n :] = (vs / norms[:, None]).ravel()
    return _collect(lam_samples, cfg)


def _single_rng(cfg: LyapunovConfig):
    return [np.random.default_rng(np.random.SeedSequence([cfg.seed]))]


def lyapunov_reset(state: ClassicalState, cfg: LyapunovConfig, params: ModelParams) -> LyapunovEstimate:
    """Largest Lyapunov exponent from the companion-trajectory reset procedure.

    A companion is placed at random distance xi0, both trajectories are
    co-integrated, and after every reset interval the current exponent
    log(xi(T_r)/xi0)/T_r is recorded and the companion is pulled back to
    distance xi0 along the separation vector.  The estimate is the mean over
    intervals past t_min; its standard error is reported.
    """
    lam, se = _benettin_reset_batch(state.zeta[None, :], cfg, params, _single_rng(cfg))
    return LyapunovEstimate(float(lam[0]), float(se[0]), "reset")


def lyapunov_fundamental(
    state: ClassicalState, cfg: LyapunovConfig, params: ModelParams
) -> LyapunovEstimate:
    """Largest Lyapunov exponent from the fundamental-matrix (tangent) flow."""
    lam, se = _benettin_tangent_batch(state.zeta[None, :], cfg, params, _single_rng(cfg))
    return LyapunovEstimate(float(lam[0]), float(se[0]), "fundamental")


def lyapunov_map(
    shell: EnergyShellSpec,
    cfg: LyapunovConfig,
    params: ModelParams,
    *,
    method: str = "reset",
) -> LyapunovMap:
    """Lyapunov exponents over a fixed-energy raster in (rho0, theta_s).

    Each cell is placed on the shell by solving for the magnetization m that
    matches the shell energy; cells with no such m stay empty (NaN) — that is
    data, not an error.  Populated cells are batched through one co-integrated
    system; companion directions still use deterministic per-cell seeds
    derived from (seed, i, j).
    """
    if method not in ("reset", "fundamental"):
        raise ValueError(f"unknown method {method!r}")
    n_rho0, n_theta = shell.grid
    lam = np.full(shell.grid, np.nan)
    std_error = np.full(shell.grid, np.nan)
    m_values = np.full(shell.grid, np.nan)

    cells = []
    zetas = []
    rngs = []
    for i, rho0 in enumerate(shell.rho0_values()):
        for j, theta_s in enumerate(shell.theta_s_values()):
            m = solve_m_for_energy(rho0, theta_s, shell.theta_m_fixed, shell.energy, params)
            if m is None:
                continue
            m_values[i, j] = m
            cells.append((i, j))
            zetas.append(canonical_to_zeta(CanonicalCoords(rho0, theta_s, m, shell.theta_m_fixed)).zeta)
            rngs.append(np.random.default_rng(np.random.SeedSequence([cfg.seed, i, j])))
    if cells:
        batch = np.asarray(zetas)
        runner = _benettin_reset_batch if method == "reset" else _benettin_tangent_batch
        lam_flat, se_flat = runner(batch, cfg, params, rngs)
        for (i, j), value, err in zip(cells, lam_flat, se_flat):
            lam[i, j] = value
            std_error[i, j] = err
    return LyapunovMap(shell=shell, lam=lam, std_error=std_error, m_values=m_values, method=method)
