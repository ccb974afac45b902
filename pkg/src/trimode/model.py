"""Couplings, state representations, coordinate transforms, and the mean-field energy.

Conventions used throughout the package:

* mode order is ``(+1, 0, -1)`` for every length-3 array,
* energies are measured in units of the fixed collective coupling ``gn``,
  times in its inverse (``hbar = 1``),
* the global phase of a classical field is fixed by choosing the mode-0
  amplitude real and non-negative whenever a state is built from canonical
  coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

TWO_PI = 2.0 * math.pi
FOUR_PI = 4.0 * math.pi

#: occupations |zeta_i|^2 below this are treated as unpopulated (phase undefined)
DEGENERATE_RHO = 1e-12

#: tolerance on the unit-norm invariant of classical states
NORM_TOL = 1e-10

SQRT2 = math.sqrt(2.0)


def wrap_angle(theta):
    """Wrap an angle (scalar or array) to the interval (-pi, pi]."""
    return np.pi - (np.pi - np.asarray(theta)) % TWO_PI


def wrap_spinor_angle(theta):
    """Wrap the spinor phase to (-2*pi, 2*pi].

    The coherent coupling between the side modes and mode 0 enters through
    half-angle phases, which makes the physical state 4*pi-periodic (not
    2*pi-periodic) in the spinor phase once the Larmor phase representative
    is fixed.
    """
    return TWO_PI - (TWO_PI - np.asarray(theta)) % FOUR_PI


@dataclass(frozen=True)
class ModelParams:
    """Couplings and atom number; the single source of Hamiltonian truth.

    ``gn`` is the collective interaction energy (kept fixed in the classical
    limit); the per-pair quantum coupling is always derived as
    ``g = gn / n_atoms`` and never stored separately.
    """

    gn: float = 1.0
    q: float = 1.0
    r: float = 0.0
    n_atoms: int = 100

    def __post_init__(self):
        for name in ("gn", "q", "r"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        n = int(self.n_atoms)
        if n < 1:
            raise ValueError(f"n_atoms must be >= 1, got {n}")
        object.__setattr__(self, "n_atoms", n)

    @property
    def g(self) -> float:
        """Quantum coupling per pair of atoms."""
        return self.gn / self.n_atoms

    def reversed(self) -> "ModelParams":
        """Parameters generating the time-reversed flow (all couplings negated)."""
        return ModelParams(-self.gn, -self.q, -self.r, self.n_atoms)


@dataclass(frozen=True)
class ClassicalState:
    """Three normalized complex mean-field amplitudes, order (+1, 0, -1)."""

    zeta: np.ndarray

    def __post_init__(self):
        z = np.array(self.zeta, dtype=complex)
        if z.shape != (3,):
            raise ValueError(f"zeta must have shape (3,), got {z.shape}")
        norm_sq = float(np.sum(np.abs(z) ** 2))
        if abs(norm_sq - 1.0) > NORM_TOL:
            raise ValueError(f"state not normalized: |zeta|^2 = {norm_sq!r}")
        z.flags.writeable = False
        object.__setattr__(self, "zeta", z)

    @classmethod
    def from_unnormalized(cls, zeta) -> "ClassicalState":
        z = np.asarray(zeta, dtype=complex)
        norm = np.linalg.norm(z)
        if norm == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return cls(z / norm)

    @property
    def rho(self) -> np.ndarray:
        """Mode occupations |zeta_i|^2."""
        return np.abs(self.zeta) ** 2

    @property
    def rho0(self) -> float:
        return float(abs(self.zeta[1]) ** 2)

    @property
    def magnetization(self) -> float:
        """Normalized population imbalance rho_+1 - rho_-1."""
        r = self.rho
        return float(r[0] - r[2])


@dataclass(frozen=True)
class CanonicalCoords:
    """The four canonical variables (rho0, theta_s, m, theta_m).

    ``theta_m`` is stored in (-pi, pi] and ``theta_s`` in (-2*pi, 2*pi]; the
    two are wrapped jointly so that the represented field configuration is
    preserved (shifting both by 2*pi is a gauge identity, shifting only one
    is not).  ``theta_s_defined`` / ``theta_m_defined`` flag phases that are
    undefined because a mode is unpopulated; such phases are reported as 0.
    """

    rho0: float
    theta_s: float
    m: float
    theta_m: float
    theta_s_defined: bool = True
    theta_m_defined: bool = True

    def __post_init__(self):
        rho0 = float(self.rho0)
        m = float(self.m)
        if not -1e-12 <= rho0 <= 1.0 + 1e-12:
            raise ValueError(f"rho0 must lie in [0, 1], got {rho0!r}")
        rho0 = min(max(rho0, 0.0), 1.0)
        side = 1.0 - rho0
        if abs(m) > side + 1e-10:
            raise ValueError(
                f"|m| = {abs(m)!r} exceeds 1 - rho0 = {side!r}: "
                "a side-mode population would be negative"
            )
        m = min(max(m, -side), side)

        theta_m_raw = float(self.theta_m)
        theta_m = float(wrap_angle(theta_m_raw))
        # Joint wrap: theta_m picked up 2*pi*b, so theta_s must pick up
        # 2*pi*a with a = b (mod 2) to stay in the same gauge class.
        b = round((theta_m - theta_m_raw) / TWO_PI)
        theta_s = float(wrap_spinor_angle(float(self.theta_s) + TWO_PI * (b % 2)))

        object.__setattr__(self, "rho0", rho0)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "theta_m", theta_m)
        object.__setattr__(self, "theta_s", theta_s)


@dataclass(frozen=True)
class EnergyShellSpec:
    """A fixed-energy raster in the (rho0, theta_s) plane at fixed theta_m."""

    energy: float
    grid: tuple
    theta_m_fixed: float = 0.0
    theta_s_span: tuple = (-TWO_PI, TWO_PI)

    def __post_init__(self):
        if not math.isfinite(float(self.energy)):
            raise ValueError("shell energy must be finite")
        n_rho0, n_theta = (int(v) for v in self.grid)
        if n_rho0 < 2 or n_theta < 2:
            raise ValueError(f"grid dims must be >= 2, got {self.grid!r}")
        object.__setattr__(self, "energy", float(self.energy))
        object.__setattr__(self, "grid", (n_rho0, n_theta))
        lo, hi = (float(v) for v in self.theta_s_span)
        if not hi > lo:
            raise ValueError("theta_s_span must be increasing")
        object.__setattr__(self, "theta_s_span", (lo, hi))

    def rho0_values(self) -> np.ndarray:
        """Cell-center rho0 values (avoids the degenerate edges 0 and 1)."""
        n = self.grid[0]
        return (np.arange(n) + 0.5) / n

    def theta_s_values(self) -> np.ndarray:
        lo, hi = self.theta_s_span
        n = self.grid[1]
        return lo + (np.arange(n) + 0.5) * (hi - lo) / n


def canonical_to_zeta(coords: CanonicalCoords) -> ClassicalState:
    """Build the classical field from canonical coordinates.

    zeta_+1 = sqrt((1 - rho0 + m)/2) e^{i(theta_s + theta_m)/2},
    zeta_0  = sqrt(rho0)  (real, >= 0),
    zeta_-1 = sqrt((1 - rho0 - m)/2) e^{i(theta_s - theta_m)/2}.
    """
    rho_plus = 0.5 * (1.0 - coords.rho0 + coords.m)
    rho_minus = 0.5 * (1.0 - coords.rho0 - coords.m)
    # constructor has already validated the domain; clip rounding dust
    rho_plus = max(rho_plus, 0.0)
    rho_minus = max(rho_minus, 0.0)
    phase_plus = 0.5 * (coords.theta_s + coords.theta_m)
    phase_minus = 0.5 * (coords.theta_s - coords.theta_m)
    zeta = np.array(
        [
            math.sqrt(rho_plus) * np.exp(1j * phase_plus),
            math.sqrt(coords.rho0),
            math.sqrt(rho_minus) * np.exp(1j * phase_minus),
        ]
    )
    norm = np.linalg.norm(zeta)
    return ClassicalState(zeta / norm)


def zeta_to_canonical(state: ClassicalState) -> CanonicalCoords:
    """Invert :func:`canonical_to_zeta` up to the global phase.

    Phases of unpopulated modes (occupation below ``DEGENERATE_RHO``) are
    undefined; the corresponding canonical phases are reported as 0 with the
    ``*_defined`` flag cleared instead of raising, so raster codes survive
    boundary points.
    """
    z = state.zeta
    rho = np.abs(z) ** 2
    rho0 = float(rho[1])
    m = float(rho[0] - rho[2])

    sides_ok = rho[0] >= DEGENERATE_RHO and rho[2] >= DEGENERATE_RHO
    theta_m_defined = bool(sides_ok)
    theta_s_defined = bool(sides_ok and rho[1] >= DEGENERATE_RHO)

    if not theta_m_defined:
        return CanonicalCoords(rho0, 0.0, m, 0.0, False, False)

    th_plus = float(np.angle(z[0]))
    th_minus = float(np.angle(z[2]))
    th_zero = float(np.angle(z[1])) if theta_s_defined else 0.0
    theta_m = th_plus - th_minus
    theta_s = th_plus + th_minus - 2.0 * th_zero if theta_s_defined else 0.0
    return CanonicalCoords(rho0, theta_s, m, theta_m, theta_s_defined, True)


def mf_energy_zeta_array(zetas, params: ModelParams):
    """Mean-field energy for raw (..., 3) complex amplitudes; no norm check."""
    zetas = np.asarray(zetas, dtype=complex)
    z1 = zetas[..., 0]
    z0 = zetas[..., 1]
    zm = zetas[..., 2]
    rho1 = z1.real**2 + z1.imag**2
    rho0 = z0.real**2 + z0.imag**2
    rhom = zm.real**2 + zm.imag**2
    m = rho1 - rhom
    pair = 2.0 * (np.conj(z0) ** 2 * z1 * zm).real
    rf = 2.0 * (np.conj(z0) * (z1 + zm)).real
    out = (
        params.gn * (pair + rho0 * (rho1 + rhom) + 0.5 * m * m)
        + params.q * (rho1 + rhom)
        + params.r / SQRT2 * rf
    )
    return out if out.ndim else float(out)


def mf_energy(state: ClassicalState, params: ModelParams) -> float:
    """Mean-field energy of a classical field (zeta form)."""
    return float(mf_energy_zeta_array(state.zeta, params))


def mf_energy_canonical(rho0, theta_s, m, theta_m, params: ModelParams):
    """Mean-field energy in canonical coordinates; broadcasts over array input.

    Equivalent to :func:`mf_energy` after :func:`canonical_to_zeta` wherever
    all phases are defined.
    """
    rho0 = np.asarray(rho0, dtype=float)
    m = np.asarray(m, dtype=float)
    side = 1.0 - rho0
    disc = np.maximum(side * side - m * m, 0.0)
    rho_plus = np.maximum(0.5 * (side + m), 0.0)
    rho_minus = np.maximum(0.5 * (side - m), 0.0)
    interaction = rho0 * (side + np.sqrt(disc) * np.cos(theta_s))
    rf = np.sqrt(rho0) * (
        np.sqrt(rho_plus) * np.cos(0.5 * (theta_s + theta_m))
        + np.sqrt(rho_minus) * np.cos(0.5 * (theta_s - theta_m))
    )
    out = (
        params.gn * (interaction + 0.5 * m * m)
        + params.q * side
        + params.r * SQRT2 * rf
    )
    return out if out.ndim else float(out)


def solve_m_for_energy(
    rho0: float,
    theta_s: float,
    theta_m: float,
    target_energy: float,
    params: ModelParams,
    *,
    grid_points: int = 4001,
    tol: float = 1e-10,
):
    """Find m in [-(1 - rho0), 1 - rho0] with H_mf = target_energy, or None.

    Roots are located by bracketing on a dense m grid and refined with
    Brent's method.  When several roots exist the one with smallest |m| is
    returned, ties broken toward +m (deterministic rasters).  ``None`` means
    the point lies outside the energy shell, which is a valid outcome.
    """
    if not math.isfinite(float(target_energy)):
        raise ValueError("target_energy must be finite")
    if not 0.0 <= rho0 <= 1.0:
        raise ValueError(f"rho0 must lie in [0, 1], got {rho0!r}")

    m_max = 1.0 - rho0

    def gap(m):
        return mf_energy_canonical(rho0, theta_s, m, theta_m, params) - target_energy

    if m_max < 1e-15:
        return 0.0 if abs(gap(0.0)) < tol else None

    grid = np.linspace(-m_max, m_max, grid_points)
    values = gap(grid)

    roots = [float(g) for g, v in zip(grid, values) if v == 0.0]
    sign_change = np.nonzero(np.signbit(values[:-1]) != np.signbit(values[1:]))[0]
    for k in sign_change:
        if values[k] == 0.0 or values[k + 1] == 0.0:
            continue
        roots.append(float(brentq(gap, grid[k], grid[k + 1], xtol=1e-15)))

    roots = [m for m in roots if abs(gap(m)) < tol]
    if not roots:
        return None
    # smallest |m|, tie toward +m
    return min(roots, key=lambda m: (abs(m), -m))
