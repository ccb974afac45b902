"""Exact finite-N quantum mechanics for the three-mode model.

Fock basis at fixed atom number, Hamiltonian assembly from ladder-operator
algebra, exchange-parity block diagonalization, spectral time evolution,
coherent states, Husimi grids, squared-commutator series, and the
time-reversal quadratic-response protocol.

The Hilbert space dimension is (N+1)(N+2)/2, so exact diagonalization is
practical for N up to roughly 100; larger requests fail fast with a
resource error instead of thrashing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.special import gammaln

from .model import ClassicalState, EnergyShellSpec, ModelParams

SQRT2 = math.sqrt(2.0)

#: largest matrix dimension accepted by the dense Hermitian solver
DENSE_DIM_CAP = 6000

#: largest Fock basis size constructed by default
BASIS_SIZE_CAP = 200_000


class ResourceLimitError(RuntimeError):
    """A requested object would exceed the configured size caps."""


@dataclass(frozen=True)
class FockBasis:
    """Number states (n_+1, n_0, n_-1) with fixed total N.

    Enumeration is lexicographic in (n_+1, n_0), which fixes a deterministic
    index for every state; ``lookup[n1, n0]`` maps occupations back to the
    basis index (-1 where invalid).
    """

    n_atoms: int
    occupations: np.ndarray
    lookup: np.ndarray

    @property
    def size(self) -> int:
        return self.occupations.shape[0]

    def index(self, n1: int, n0: int, nm1: int) -> int:
        if n1 + n0 + nm1 != self.n_atoms:
            raise ValueError("occupations must sum to n_atoms")
        return int(self.lookup[n1, n0])

    def vacuum_mode0(self) -> "QuantumState":
        """The Fock state |0, N, 0> with every atom in mode 0."""
        amps = np.zeros(self.size, dtype=complex)
        amps[self.index(0, self.n_atoms, 0)] = 1.0
        return QuantumState(self, amps)

    def fock_state(self, n1: int, n0: int, nm1: int) -> "QuantumState":
        amps = np.zeros(self.size, dtype=complex)
        amps[self.index(n1, n0, nm1)] = 1.0
        return QuantumState(self, amps)


def build_basis(n_atoms: int, *, size_cap: int = BASIS_SIZE_CAP) -> FockBasis:
    """Enumerate the Fock basis for ``n_atoms``; size is (N+1)(N+2)/2."""
    if n_atoms < 1:
        raise ValueError("n_atoms must be >= 1")
    size = (n_atoms + 1) * (n_atoms + 2) // 2
    if size > size_cap:
        raise ResourceLimitError(
            f"basis size {size} for N={n_atoms} exceeds the cap {size_cap}"
        )
    occ = []
    for n1 in range(n_atoms + 1):
        for n0 in range(n_atoms + 1 - n1):
            occ.append((n1, n0, n_atoms - n1 - n0))
    occupations = np.array(occ, dtype=np.int64)
    lookup = np.full((n_atoms + 1, n_atoms + 1), -1, dtype=np.int64)
    lookup[occupations[:, 0], occupations[:, 1]] = np.arange(size)
    return FockBasis(n_atoms=n_atoms, occupations=occupations, lookup=lookup)


@dataclass(frozen=True)
class QuantumState:
    basis: FockBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.basis.size,):
            raise ValueError("amplitude vector does not match the basis size")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"state not normalized: |psi| = {norm!r}")
        object.__setattr__(self, "amplitudes", amps)

    def overlap(self, other: "QuantumState") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def expectation(self, operator) -> float:
        return float(np.vdot(self.amplitudes, operator @ self.amplitudes).real)


@dataclass(frozen=True)
class HamiltonianMatrix:
    basis: FockBasis
    matrix: sp.csr_matrix
    params: ModelParams

    def as_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def hermiticity_residual(self) -> float:
        return float(abs(self.matrix - self.matrix.T.conj()).max())


def _hops(basis: FockBasis):
    """Index/amplitude helper: occupations and the lookup table."""
    occ = basis.occupations
    return occ[:, 0], occ[:, 1], occ[:, 2], basis.lookup


def build_hamiltonian(basis: FockBasis, params: ModelParams) -> HamiltonianMatrix:
    """Assemble the second-quantized Hamiltonian in the Fock basis.

    H = g [ (a0^+ a0^+ a1 a-1 + h.c.) + N0 (N1 + N-1) + (N1 - N-1)^2 / 2 ]
        + q (N1 + N-1) + (r / sqrt 2) [ (a1^+ + a-1^+) a0 + h.c. ]

    with g = gn / N.  All couplings are real, so the matrix is real
    symmetric (Hermitian by construction).
    """
    n1, n0, nm1, lookup = _hops(basis)
    g = params.g
    size = basis.size

    rows = [np.arange(size)]
    cols = [np.arange(size)]
    vals = [
        g * (n0 * (n1 + nm1) + 0.5 * (n1 - nm1) ** 2) + params.q * (n1 + nm1).astype(float)
    ]

    def add_hop(dn1, dn0, amplitude):
        t1 = n1 + dn1
        t0 = n0 + dn0
        ok = (t1 >= 0) & (t0 >= 0) & (t1 + t0 <= basis.n_atoms) & (amplitude != 0.0)
        src = np.nonzero(ok)[0]
        dst = lookup[t1[src], t0[src]]
        rows.append(dst)
        cols.append(src)
        vals.append(amplitude[src])

    # spin-changing collisions: a0^+ a0^+ a1 a-1 and its conjugate
    add_hop(-1, +2, g * np.sqrt(n1 * nm1 * (n0 + 1.0) * (n0 + 2.0)))
    add_hop(+1, -2, g * np.sqrt((n1 + 1.0) * (nm1 + 1.0) * n0 * (n0 - 1.0)))
    # rf coupling between mode 0 and each side mode
    rf = params.r / SQRT2
    add_hop(+1, -1, rf * np.sqrt((n1 + 1.0) * n0))
    add_hop(-1, +1, rf * np.sqrt(n1 * (n0 + 1.0)))
    add_hop(0, -1, rf * np.sqrt((nm1 + 1.0) * n0))
    add_hop(0, +1, rf * np.sqrt(nm1 * (n0 + 1.0)))

    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size),
    ).tocsr()
    return HamiltonianMatrix(basis=basis, matrix=matrix, params=params)


_OPERATOR_LABELS = ("rho0", "sz", "sx", "N0", "Sz", "Sx")


def build_operator(basis: FockBasis, label: str) -> sp.csr_matrix:
    """Observable factory.

    Lowercase labels are normalized by N (``rho0`` = N0/N, ``sz`` = Sz/N,
    ``sx`` = Sx/N) so expectation values are comparable across atom numbers;
    capitalized labels (``N0``, ``Sz``, ``Sx``) are the bare operators.
    Sx = [a0^+ (a1 + a-1) + h.c.] / sqrt(2).
    """
    n1, n0, nm1, lookup = _hops(basis)
    size = basis.size
    scale = 1.0 / basis.n_atoms if label in ("rho0", "sz", "sx") else 1.0
    if label in ("rho0", "N0"):
        return sp.diags(scale * n0.astype(float)).tocsr()
    if label in ("sz", "Sz"):
        return sp.diags(scale * (n1 - nm1).astype(float)).tocsr()
    if label in ("sx", "Sx"):
        rows = []
        cols = []
        vals = []

        def add_hop(dn1, dn0, amplitude):
            t1 = n1 + dn1
            t0 = n0 + dn0
            ok = (t1 >= 0) & (t0 >= 0) & (t1 + t0 <= basis.n_atoms) & (amplitude != 0.0)
            src = np.nonzero(ok)[0]
            rows.append(lookup[t1[src], t0[src]])
            cols.append(src)
            vals.append(amplitude[src])

        c = scale / SQRT2
        add_hop(+1, -1, c * np.sqrt((n1 + 1.0) * n0))
        add_hop(-1, +1, c * np.sqrt(n1 * (n0 + 1.0)))
        add_hop(0, -1, c * np.sqrt((nm1 + 1.0) * n0))
        add_hop(0, +1, c * np.sqrt(nm1 * (n0 + 1.0)))
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(size, size),
        ).tocsr()
    raise ValueError(f"unknown operator label {label!r}; valid: {_OPERATOR_LABELS}")


@dataclass(frozen=True)
class ParityBlocks:
    """Exchange-parity (mode +1 <-> mode -1) adapted block form of H.

    The even block is spanned by the self-symmetric states (n_+1 = n_-1) and
    the symmetric pair combinations (|a> + |Pa>)/sqrt(2); the odd block by
    the antisymmetric combinations.  ``pair_plus``/``pair_minus`` index the
    n_+1 > n_-1 member and its mirror.
    """

    basis: FockBasis
    self_indices: np.ndarray
    pair_plus: np.ndarray
    pair_minus: np.ndarray
    block_even: np.ndarray
    block_odd: np.ndarray

    @property
    def dim_even(self) -> int:
        return self.block_even.shape[0]

    @property
    def dim_odd(self) -> int:
        return self.block_odd.shape[0]

    def to_parity(self, vec: np.ndarray):
        """Fock-basis vector(s) -> (even, odd) coordinates.

        Accepts shape (dim,) or (dim, k).
        """
        plus = vec[self.pair_plus]
        minus = vec[self.pair_minus]
        even = np.concatenate([vec[self.self_indices], (plus + minus) / SQRT2], axis=0)
        odd = (plus - minus) / SQRT2
        return even, odd

    def from_parity(self, even: np.ndarray, odd: np.ndarray) -> np.ndarray:
        n_self = len(self.self_indices)
        shape = (self.basis.size,) + even.shape[1:]
        out = np.zeros(shape, dtype=np.result_type(even, odd))
        out[self.self_indices] = even[:n_self]
        sym = even[n_self:] / SQRT2
        anti = odd / SQRT2
        out[self.pair_plus] = sym + anti
        out[self.pair_minus] = sym - anti
        return out

    def off_block_residual(self, hamiltonian: HamiltonianMatrix) -> float:
        """Max |<even| H |odd>|; zero when H commutes with the exchange."""
        s_even, s_odd = self._transforms()
        coupling = s_even.T @ (hamiltonian.matrix @ s_odd)
        return float(abs(coupling).max()) if coupling.nnz else 0.0

    def _transforms(self):
        size = self.basis.size
        n_self = len(self.self_indices)
        n_pair = len(self.pair_plus)
        rows = np.concatenate([self.self_indices, self.pair_plus, self.pair_minus])
        cols = np.concatenate(
            [np.arange(n_self), n_self + np.arange(n_pair), n_self + np.arange(n_pair)]
        )
        vals = np.concatenate([np.ones(n_self), np.full(2 * n_pair, 1.0 / SQRT2)])
        s_even = sp.coo_matrix((vals, (rows, cols)), shape=(size, n_self + n_pair)).tocsr()
        rows = np.concatenate([self.pair_plus, self.pair_minus])
        cols = np.concatenate([np.arange(n_pair), np.arange(n_pair)])
        vals = np.concatenate([np.full(n_pair, 1.0 / SQRT2), np.full(n_pair, -1.0 / SQRT2)])
        s_odd = sp.coo_matrix((vals, (rows, cols)), shape=(size, n_pair)).tocsr()
        return s_even, s_odd


def parity_blocks(hamiltonian: HamiltonianMatrix) -> ParityBlocks:
    """Transform H to the eigenbasis of the label-exchange symmetry."""
    basis = hamiltonian.basis
    occ = basis.occupations
    mirror = basis.lookup[occ[:, 2], occ[:, 1]]
    self_indices = np.nonzero(mirror == np.arange(basis.size))[0]
    pair_plus = np.nonzero(occ[:, 0] > occ[:, 2])[0]
    pair_minus = mirror[pair_plus]

    blocks = ParityBlocks(
        basis=basis,
        self_indices=self_indices,
        pair_plus=pair_plus,
        pair_minus=pair_minus,
        block_even=np.empty((0, 0)),
        block_odd=np.empty((0, 0)),
    )
    s_even, s_odd = blocks._transforms()
    block_even = (s_even.T @ (hamiltonian.matrix @ s_even)).toarray()
    block_odd = (s_odd.T @ (hamiltonian.matrix @ s_odd)).toarray()
    object.__setattr__(blocks, "block_even", block_even)
    object.__setattr__(blocks, "block_odd", block_odd)
    return blocks


@dataclass(frozen=True)
class EigenSystem:
    """Spectra (and optionally eigenvectors) of the parity blocks."""

    blocks: ParityBlocks
    evals_even: np.ndarray
    evals_odd: np.ndarray
    evecs_even: Optional[np.ndarray] = None
    evecs_odd: Optional[np.ndarray] = None

    @property
    def eigenvalues(self) -> np.ndarray:
        """Union of the block spectra, ascending."""
        return np.sort(np.concatenate([self.evals_even, self.evals_odd]))

    @property
    def has_vectors(self) -> bool:
        return self.evecs_even is not None

    def _require_vectors(self):
        if not self.has_vectors:
            raise ValueError("eigenvectors were not requested at diagonalization time")

    def to_eigen(self, vec: np.ndarray):
        """Fock-basis vector(s) -> coefficients in the block eigenbases."""
        self._require_vectors()
        even, odd = self.blocks.to_parity(vec)
        return _real_mat_T_at(self.evecs_even, even), _real_mat_T_at(self.evecs_odd, odd)

    def from_eigen(self, ce: np.ndarray, co: np.ndarray) -> np.ndarray:
        self._require_vectors()
        return self.blocks.from_parity(
            _real_mat_at(self.evecs_even, ce), _real_mat_at(self.evecs_odd, co)
        )

    def evolve_coefficients(self, ce, co, times):
        """Phase evolution e^{-i E t} applied per eigenmode; times may be an array."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        pe = np.exp(-1j * np.outer(self.evals_even, times))
        po = np.exp(-1j * np.outer(self.evals_odd, times))
        return pe * ce[:, None], po * co[:, None]


def _real_mat_at(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Real matrix times possibly-complex vector/matrix without a complex copy of m.

    The real/imaginary parts are copied contiguously first: matmul on a
    strided view bypasses BLAS and is orders of magnitude slower.
    """
    if np.iscomplexobj(x):
        re = m @ np.ascontiguousarray(x.real)
        im = m @ np.ascontiguousarray(x.imag)
        out = np.empty(re.shape, dtype=complex)
        out.real = re
        out.imag = im
        return out
    return m @ x


def _real_mat_T_at(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(x):
        re = m.T @ np.ascontiguousarray(x.real)
        im = m.T @ np.ascontiguousarray(x.imag)
        out = np.empty(re.shape, dtype=complex)
        out.real = re
        out.imag = im
        return out
    return m.T @ x


def diagonalize(blocks: ParityBlocks, *, want_vectors: bool = True) -> EigenSystem:
    """Dense Hermitian diagonalization of each parity block.

    Eigenvalues come back ascending per block; eigenvector matrices are
    orthogonal to solver precision.  Refuses blocks larger than
    ``DENSE_DIM_CAP`` (the model only needs N <~ 100 for exact work).
    """
    for name, block in (("even", blocks.block_even), ("odd", blocks.block_odd)):
        if block.shape[0] > DENSE_DIM_CAP:
            raise ResourceLimitError(
                f"{name} block dimension {block.shape[0]} exceeds the dense cap {DENSE_DIM_CAP}"
            )
    if want_vectors:
        evals_even, evecs_even = scipy.linalg.eigh(blocks.block_even)
        evals_odd, evecs_odd = scipy.linalg.eigh(blocks.block_odd)
        return EigenSystem(blocks, evals_even, evals_odd, evecs_even, evecs_odd)
    evals_even = scipy.linalg.eigvalsh(blocks.block_even)
    evals_odd = scipy.linalg.eigvalsh(blocks.block_odd)
    return EigenSystem(blocks, evals_even, evals_odd)


def diagonalize_model(params: ModelParams, *, want_vectors: bool = True) -> EigenSystem:
    """Convenience chain basis -> Hamiltonian -> parity blocks -> eigensystem."""
    basis = build_basis(params.n_atoms)
    return diagonalize(parity_blocks(build_hamiltonian(basis, params)), want_vectors=want_vectors)


def evolve(state: QuantumState, eig: EigenSystem, t: float) -> QuantumState:
    """Spectral time evolution |psi(t)> = sum_k e^{-i E_k t} |k><k|psi>."""
    ce, co = eig.to_eigen(state.amplitudes)
    pe, po = eig.evolve_coefficients(ce, co, t)
    amps = eig.from_eigen(pe[:, 0], po[:, 0])
    return QuantumState(state.basis, amps / np.linalg.norm(amps))


def evolve_many(state: QuantumState, eig: EigenSystem, times) -> np.ndarray:
    """Evolution at many times at once; returns (dim, n_times)."""
    ce, co = eig.to_eigen(state.amplitudes)
    pe, po = eig.evolve_coefficients(ce, co, times)
    return eig.from_eigen(pe, po)


def coherent_state(center, basis: FockBasis) -> QuantumState:
    """Projective coherent state with amplitudes from the multinomial formula.

    c(n1, n0, nm1) = sqrt(N! / (n1! n0! nm1!)) zeta1^n1 zeta0^n0 zetam^nm1,
    evaluated with log-factorials so N = 100 stays well conditioned.
    """
    zeta = center.zeta if isinstance(center, ClassicalState) else np.asarray(center, dtype=complex)
    occ = basis.occupations
    log_mag, phase = _coherent_log_parts(zeta[None, :], occ, basis.n_atoms)
    amps = np.exp(log_mag[0]) * np.exp(1j * phase[0])
    return QuantumState(basis, amps / np.linalg.norm(amps))


def _coherent_log_parts(zetas: np.ndarray, occ: np.ndarray, n_atoms: int):
    """Log-magnitude and phase of coherent amplitudes for a batch of centers.

    ``zetas`` has shape (k, 3); returns two (k, dim) arrays.  Zero amplitudes
    contribute -inf log-magnitude unless the occupation is zero (0^0 = 1).
    """
    log_coeff = 0.5 * (
        gammaln(n_atoms + 1)
        - gammaln(occ[:, 0] + 1)
        - gammaln(occ[:, 1] + 1)
        - gammaln(occ[:, 2] + 1)
    )
    mags = np.abs(zetas)
    args = np.angle(zetas)
    with np.errstate(divide="ignore", invalid="ignore"):
        logm = np.log(mags)
        # n * log|zeta| with the 0 * (-inf) -> 0 convention
        terms = occ.astype(float)[None, :, :] * logm[:, None, :]
    occf = occ.astype(float)
    terms = np.where(occf[None, :, :] == 0.0, 0.0, terms)
    log_mag = log_coeff[None, :] + terms.sum(axis=2)
    phase = (occf[None, :, :] * args[:, None, :]).sum(axis=2)
    return log_mag, phase


@dataclass(frozen=True)
class HusimiGrid:
    """m-summed coherent-state overlaps on a (rho0, theta_s) grid at fixed theta_m."""

    rho0_values: np.ndarray
    theta_s_values: np.ndarray
    values: np.ndarray
    m_grid_size: int
    theta_m: float

    def mass_fraction_near(self, rho0: float, theta_s: float, radius: float) -> float:
        """Fraction of total grid mass within a normalized-coordinate disk.

        Distances use (rho0, theta_s / (4 pi)) so both axes span unit length;
        theta_s is compared on the 4*pi circle.
        """
        r = self.rho0_values[:, None] - rho0
        dt = np.angle(np.exp(1j * (self.theta_s_values[None, :] - theta_s) / 2.0)) * 2.0
        d2 = r**2 + (dt / (4 * np.pi)) ** 2
        total = self.values.sum()
        if total == 0.0:
            return 0.0
        return float(self.values[d2 <= radius**2].sum() / total)


def husimi_grid(
    state: QuantumState,
    shell: EnergyShellSpec,
    m_grid_size: int = 101,
) -> HusimiGrid:
    """Quasi-probability portrait Q over the shell's (rho0, theta_s) raster.

    At each grid point the projections |<alpha|psi>|^2 are summed over a
    uniform m grid spanning [-(1 - rho0), 1 - rho0] with theta_m fixed;
    values are reported raw (unnormalized).
    """
    basis = state.basis
    occ = basis.occupations
    rho0s = shell.rho0_values()
    thetas = shell.theta_s_values()
    values = np.empty((len(rho0s), len(thetas)))
    psi = state.amplitudes
    tm = shell.theta_m_fixed
    # the coherent amplitude factorizes: magnitudes depend on (rho0, m) only,
    # while theta_s enters through a per-state phase exp(i theta_s (n1+nm)/2)
    # that can be folded into the projected state, one cheap vector per column
    half_sum = 0.5 * (occ[:, 0] + occ[:, 2]).astype(float)
    spinor_phases = np.exp(1j * np.multiply.outer(thetas, half_sum)) * np.conj(psi)[None, :]
    for i, rho0 in enumerate(rho0s):
        side = 1.0 - rho0
        ms = np.linspace(-side, side, m_grid_size)
        rho_plus = np.maximum(0.5 * (side + ms), 0.0)
        rho_minus = np.maximum(0.5 * (side - ms), 0.0)
        zetas = np.stack(
            [
                np.sqrt(rho_plus) * np.exp(0.5j * tm),
                np.full(m_grid_size, math.sqrt(rho0), dtype=complex),
                np.sqrt(rho_minus) * np.exp(-0.5j * tm),
            ],
            axis=1,
        )
        log_mag, phase = _coherent_log_parts(zetas, occ, basis.n_atoms)
        row_amps = np.exp(log_mag + 1j * phase)  # (m_grid_size, dim)
        overlaps = row_amps @ spinor_phases.T  # (m_grid_size, n_theta)
        values[i] = np.sum(np.abs(overlaps) ** 2, axis=0)
    return HusimiGrid(
        rho0_values=rho0s,
        theta_s_values=thetas,
        values=values,
        m_grid_size=m_grid_size,
        theta_m=tm,
    )


def coherent_overlaps(state: QuantumState, rho0, theta_s, m_values, theta_m=0.0) -> np.ndarray:
    """|<alpha(rho0, theta_s, m, theta_m)|psi>|^2 for each m in ``m_values``."""
    basis = state.basis
    m_values = np.atleast_1d(np.asarray(m_values, dtype=float))
    side = 1.0 - rho0
    rho_plus = np.maximum(0.5 * (side + m_values), 0.0)
    rho_minus = np.maximum(0.5 * (side - m_values), 0.0)
    zetas = np.stack(
        [
            np.sqrt(rho_plus) * np.exp(0.5j * (theta_s + theta_m)),
            np.full(len(m_values), math.sqrt(rho0), dtype=complex),
            np.sqrt(rho_minus) * np.exp(0.5j * (theta_s - theta_m)),
        ],
        axis=1,
    )
    log_mag, phase = _coherent_log_parts(zetas, basis.occupations, basis.n_atoms)
    overlaps = np.exp(log_mag + 1j * phase) @ np.conj(state.amplitudes)
    return np.abs(overlaps) ** 2


@dataclass(frozen=True)
class OtocSeries:
    """Squared-commutator series C(t) = ||[W(t), V]|psi>||^2 with labels."""

    times: np.ndarray
    values: np.ndarray
    v_label: str
    w_label: str
    std_error: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if np.any(values < -1e-12):
            raise ValueError("squared commutator must be non-negative")
        object.__setattr__(self, "values", values)

    def window(self, t_lo: float, t_hi: float):
        mask = (self.times >= t_lo) & (self.times <= t_hi)
        return self.times[mask], self.values[mask]


def otoc_ed(
    state: QuantumState,
    v_label: str,
    w_label: str,
    times,
    eig: EigenSystem,
) -> OtocSeries:
    """C(t) = ||[W(t), V]|psi>||^2 by state-vector evolution.

    Works entirely with vectors: W(t)V|psi> = U(t)^+ W U(t) V|psi> and
    V W(t)|psi> likewise, batched over all requested times; no Heisenberg
    matrices are ever formed, so N = 100 stays cheap.
    """
    times = np.asarray(times, dtype=float)
    basis = state.basis
    v_op = build_operator(basis, v_label)
    w_op = build_operator(basis, w_label)
    psi = state.amplitudes

    ce_psi, co_psi = eig.to_eigen(psi)
    v_psi = v_op @ psi
    ce_v, co_v = eig.to_eigen(v_psi)

    pe, po = eig.evolve_coefficients(np.ones_like(ce_psi), np.ones_like(co_psi), times)
    # forward legs at all times
    x = eig.from_eigen(pe * ce_v[:, None], po * co_v[:, None])  # U(t) V|psi>
    y = eig.from_eigen(pe * ce_psi[:, None], po * co_psi[:, None])  # U(t)|psi>
    wx = w_op @ x
    wy = w_op @ y
    # backward legs: U(t)^+ applied column-wise
    ce_wx, co_wx = eig.to_eigen(wx)
    ce_wy, co_wy = eig.to_eigen(wy)
    a = eig.from_eigen(np.conj(pe) * ce_wx, np.conj(po) * co_wx)
    b = v_op @ eig.from_eigen(np.conj(pe) * ce_wy, np.conj(po) * co_wy)
    diff = a - b
    values = np.sum(np.abs(diff) ** 2, axis=0)
    return OtocSeries(times=times, values=values, v_label=v_label, w_label=w_label)


@dataclass(frozen=True)
class ProtocolSpec:
    """Kick generator, measured observable, kick angle, and eigenvalue.

    The initial state must be an eigenstate of the measured observable
    (||(V - Lambda)|psi>|| < 1e-10); ``lam`` defaults to the measured
    expectation value.
    """

    a_label: str = "Sx"
    v_label: str = "N0"
    phi: float = 1e-3
    lam: Optional[float] = None

    def __post_init__(self):
        if self.phi <= 0:
            raise ValueError("phi must be positive")


def quadratic_response_protocol(
    spec: ProtocolSpec,
    state: QuantumState,
    eig: EigenSystem,
    times,
) -> OtocSeries:
    """Squared commutator from the time-reversal quadratic-response protocol.

    Simulates, for each kick angle phi in {-phi0, 0, +phi0}: forward
    evolution to t, kick e^{-i phi A}, backward evolution for t (evolution
    under -H, i.e. the conjugate phases), then measurement of <V> and <V^2>.
    The quadratic responses are extracted with a symmetric second difference,
    which cancels the linear commutator term exactly, and combined as
    C(t) = -2 Lambda Gamma2[V] + Gamma2[V^2].
    """
    times = np.asarray(times, dtype=float)
    basis = state.basis
    v_op = build_operator(basis, spec.v_label)
    a_op = build_operator(basis, spec.a_label)
    psi = state.amplitudes

    lam = spec.lam if spec.lam is not None else float(np.vdot(psi, v_op @ psi).real)
    residual = np.linalg.norm(v_op @ psi - lam * psi)
    if residual > 1e-10:
        raise ValueError(
            f"initial state is not an eigenstate of {spec.v_label!r}: "
            f"||(V - {lam}) psi|| = {residual:.3e}"
        )

    # the kick is time independent; diagonalize its generator once
    a_evals, a_evecs = scipy.linalg.eigh(a_op.toarray())

    def kick(mat: np.ndarray, phi: float) -> np.ndarray:
        coeff = _real_mat_T_at(a_evecs, mat)
        coeff *= np.exp(-1j * phi * a_evals)[:, None]
        return _real_mat_at(a_evecs, coeff)

    ce, co = eig.to_eigen(psi)
    pe, po = eig.evolve_coefficients(np.ones_like(ce), np.ones_like(co), times)
    forward = eig.from_eigen(pe * ce[:, None], po * co[:, None])

    moments = {}
    for phi in (-spec.phi, 0.0, spec.phi):
        kicked = kick(forward, phi)
        ke, ko = eig.to_eigen(kicked)
        back = eig.from_eigen(np.conj(pe) * ke, np.conj(po) * ko)
        v_back = v_op @ back
        m1 = np.sum(np.conj(back) * v_back, axis=0).real
        m2 = np.sum(np.abs(v_back) ** 2, axis=0)
        moments[phi] = (m1, m2)

    phi0 = spec.phi
    gamma_v = (moments[phi0][0] - 2 * moments[0.0][0] + moments[-phi0][0]) / (2 * phi0**2)
    gamma_v2 = (moments[phi0][1] - 2 * moments[0.0][1] + moments[-phi0][1]) / (2 * phi0**2)
    values = -2.0 * lam * gamma_v + gamma_v2
    # second differencing leaves O(phi0^2) dust that can dip below zero at C ~ 0
    values = np.where(np.abs(values) < 1e-9 * max(abs(lam), 1.0) ** 2, np.abs(values), values)
    return OtocSeries(times=times, values=values, v_label=spec.v_label, w_label=spec.a_label)
