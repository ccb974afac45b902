import math

import numpy as np
import pytest

from trimode.model import CanonicalCoords, ClassicalState, EnergyShellSpec, ModelParams, canonical_to_zeta
from trimode.quantum import (
    DENSE_DIM_CAP,
    EigenSystem,
    ProtocolSpec,
    ResourceLimitError,
    build_basis,
    build_hamiltonian,
    build_operator,
    coherent_overlaps,
    coherent_state,
    diagonalize,
    diagonalize_model,
    evolve,
    evolve_many,
    husimi_grid,
    otoc_ed,
    parity_blocks,
    quadratic_response_protocol,
)

from conftest import random_states


def tensor_space_hamiltonian(params: ModelParams):
    """Independent brute-force construction on the three-oscillator tensor space.

    Builds ladder operators by Kronecker products, assembles the Hamiltonian
    by plain operator algebra, and restricts to the fixed-N sector in the
    same lexicographic order as the Fock basis.
    """
    n = params.n_atoms
    d = n + 1
    a = np.diag(np.sqrt(np.arange(1, d)), 1)
    eye = np.eye(d)
    a1 = np.kron(np.kron(a, eye), eye)
    a0 = np.kron(np.kron(eye, a), eye)
    am = np.kron(np.kron(eye, eye), a)
    n1 = a1.T @ a1
    n0 = a0.T @ a0
    nm = am.T @ am
    g = params.g
    ham = (
        g
        * (
            a0.T @ a0.T @ a1 @ am
            + a1.T @ am.T @ a0 @ a0
            + n0 @ (n1 + nm)
            + 0.5 * (n1 - nm) @ (n1 - nm)
        )
        + params.q * (n1 + nm)
        + params.r / math.sqrt(2.0) * ((a1.T + am.T) @ a0 + a0.T @ (a1 + am))
    )
    sector = []
    for i1 in range(n + 1):
        for i0 in range(n + 1 - i1):
            im = n - i1 - i0
            sector.append((i1 * d + i0) * d + im)
    sector = np.array(sector)
    return ham[np.ix_(sector, sector)]


class TestFockBasis:
    @pytest.mark.parametrize("n,size", [(1, 3), (2, 6), (100, 5151)])
    def test_sizes(self, n, size):
        assert build_basis(n).size == size

    def test_enumeration_is_lexicographic(self):
        basis = build_basis(2)
        expected = [(0, 0, 2), (0, 1, 1), (0, 2, 0), (1, 0, 1), (1, 1, 0), (2, 0, 0)]
        assert [tuple(row) for row in basis.occupations] == expected

    def test_index_round_trip(self):
        basis = build_basis(7)
        for k, (n1, n0, nm1) in enumerate(basis.occupations):
            assert basis.index(n1, n0, nm1) == k

    def test_size_cap(self):
        with pytest.raises(ResourceLimitError):
            build_basis(100, size_cap=1000)


class TestHamiltonian:
    def test_polar_diagonal_element_vanishes(self, rng):
        for _ in range(5):
            p = ModelParams(rng.normal(), rng.normal(), abs(rng.normal()), 12)
            basis = build_basis(p.n_atoms)
            ham = build_hamiltonian(basis, p)
            k = basis.index(0, p.n_atoms, 0)
            assert ham.matrix[k, k] == pytest.approx(0.0, abs=1e-14)

    def test_pair_creation_element(self):
        p = ModelParams(1.0, 1.0, 0.0, 9)
        basis = build_basis(9)
        ham = build_hamiltonian(basis, p).as_dense()
        i = basis.index(1, 7, 1)
        j = basis.index(0, 9, 0)
        assert ham[i, j] == pytest.approx(p.g * math.sqrt(9 * 8))
        assert ham[j, i] == pytest.approx(p.g * math.sqrt(9 * 8))

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_matches_tensor_space_oracle(self, n):
        p = ModelParams(1.0, 1.0, 0.3, n)
        ours = build_hamiltonian(build_basis(n), p).as_dense()
        assert np.max(np.abs(ours - tensor_space_hamiltonian(p))) < 1e-13

    def test_hermitian_by_construction(self):
        p = ModelParams(1.3, 0.7, 0.4, 30)
        ham = build_hamiltonian(build_basis(30), p)
        assert ham.hermiticity_residual() < 1e-12

    def test_commutes_with_imbalance_when_undriven(self):
        p = ModelParams(1.0, 1.0, 0.0, 20)
        basis = build_basis(20)
        h = build_hamiltonian(basis, p).as_dense()
        sz = build_operator(basis, "Sz").toarray()
        assert np.max(np.abs(h @ sz - sz @ h)) < 1e-12

    def test_drive_term_is_proportional_to_sx(self):
        basis = build_basis(15)
        p0 = ModelParams(1.0, 1.0, 0.0, 15)
        p1 = ModelParams(1.0, 1.0, 0.8, 15)
        diff = (build_hamiltonian(basis, p1).matrix - build_hamiltonian(basis, p0).matrix).toarray()
        sx = build_operator(basis, "Sx").toarray()
        assert np.max(np.abs(diff - 0.8 * sx)) < 1e-12


class TestParityBlocks:
    @pytest.mark.parametrize("n,even,odd", [(1, 2, 1), (2, 4, 2), (100, 2601, 2550)])
    def test_dimensions(self, n, even, odd):
        p = ModelParams(1.0, 1.0, 0.4, n)
        blocks = parity_blocks(build_hamiltonian(build_basis(n), p))
        assert (blocks.dim_even, blocks.dim_odd) == (even, odd)

    def test_off_block_coupling_vanishes(self):
        p = ModelParams(1.0, 1.0, 0.7, 25)
        ham = build_hamiltonian(build_basis(25), p)
        assert parity_blocks(ham).off_block_residual(ham) < 1e-12

    def test_union_of_block_spectra_is_the_full_spectrum(self):
        p = ModelParams(1.0, 1.0, 0.35, 12)
        ham = build_hamiltonian(build_basis(12), p)
        eig = diagonalize(parity_blocks(ham), want_vectors=False)
        full = np.sort(np.linalg.eigvalsh(ham.as_dense()))
        assert np.max(np.abs(eig.eigenvalues - full)) < 1e-8

    def test_parity_transform_round_trip(self, rng):
        p = ModelParams(1.0, 1.0, 0.4, 10)
        blocks = parity_blocks(build_hamiltonian(build_basis(10), p))
        vec = rng.normal(size=blocks.basis.size) + 1j * rng.normal(size=blocks.basis.size)
        even, odd = blocks.to_parity(vec)
        assert np.max(np.abs(blocks.from_parity(even, odd) - vec)) < 1e-14


class TestDiagonalize:
    def test_small_system_against_dense_oracle(self):
        p = ModelParams(1.0, 1.0, 0.0, 2)
        eig = diagonalize_model(p)
        oracle = np.sort(np.linalg.eigvalsh(tensor_space_hamiltonian(p)))
        assert np.max(np.abs(eig.eigenvalues - oracle)) < 1e-10

    def test_eigenvectors_orthonormal(self):
        p = ModelParams(1.0, 1.0, 0.6, 14)
        eig = diagonalize_model(p)
        for vecs in (eig.evecs_even, eig.evecs_odd):
            gram = vecs.T @ vecs
            assert np.max(np.abs(gram - np.eye(len(gram)))) < 1e-8

    def test_undriven_eigenvectors_live_in_one_imbalance_sector(self):
        # at r = 0 the Hamiltonian conserves Sz; in the parity-adapted basis
        # an eigenvector is a (|M> +- |-M>)/sqrt(2) combination, so each one
        # must be supported on a single |Sz| sector (up to in-block degeneracy)
        p = ModelParams(1.0, 1.0, 0.0, 14)
        basis = build_basis(14)
        eig = diagonalize(parity_blocks(build_hamiltonian(basis, p)))
        abs_imbalance = np.abs(basis.occupations[:, 0] - basis.occupations[:, 2])
        checked = 0
        for block, spectrum in (("even", eig.evals_even), ("odd", eig.evals_odd)):
            n_block = len(spectrum)
            for k in range(n_block):
                isolated = (k == 0 or spectrum[k] - spectrum[k - 1] > 1e-8) and (
                    k + 1 == n_block or spectrum[k + 1] - spectrum[k] > 1e-8
                )
                if not isolated:
                    continue
                coeff = np.zeros((n_block, 1))
                coeff[k, 0] = 1.0
                if block == "even":
                    vec = eig.from_eigen(coeff, np.zeros((eig.blocks.dim_odd, 1)))[:, 0]
                else:
                    vec = eig.from_eigen(np.zeros((eig.blocks.dim_even, 1)), coeff)[:, 0]
                weights = np.bincount(abs_imbalance, weights=vec**2)
                assert 1.0 - weights.max() < 1e-8  # sector-projection residual
                checked += 1
        assert checked > 20

    def test_dense_cap_enforced(self):
        basis = build_basis(12)
        p = ModelParams(1.0, 1.0, 0.1, 12)
        blocks = parity_blocks(build_hamiltonian(basis, p))
        big = np.zeros((DENSE_DIM_CAP + 1, DENSE_DIM_CAP + 1))
        object.__setattr__(blocks, "block_even", big)
        with pytest.raises(ResourceLimitError):
            diagonalize(blocks)


class TestCoherentStates:
    def test_polar_center_is_a_fock_state(self):
        basis = build_basis(21)
        state = coherent_state(np.array([0, 1, 0], dtype=complex), basis)
        amps = np.abs(state.amplitudes)
        assert amps[basis.index(0, 21, 0)] == pytest.approx(1.0)
        assert np.sum(amps) == pytest.approx(1.0)

    def test_mode_occupation_moment(self, rng):
        basis = build_basis(20)
        for zeta in random_states(rng, 5):
            state = coherent_state(zeta, basis)
            n0 = build_operator(basis, "N0")
            assert state.expectation(n0) == pytest.approx(20 * abs(zeta[1]) ** 2, abs=1e-8)

    def test_normalized_at_large_n(self, rng):
        basis = build_basis(100)
        zeta = random_states(rng, 1)[0]
        state = coherent_state(zeta, basis)  # QuantumState enforces norm to 1e-10
        assert abs(np.linalg.norm(state.amplitudes) - 1.0) < 1e-12


class TestEvolution:
    @pytest.fixture(scope="class")
    def system(self):
        p = ModelParams(1.0, 1.0, 0.25, 24)
        basis = build_basis(24)
        eig = diagonalize(parity_blocks(build_hamiltonian(basis, p)))
        return basis, eig

    def test_t_zero_is_identity(self, system, rng):
        basis, eig = system
        psi = coherent_state(random_states(rng, 1)[0], basis)
        assert np.max(np.abs(evolve(psi, eig, 0.0).amplitudes - psi.amplitudes)) < 1e-12

    def test_eigenstate_acquires_only_a_phase(self, system):
        basis, eig = system
        coeff = np.zeros((eig.blocks.dim_even, 1))
        coeff[3, 0] = 1.0
        vec = eig.from_eigen(coeff, np.zeros((eig.blocks.dim_odd, 1)))[:, 0]
        psi = type(basis.vacuum_mode0())(basis, vec.astype(complex))
        evolved = evolve(psi, eig, 2.7)
        assert abs(abs(psi.overlap(evolved)) - 1.0) < 1e-10

    def test_energy_is_conserved(self, system, rng):
        basis, eig = system
        p = ModelParams(1.0, 1.0, 0.25, 24)
        ham = build_hamiltonian(basis, p)
        psi = coherent_state(random_states(rng, 1)[0], basis)
        e0 = psi.expectation(ham.matrix)
        for t in (1.0, 5.0, 20.0):
            assert evolve(psi, eig, t).expectation(ham.matrix) == pytest.approx(e0, abs=1e-10)

    def test_parity_is_conserved(self, system):
        basis, eig = system
        # an exchange-symmetric coherent state lives in the even block
        psi = coherent_state(canonical_to_zeta(CanonicalCoords(0.4, 0.9, 0.0, 0.0)), basis)
        _, odd0 = eig.blocks.to_parity(psi.amplitudes)
        assert np.linalg.norm(odd0) < 1e-10
        _, odd_t = eig.blocks.to_parity(evolve(psi, eig, 7.0).amplitudes)
        assert np.linalg.norm(odd_t) < 1e-10

    def test_evolve_many_matches_single(self, system, rng):
        basis, eig = system
        psi = coherent_state(random_states(rng, 1)[0], basis)
        many = evolve_many(psi, eig, [0.0, 1.5, 3.0])
        single = evolve(psi, eig, 3.0)
        assert np.max(np.abs(many[:, 2] - single.amplitudes)) < 1e-10


class TestHusimi:
    def test_polar_state_overlap_structure(self):
        basis = build_basis(30)
        psi = basis.vacuum_mode0()
        per_m = coherent_overlaps(psi, 1.0, 0.0, [0.0])
        assert per_m[0] == pytest.approx(1.0)
        assert coherent_overlaps(psi, 0.0, 0.0, [0.3])[0] == pytest.approx(0.0, abs=1e-20)

    def test_grid_values_nonnegative_and_peaked_at_center(self):
        basis = build_basis(40)
        center = canonical_to_zeta(CanonicalCoords(0.5, 0.0, 0.0, 0.0))
        psi = coherent_state(center, basis)
        shell = EnergyShellSpec(1.0, (11, 11))
        grid = husimi_grid(psi, shell, m_grid_size=21)
        assert np.all(grid.values >= 0.0)
        i, j = np.unravel_index(np.argmax(grid.values), grid.values.shape)
        assert abs(grid.rho0_values[i] - 0.5) < 0.1
        assert abs(grid.theta_s_values[j]) < 0.5

    def test_width_shrinks_like_inverse_sqrt_n(self):
        center = canonical_to_zeta(CanonicalCoords(0.5, 0.0, 0.0, 0.0))
        widths = {}
        for n in (50, 200):
            basis = build_basis(n)
            psi = coherent_state(center, basis)
            shell = EnergyShellSpec(1.0, (81, 2), theta_s_span=(-0.3, 0.3))
            grid = husimi_grid(psi, shell, m_grid_size=31)
            marginal = grid.values.sum(axis=1)
            rho = grid.rho0_values
            mean = np.sum(rho * marginal) / marginal.sum()
            widths[n] = math.sqrt(np.sum((rho - mean) ** 2 * marginal) / marginal.sum())
        assert widths[50] / widths[200] == pytest.approx(2.0, rel=0.15)


class TestOtoc:
    def test_equal_operators_commute_at_t_zero(self):
        p = ModelParams(1.0, 1.0, 0.3, 12)
        basis = build_basis(12)
        eig = diagonalize(parity_blocks(build_hamiltonian(basis, p)))
        psi = coherent_state(canonical_to_zeta(CanonicalCoords(0.4, 0.7, 0.2, 0.0)), basis)
        series = otoc_ed(psi, "rho0", "rho0", [0.0, 1.0], eig)
        assert series.values[0] < 1e-12

    def test_against_dense_heisenberg_oracle(self):
        p = ModelParams(1.0, 1.0, 0.3, 3)
        basis = build_basis(3)
        ham = build_hamiltonian(basis, p)
        eig = diagonalize(parity_blocks(ham))
        psi = coherent_state(canonical_to_zeta(CanonicalCoords(0.4, 0.7, 0.2, 0.0)), basis)
        times = np.linspace(0.0, 5.0, 21)
        series = otoc_ed(psi, "rho0", "rho0", times, eig)

        evals, evecs = np.linalg.eigh(ham.as_dense())
        v = build_operator(basis, "rho0").toarray()
        for k, t in enumerate(times):
            u = evecs @ np.diag(np.exp(-1j * evals * t)) @ evecs.T
            w_t = u.conj().T @ v @ u
            comm = w_t @ v - v @ w_t
            expected = float(
                np.vdot(psi.amplitudes, comm.conj().T @ comm @ psi.amplitudes).real
            )
            assert series.values[k] == pytest.approx(expected, abs=1e-12)

    def test_mixed_operator_pairs(self):
        p = ModelParams(1.0, 1.0, 0.2, 10)
        basis = build_basis(10)
        eig = diagonalize(parity_blocks(build_hamiltonian(basis, p)))
        psi = basis.vacuum_mode0()
        series = otoc_ed(psi, "N0", "Sx", [0.0], eig)
        # ||[Sx, N0]|0,N,0>||^2 = N exactly
        assert series.values[0] == pytest.approx(10.0, abs=1e-10)

    def test_unknown_label_rejected(self):
        p = ModelParams(1.0, 1.0, 0.2, 5)
        basis = build_basis(5)
        eig = diagonalize(parity_blocks(build_hamiltonian(basis, p)))
        with pytest.raises(ValueError):
            otoc_ed(basis.vacuum_mode0(), "rho7", "rho0", [0.0], eig)


class TestProtocol:
    @pytest.fixture(scope="class")
    def system(self):
        p = ModelParams(1.0, 1.0, 0.15, 20)
        basis = build_basis(20)
        eig = diagonalize(parity_blocks(build_hamiltonian(basis, p)))
        return basis, eig

    def test_requires_an_eigenstate(self, system, rng):
        basis, eig = system
        psi = coherent_state(random_states(rng, 1)[0], basis)
        with pytest.raises(ValueError):
            quadratic_response_protocol(ProtocolSpec(), psi, eig, [0.0, 1.0])

    def test_t_zero_equals_direct_commutator_norm(self, system):
        basis, eig = system
        psi = basis.vacuum_mode0()
        series = quadratic_response_protocol(ProtocolSpec(phi=1e-3), psi, eig, [0.0])
        v = build_operator(basis, "N0")
        a = build_operator(basis, "Sx")
        comm = v @ (a @ psi.amplitudes) - a @ (v @ psi.amplitudes)
        assert series.values[0] == pytest.approx(float(np.linalg.norm(comm) ** 2), rel=1e-3)

    def test_matches_exact_squared_commutator(self, system):
        basis, eig = system
        psi = basis.vacuum_mode0()
        times = np.linspace(0.0, 5.0, 11)
        protocol = quadratic_response_protocol(ProtocolSpec(phi=1e-3), psi, eig, times)
        exact = otoc_ed(psi, "N0", "Sx", times, eig)
        rel = np.abs(protocol.values - exact.values) / np.maximum(np.abs(exact.values), 1e-9)
        assert rel.max() < 0.01

    def test_quadratic_convergence_in_kick_angle(self, system):
        basis, eig = system
        psi = basis.vacuum_mode0()
        times = np.linspace(0.5, 4.0, 8)
        exact = otoc_ed(psi, "N0", "Sx", times, eig)
        errors = {}
        for phi in (2e-3, 1e-3):
            run = quadratic_response_protocol(ProtocolSpec(phi=phi), psi, eig, times)
            errors[phi] = np.max(np.abs(run.values - exact.values))
        ratio = errors[2e-3] / errors[1e-3]
        assert 2.5 < ratio < 6.0
