import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chiral_rabi.hilbert import E, G, ModelParams, build_single_sector_basis
from chiral_rabi.numerics import SolverError
from chiral_rabi.oracles import brute_force_two_mode_oracle, two_mode_model
from chiral_rabi.single import (
    ConvergenceError,
    SectorState,
    TruncationError,
    assemble_single_hamiltonian,
    collapse_revival,
    eigenstate,
    embed_fock_amplitudes,
    entanglement_entropy,
    krylov_evolve_single,
    observables,
    project_excited_vacuum,
    sector_spectrum,
    spectral_evolve,
)


def recurrence_matrix(l, n_max, g, w0=1.0, wc=1.0):
    """Coefficient table of the sector eigen-recurrences, written out by hand."""
    states = [(G, n) for n in range(n_max + 1) if n + l >= 0] + [(E, n) for n in range(n_max + 1) if n + l - 1 >= 0]
    idx = {s: i for i, s in enumerate(states)}
    M = np.zeros((len(states), len(states)))
    for (b, n), i in idx.items():
        if b == G:
            M[i, i] = wc * (2 * n + l) - w0 / 2
            if (E, n) in idx:
                M[i, idx[(E, n)]] = M[idx[(E, n)], i] = g * np.sqrt(n + l)
            if (E, n + 1) in idx:
                M[i, idx[(E, n + 1)]] = M[idx[(E, n + 1)], i] = g * np.sqrt(n + 1)
        else:
            M[i, i] = wc * (2 * n + l - 1) + w0 / 2
    return M


def fock_state(l, n_max, amps):
    basis = build_single_sector_basis(l, n_max)
    v = np.zeros(len(basis), dtype=complex)
    for (b, n), a in amps.items():
        v[basis.index(b, n)] = a
    return SectorState(basis, v)


class TestAssembly:
    def test_small_table(self):
        H = assemble_single_hamiltonian(ModelParams(g=0.1), build_single_sector_basis(0, 1)).toarray()
        np.testing.assert_allclose(np.diag(H), [-0.5, 1.5, 1.5])
        # order G(0), G(1), E(1)
        assert H[0, 2] == pytest.approx(0.1)
        assert H[1, 2] == pytest.approx(0.1)
        assert H[0, 1] == 0

    def test_zero_coupling_is_diagonal(self):
        H = assemble_single_hamiltonian(ModelParams(g=0.0), build_single_sector_basis(2, 6))
        np.testing.assert_array_equal(H.toarray(), np.diag(H.diagonal()))

    @given(st.integers(-4, 4), st.integers(0, 15), st.floats(0, 3), st.floats(0.2, 2), st.floats(0.2, 2))
    def test_matches_recurrence_table(self, l, n_max, g, w0, wc):
        H = assemble_single_hamiltonian(ModelParams(g=g, omega0=w0, omega_c=wc), build_single_sector_basis(l, n_max))
        np.testing.assert_allclose(H.toarray(), recurrence_matrix(l, n_max, g, w0, wc), atol=1e-14)

    @pytest.mark.parametrize("l", [-2, -1, 0, 1, 2])
    def test_equals_restricted_oracle(self, l):
        cap = 8
        params = ModelParams(g=0.7, omega0=1.0, omega_c=1.3)
        model = two_mode_model(params, cap)
        basis = build_single_sector_basis(l, cap - max(l, 0))
        labels = [lab for lab in basis.fock_labels() if lab[1] <= cap and lab[2] <= cap]
        assert len(labels) == len(basis)
        H = assemble_single_hamiltonian(params, basis).toarray()
        np.testing.assert_allclose(model.restrict(labels).toarray(), H, atol=1e-13)


class TestSpectrum:
    def test_decoupled_ground(self):
        sol = sector_spectrum(ModelParams(g=0.0), 0, n_max=5)
        assert sol.energies[0] == -0.5
        assert sol.basis.fock_labels()[int(np.argmax(np.abs(sol.vectors[:, 0])))] == (G, 0, 0)

    def test_jc_doublet(self):
        g = 0.01
        e = sector_spectrum(ModelParams(g=g), 1).energies
        assert abs(e[0] - (0.5 - g)) < 1e-3
        assert abs(e[1] - (0.5 + g)) < 1e-3

    def test_oracle_ground_at_unit_coupling(self):
        # frozen from brute_force_two_mode_oracle(ModelParams(g=1.0), 40)
        sol = sector_spectrum(ModelParams(g=1.0), 0)
        assert sol.energies[0] == pytest.approx(-1.0, abs=1e-8)
        assert sector_spectrum(ModelParams(g=1.0), 1).energies[0] == pytest.approx(-0.71968089, abs=1e-8)

    def test_oracle_match_live(self):
        params = ModelParams(g=1.0)
        ref = brute_force_two_mode_oracle(params, 40).sector_energies(0)[:4]
        np.testing.assert_allclose(sector_spectrum(params, 0).energies[:4], ref, atol=1e-8)

    @given(st.floats(0.05, 2.5))
    @settings(max_examples=15)
    def test_resonant_l0_ground_closed_form(self, g):
        # at omega0 = omega_c the oracle ground energy of l=0 is -omega0/2 - g^2/(2 omega0)
        e = sector_spectrum(ModelParams(g=g), 0, k=1).energies[0]
        assert e == pytest.approx(-0.5 - g * g / 2, abs=1e-9)

    def test_certificate_metadata(self):
        sol = sector_spectrum(ModelParams(g=2.0), 1, k=5)
        assert sol.metadata["drift"] < 1e-10
        assert sol.metadata["n_max"] >= 40

    def test_ceiling_raises_with_drift(self):
        with pytest.raises(ConvergenceError) as info:
            sector_spectrum(ModelParams(g=3.0), 0, n_max=5, n_max_ceiling=8, step=2)
        assert info.value.drift > 0
        assert isinstance(info.value, SolverError)

    def test_truncation_drift_large_n(self):
        p = ModelParams(g=3.0)
        e150 = sector_spectrum(p, 0, n_max=150, k=1).energies[0]
        e200 = sector_spectrum(p, 0, n_max=200, k=1).energies[0]
        assert abs(e150 - e200) < 1e-8

    @given(st.integers(-2, 3), st.floats(0.1, 2.0))
    @settings(max_examples=15)
    def test_variational_in_n_max(self, l, g):
        p = ModelParams(g=g)
        prev = np.inf
        for n in range(0, 30, 3):
            H = assemble_single_hamiltonian(p, build_single_sector_basis(l, n)).toarray()
            if H.size == 0:
                continue
            e = np.linalg.eigvalsh(H)[0]
            assert e <= prev + 1e-12
            prev = e


class TestObservables:
    def test_vacuum(self):
        r = observables(fock_state(0, 3, {(G, 0): 1.0})).as_dict()
        for k in ("pop_e", "n_a", "n_b", "var_sum", "var_diff", "covar_xx", "entropy", "cumulant3", "m_ab_re"):
            assert r[k] == 0

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            observables(fock_state(0, 3, {(G, 0): 0.5}))

    @pytest.mark.parametrize("g, l", [(0.3, 0), (1.0, 1), (2.5, -1), (1.5, 2)])
    def test_eigenstate_moments(self, g, l):
        sol = sector_spectrum(ModelParams(g=g), l, k=4)
        for i in range(4):
            r = observables(eigenstate(sol, i))
            for name in ("a", "b", "a2", "b2", "adag_b"):
                assert abs(r.first_moments[name]) < 1e-10
            assert r.var_sum + r.var_diff == pytest.approx(r.n_a + r.n_b, abs=1e-10)
            # X(a) +- X(b) matches P(a) -+ P(b)
            assert r.var_sum == pytest.approx(r.var_p_diff, abs=1e-10)
            assert r.var_diff == pytest.approx(r.var_p_sum, abs=1e-10)
            assert r.var_xa == pytest.approx(r.n_a / 2, abs=1e-12)
            assert r.var_xb == pytest.approx(r.n_b / 2, abs=1e-12)
            assert r.covar_xx == pytest.approx(np.real(r.m_ab) / 2, abs=1e-12)
            assert r.lz == pytest.approx(l - 0.5, abs=1e-12)

    def test_unit_coupling_values(self):
        # frozen from the oracle ground state of brute_force_two_mode_oracle(g=1, cap 40)
        r = observables(eigenstate(sector_spectrum(ModelParams(g=1.0), 0)))
        assert r.pop_e == pytest.approx(0.195171, abs=1e-6)
        assert r.n_b == pytest.approx(0.25, abs=1e-9)
        assert r.var_sum == pytest.approx(0.402415, abs=1e-6)
        assert r.var_diff == pytest.approx(-0.097585, abs=1e-6)

    @pytest.mark.parametrize("g", [0.2, 0.5, 1.0, 2.0, 3.0])
    def test_l0_ground_has_a_negative_joint_variance(self, g):
        r = observables(eigenstate(sector_spectrum(ModelParams(g=g), 0, k=1)))
        assert min(r.var_sum, r.var_diff) < 0

    def test_gauge_flip_of_mode_b_swaps_joint_variances(self):
        # b -> -b maps the Hamiltonian to one with coupling g sigma_+ (a - b^dag); the
        # sector amplitudes change by (-1)^{n_b}, exchanging X_a + X_b with X_a - X_b
        sol = sector_spectrum(ModelParams(g=1.0), 0)
        st0 = eigenstate(sol)
        flipped = SectorState(st0.basis, st0.amplitudes * (-1.0) ** st0.basis.n_b)
        r0, r1 = observables(st0), observables(flipped)
        assert r1.var_sum == pytest.approx(r0.var_diff, abs=1e-12)
        assert r1.var_diff == pytest.approx(r0.var_sum, abs=1e-12)

    def test_l1_squeezing_onset(self):
        vals = {g: observables(eigenstate(sector_spectrum(ModelParams(g=g), 1, k=1))).var_diff for g in (0.5, 1.5)}
        assert vals[0.5] >= 0
        assert vals[1.5] < 0

    def test_cumulant_of_product_state(self):
        st0 = fock_state(1, 3, {(G, 2): 1.0})
        assert observables(st0).cumulant3 == pytest.approx(0.0, abs=1e-14)


class TestEntropy:
    def test_product_state(self):
        assert entanglement_entropy(fock_state(0, 2, {(G, 0): 1.0})) == 0

    def test_maximally_entangled(self):
        st0 = fock_state(1, 2, {(G, 0): 1 / np.sqrt(2), (E, 0): -1 / np.sqrt(2)})
        assert entanglement_entropy(st0) == pytest.approx(1.0, abs=1e-15)

    def test_weak_coupling_l1_ground(self):
        s = entanglement_entropy(eigenstate(sector_spectrum(ModelParams(g=1e-3), 1, n_max=20)))
        assert abs(s - 1) < 1e-6

    def test_l0_ground_increases_toward_one(self):
        gs = np.arange(0.2, 3.0001, 0.2)
        s = [entanglement_entropy(eigenstate(sector_spectrum(ModelParams(g=g), 0, k=1))) for g in gs]
        assert np.all(np.diff(s) > 0)
        assert s[-1] > 0.9
        assert s[list(np.round(gs, 6)).index(2.0)] > 0.9

    @given(st.floats(0, 1))
    def test_binary_entropy_bounds(self, p):
        st0 = fock_state(1, 1, {(G, 0): np.sqrt(1 - p), (E, 0): np.sqrt(p)})
        s = entanglement_entropy(st0)
        assert -1e-12 <= s <= 1 + 1e-12


class TestDynamics:
    def test_decoupled_stays_excited(self):
        ts = spectral_evolve(ModelParams(g=0.0), {(E, 0, 0): 1.0}, np.linspace(0, 10, 11), n_max=3)
        np.testing.assert_allclose(ts["pop_e"], 1.0, atol=1e-14)

    def test_rabi_oscillation(self):
        g = 0.02
        gt = np.linspace(0, 4 * np.pi, 200)
        ts = spectral_evolve(ModelParams(g=g), {(E, 0, 0): 1.0}, gt / g, n_max=20)
        assert np.max(np.abs(ts["pop_e"] - np.cos(gt) ** 2)) < 1e-2

    def test_spectral_matches_krylov(self):
        g = 2.0
        times = np.linspace(0, 4 * 2 * np.pi / g, 60)
        init = {(E, 0, 0): 1.0}
        a = spectral_evolve(ModelParams(g=g), init, times, n_max=60)
        b = krylov_evolve_single(ModelParams(g=g), init, times, n_max=60, err_tol=1e-12)
        for k in ("pop_e", "n_a", "n_b", "var_sum", "covar_xx", "entropy", "cumulant3"):
            assert np.max(np.abs(a[k] - b[k])) < 1e-6, k

    def test_conservation(self):
        ts = spectral_evolve(ModelParams(g=1.5), {(E, 0, 0): 1.0}, np.linspace(0, 40, 81), n_max=60)
        assert np.max(np.abs(ts["norm"] - 1)) < 1e-9
        assert np.max(np.abs(ts["lz"] - 0.5)) < 1e-8
        assert np.max(np.abs(ts["energy"] - ts["energy"][0])) < 1e-8 * max(1, abs(ts["energy"][0]))

    def test_cross_sector_superposition(self):
        init = {(G, 0, 0): np.sqrt(0.5), (E, 0, 0): np.sqrt(0.5)}
        ts = spectral_evolve(ModelParams(g=0.8), init, np.linspace(0, 10, 21), n_max=40)
        np.testing.assert_allclose(ts["lz"], 0.0, atol=1e-10)
        np.testing.assert_allclose(ts["norm"], 1.0, atol=1e-10)

    def test_initial_outside_truncation(self):
        with pytest.raises(TruncationError):
            embed_fock_amplitudes({(G, 0, 9): 1.0}, n_max=3)

    def test_edge_leak_detected(self):
        with pytest.raises(TruncationError):
            spectral_evolve(ModelParams(g=2.0), {(E, 0, 0): 1.0}, np.linspace(0, 10, 11), n_max=8)

    def test_collapse_and_revival(self):
        times = np.arange(0, 40.0001, 0.01)
        ts = spectral_evolve(ModelParams(g=2.0), {(E, 0, 0): 1.0}, times, n_max=60)
        cr = collapse_revival(times, ts["sigma_z"], ts["n_a"] + ts["n_b"])
        assert cr.first_window_mean_abs < 0.2
        assert cr.count_revivals(0.5) >= 2
        assert cr.max_after_collapse < 1 - 1e-2


class TestProjection:
    def test_decoupled(self):
        sol = sector_spectrum(ModelParams(g=0.0), 1, n_max=5)
        ov = project_excited_vacuum({1: sol, 0: sector_spectrum(ModelParams(g=0.0), 0, n_max=5)})
        assert np.sum(np.abs(ov[1]) ** 2) == pytest.approx(1.0)
        assert np.count_nonzero(np.abs(ov[1]) > 1e-12) == 1
        assert np.all(ov[0] == 0)

    @pytest.mark.parametrize("g", [0.3, 1.0, 3.0])
    def test_completeness(self, g):
        sol = sector_spectrum(ModelParams(g=g), 1)
        assert np.sum(np.abs(project_excited_vacuum({1: sol})[1]) ** 2) == pytest.approx(1.0, abs=1e-9)
