"""Correlation builders, path loss, selection, channel sampling."""

import numpy as np
import pytest
from scipy.linalg import sqrtm

from fasris import (ChannelSampler, CorrelationSet, DegenerateGridError,
                    Dimensions, PathLossParams, PlanarFasGeometry,
                    RisAngularProfile, Scenario, db2lin,
                    effective_ris_correlation, embed_selection,
                    fas_correlation_matrix, path_loss, phase_matrix,
                    ris_correlation_matrix, sample_channel, select_submatrix,
                    trial_rng)
from fasris.channel import ConstraintError, psd_sqrt
from fasris.scenarios import (bs_user_distance, cascaded_gain, direct_gain,
                              fig1_scenario, random_correlation)

GEOM = PlanarFasGeometry(W_x=2.0, W_y=2.0, N_x=10, N_y=10)


def spherical_j0_series(x, terms=60):
    """Independent oracle: j0(x) = sum_n (-1)^n x^(2n) / (2n+1)!."""
    total, term = 0.0, 1.0
    for n in range(terms):
        total += term
        term *= -x * x / ((2 * n + 2) * (2 * n + 3))
    return total


class TestFasCorrelation:
    def test_unit_diagonal(self):
        R = fas_correlation_matrix(GEOM)
        assert np.allclose(np.diag(R), 1.0, atol=1e-14)

    def test_adjacent_same_row_value(self):
        # adjacent ports in the same column differ by one grid step: the
        # argument is 2*pi * W/(N-1) = 2*pi*2/9
        R = fas_correlation_matrix(GEOM)
        expected = spherical_j0_series(2.0 * np.pi * 2.0 / 9.0)
        assert abs(R[0, 1] - expected) < 1e-12

    def test_psd_for_planar_grid(self):
        R = fas_correlation_matrix(GEOM)
        assert np.linalg.eigvalsh(R).min() >= -1e-10

    def test_translation_invariance(self):
        # entries depend on coordinate differences only: ports (0,1) sit one
        # row apart in column 0; ports (N_y, N_y+1) are the same pair in
        # column 1
        R = fas_correlation_matrix(GEOM)
        n = GEOM.N_y
        assert abs(R[0, 1] - R[n, n + 1]) < 1e-15
        assert abs(R[0, n] - R[1, n + 1]) < 1e-15

    def test_degenerate_grid_errors(self):
        with pytest.raises(DegenerateGridError):
            fas_correlation_matrix(PlanarFasGeometry(W_x=2.0, W_y=2.0,
                                                     N_x=1, N_y=10))


class TestRisCorrelation:
    def test_diagonal_is_truncated_gaussian_mass(self):
        C = ris_correlation_matrix(RisAngularProfile(0.5, 10.0, 5.0, 4))
        # alpha=10, beta=5: the [-180, 180] window captures all but ~1e-300
        # of the Gaussian mass, so the diagonal is 1 to quadrature accuracy
        assert np.allclose(np.diag(C).real, 1.0, atol=1e-9)
        assert np.allclose(np.diag(C).imag, 0.0, atol=1e-12)

    def test_conjugate_symmetry(self):
        C = ris_correlation_matrix(RisAngularProfile(0.5, 30.0, 12.0, 6))
        assert np.allclose(C, C.conj().T, atol=1e-13)

    def test_against_high_resolution_quadrature(self):
        prof = RisAngularProfile(0.5, 10.0, 5.0, 5)
        C = ris_correlation_matrix(prof)
        phi = np.linspace(-180.0, 180.0, 2_000_001)
        envelope = np.exp(-(phi - prof.alpha) ** 2 / (2 * prof.beta ** 2)) \
            / np.sqrt(2 * np.pi * prof.beta ** 2)
        for q in (1, 3, 4):
            integrand = envelope * np.exp(
                1j * 2 * np.pi * prof.d_c * q * np.sin(np.pi * phi / 180.0))
            ref = np.trapezoid(integrand, phi)
            assert abs(C[q, 0] - ref) < 1e-9

    def test_fig1_reuse_is_psd(self):
        R = ris_correlation_matrix(RisAngularProfile(0.5, 10.0, 5.0, 16))
        w = np.linalg.eigvalsh(R)
        assert w.min() >= -1e-10


class TestPathLoss:
    def test_reference_gain_at_one_meter(self):
        assert path_loss(PathLossParams(db2lin(-20.0), 3.2, 1.0)) == pytest.approx(0.01)

    def test_direct_formula(self):
        val = path_loss(PathLossParams(0.01, 2.1, 10.0))
        assert val == pytest.approx(0.01 * 10 ** -2.1, rel=1e-12)
        assert val == pytest.approx(7.943e-5, rel=1e-3)

    def test_cascaded_below_direct_for_reference_geometry(self):
        # evaluated with the cosine-rule BS-user distance
        for d_ris in (20.0, 24.0, 25.0):
            d_bs = bs_user_distance(d_ris)
            assert cascaded_gain(d_ris) < direct_gain(d_bs)


class TestSelection:
    def test_all_ones_identity(self, rng):
        A = random_correlation(6, rng)
        assert np.allclose(select_submatrix(A, np.ones(6)), A)

    def test_diagonal_pick(self):
        A = np.diag([1.0, 2.0, 3.0])
        out = select_submatrix(A, np.array([1, 0, 1]))
        assert np.allclose(out, np.diag([1.0, 3.0]))

    def test_wrong_cardinality(self):
        with pytest.raises(ConstraintError):
            select_submatrix(np.eye(4), np.array([1, 1, 0, 0]), m=3)
        with pytest.raises(ConstraintError):
            select_submatrix(np.eye(4), np.array([0.5, 0.5, 0, 0]))

    def test_embedded_surrogate_matches_submatrix(self, rng):
        # binary s: the sqrt-sandwich surrogate has exactly the submatrix's
        # nonzero spectrum, and diag(s) A diag(s) with the zero rows/columns
        # removed is the submatrix itself
        for _ in range(5):
            n = 8
            A = random_correlation(n, rng)
            s = np.zeros(n)
            s[rng.choice(n, size=4, replace=False)] = 1.0
            direct = select_submatrix(A, s)
            emb = embed_selection(A, s)
            ev_emb = np.sort(np.linalg.eigvalsh(emb))[-4:]
            ev_dir = np.sort(np.linalg.eigvalsh(direct))
            assert np.allclose(ev_emb, ev_dir, atol=1e-10)
            masked = (A * s[:, None]) * s[None, :]
            idx = np.flatnonzero(s)
            assert np.allclose(masked[np.ix_(idx, idx)], direct)

    def test_relaxed_range_check(self, rng):
        A = random_correlation(4, rng)
        with pytest.raises(ConstraintError):
            embed_selection(A, np.array([1.2, 0.0, 0.0, 0.0]))


class TestEffectiveRisCorrelation:
    def test_identity_case(self):
        _, C = effective_ris_correlation(np.eye(4), None, np.eye(4), 1.0)
        assert np.allclose(C, np.eye(4))

    def test_unitary_invariance_of_spectrum(self, rng):
        C_R = random_correlation(6, rng)
        phi = rng.uniform(0, 2 * np.pi, 6)
        _, C0 = effective_ris_correlation(np.eye(6), None, C_R, 1.0)
        _, C1 = effective_ris_correlation(np.eye(6), phi, C_R, 1.0)
        assert np.allclose(np.linalg.eigvalsh(C0), np.linalg.eigvalsh(C1),
                           atol=1e-10)

    def test_dense_product_oracle(self, rng):
        # independent evaluation via scipy's general matrix square root
        C_L = random_correlation(5, rng)
        C_R = random_correlation(5, rng)
        phi = rng.uniform(0, 2 * np.pi, 5)
        t = 0.7
        _, C = effective_ris_correlation(C_L, phi, C_R, t)
        Phi = np.diag(np.exp(1j * phi))
        half = np.sqrt(t) * sqrtm(C_L) @ Phi @ sqrtm(C_R)
        assert np.allclose(C, half @ half.conj().T, atol=1e-10)

    def test_trace_invariant_for_diagonal_cr(self, rng):
        C_L = random_correlation(5, rng)
        C_R = np.diag(rng.uniform(0.5, 1.5, 5))
        t = 0.9
        tr = None
        for _ in range(3):
            phi = rng.uniform(0, 2 * np.pi, 5)
            _, C = effective_ris_correlation(C_L, phi, C_R, t)
            cur = np.trace(C).real
            if tr is not None:
                assert cur == pytest.approx(tr, rel=1e-12)
            tr = cur


class TestSampling:
    def _scenario(self, rng, u=None, t=None):
        M, K, L = 10, 3, 6
        corr = CorrelationSet(mode="uncommon",
                              R_tot=random_correlation(M, rng),
                              F_tot=[random_correlation(M, rng) for _ in range(K)],
                              C_L=random_correlation(L, rng),
                              C_R=[random_correlation(L, rng) for _ in range(K)])
        return Scenario(dims=Dimensions(M=M, K=K, L=L), correlations=corr,
                        u=np.full(K, 1.0) if u is None else u,
                        t=np.full(K, 0.5) if t is None else t,
                        p=np.ones(K), sigma2=0.5)

    def test_zero_gains_zero_channel(self, rng):
        sc = self._scenario(rng, u=np.zeros(3), t=np.zeros(3))
        sample = sample_channel(sc, None, None, trial_rng(1, 0))
        assert np.all(sample.H == 0)

    def test_second_moments(self, rng):
        sc = self._scenario(rng)
        sampler = ChannelSampler(sc, None, None)
        M, K, L = 10, 3, 6
        trials = 10_000
        acc = np.zeros(K)
        for trial in range(trials):
            s = sampler.draw(trial_rng(99, trial), keep_components=False)
            acc += np.sum(np.abs(s.H) ** 2, axis=0)
        acc /= trials
        corr = sc.correlations
        for k in range(K):
            Ck = effective_ris_correlation(corr.C_L, None, corr.C_R[k],
                                           sc.t[k])[1]
            expect = sc.u[k] * np.trace(corr.F_tot[k]).real / M \
                + np.trace(corr.R_tot).real * np.trace(Ck).real / (M * L)
            # norm^2 of h_k concentrates; 3 sigma with std ~ expect/sqrt(M')
            tol = 3.0 * expect / np.sqrt(trials)
            assert abs(acc[k] - expect) < 3.5 * tol

    def test_seed_determinism(self, rng):
        sc = self._scenario(rng)
        a = sample_channel(sc, None, None, trial_rng(7, 3)).H
        b = sample_channel(sc, None, None, trial_rng(7, 3)).H
        assert np.array_equal(a, b)
        c = sample_channel(sc, None, None, trial_rng(7, 4)).H
        assert not np.array_equal(a, c)

    def test_assembly_identity(self, rng):
        # H columns match the definitional assembly from the retained factors
        sc = self._scenario(rng)
        phi = rng.uniform(0, 2 * np.pi, 6)
        sample = sample_channel(sc, None, phi, trial_rng(5, 1))
        corr = sc.correlations
        for k in range(3):
            Fk_half = psd_sqrt(corr.F_tot[k])
            h = np.sqrt(sc.u[k]) * Fk_half @ sample.W[:, k] \
                + sample.Z[k] @ sample.Y[:, k]
            assert np.allclose(h, sample.H[:, k], atol=1e-12)

    def test_fig1_scenario_shapes(self):
        sc = fig1_scenario(16, 80.0, K=4, L=8)
        assert sc.dims.M == 16 and len(sc.correlations.F_tot) == 4
        assert sc.correlations.F_tot[0].shape == (16, 16)
        assert sc.u.shape == (4,) and np.all(sc.t < sc.u)
