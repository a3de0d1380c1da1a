"""Monte-Carlo oracle: precoders, instantaneous SINR, ESR estimation."""

import numpy as np
import pytest

from fasris import (Dimensions, CorrelationSet, Scenario, build_precoder,
                    empirical_esr, instantaneous_sinr, resolvent_probe,
                    solve_rzf_uncommon, sinr_rzf_uncommon, trial_rng)
from fasris.fixed_point import FeasibilityError
from fasris.scenarios import random_correlation, random_scenario


def rand_H(rng, M, K):
    return (rng.standard_normal((M, K)) + 1j * rng.standard_normal((M, K))) \
        / np.sqrt(2 * M)


class TestBuildPrecoder:
    @pytest.mark.parametrize("kind,z", [("rzf", 0.1), ("zf", None),
                                        ("mrt", None)])
    def test_unit_power(self, rng, kind, z):
        H = rand_H(rng, 12, 5)
        p = rng.uniform(0.5, 2.0, 5)
        G = build_precoder(H, kind, p, z)
        power = np.real(np.einsum("mk,k,mk->", G.conj(), p, G))
        assert abs(power - 1.0) < 1e-12

    def test_zf_nulls_interference(self, rng):
        H = rand_H(rng, 12, 5)
        G = build_precoder(H, "zf", np.ones(5))
        A = H.conj().T @ G
        off = A - np.diag(np.diag(A))
        assert np.abs(off).max() < 1e-10 * np.abs(np.diag(A)).min()

    def test_mrt_single_user(self, rng):
        h = rand_H(rng, 8, 1)
        p = np.array([2.0])
        G = build_precoder(h, "mrt", p)
        expected = h / (np.sqrt(p[0]) * np.linalg.norm(h))
        assert np.allclose(G, expected, atol=1e-14)

    def test_rzf_approaches_zf(self, rng):
        # column-space angle between RZF at tiny z and ZF
        H = rand_H(rng, 12, 4)
        G_rzf = build_precoder(H, "rzf", np.ones(4), 1e-10)
        G_zf = build_precoder(H, "zf", np.ones(4))
        for k in range(4):
            a = G_rzf[:, k] / np.linalg.norm(G_rzf[:, k])
            b = G_zf[:, k] / np.linalg.norm(G_zf[:, k])
            angle = np.arccos(min(1.0, abs(np.vdot(a, b))))
            assert angle < 1e-4

    def test_zf_rank_check(self, rng):
        H = rand_H(rng, 8, 3)
        H[:, 2] = H[:, 1]          # rank deficient
        with pytest.raises(FeasibilityError):
            build_precoder(H, "zf", np.ones(3))
        with pytest.raises(FeasibilityError):
            build_precoder(rand_H(rng, 3, 5), "zf", np.ones(5))


class TestInstantaneousSinr:
    def test_single_user(self, rng):
        H = rand_H(rng, 8, 1)
        G = build_precoder(H, "mrt", np.ones(1))
        p, sigma2 = np.array([1.5]), 0.3
        gam = instantaneous_sinr(H, G, p, sigma2)
        expected = p[0] * abs(H[:, 0].conj() @ G[:, 0]) ** 2 / sigma2
        assert gam[0] == pytest.approx(expected, rel=1e-12)

    def test_zf_interference_negligible(self, rng):
        H = rand_H(rng, 12, 5)
        G = build_precoder(H, "zf", np.ones(5))
        A = np.abs(H.conj().T @ G) ** 2
        signal = np.diag(A)
        interference = A.sum(axis=1) - signal
        assert np.all(interference <= 1e-16 * signal)

    def test_triple_loop_oracle(self, rng):
        H = rand_H(rng, 10, 4)
        G = build_precoder(H, "rzf", np.ones(4), 0.05)
        p = rng.uniform(0.5, 2.0, 4)
        sigma2 = 0.2
        gam = instantaneous_sinr(H, G, p, sigma2)
        for k in range(4):
            sig = p[k] * abs(sum(H[m, k].conjugate() * G[m, k]
                                 for m in range(10))) ** 2
            interf = 0.0
            for i in range(4):
                if i != k:
                    interf += p[i] * abs(sum(H[m, k].conjugate() * G[m, i]
                                             for m in range(10))) ** 2
            assert gam[k] == pytest.approx(sig / (interf + sigma2), rel=1e-12)

    def test_power_scale_invariance(self, rng):
        # the precoder renormalizes with P, so scaling all p_k by c leaves
        # every instantaneous SINR unchanged: only power ratios matter
        H = rand_H(rng, 10, 4)
        p = rng.uniform(0.5, 2.0, 4)
        sigma2, c = 0.2, 3.7
        for kind, z in (("rzf", 0.05), ("zf", None), ("mrt", None)):
            G1 = build_precoder(H, kind, p, z)
            G2 = build_precoder(H, kind, c * p, z)
            g1 = instantaneous_sinr(H, G1, p, sigma2)
            g2 = instantaneous_sinr(H, G2, c * p, sigma2)
            assert np.allclose(g1, g2, rtol=1e-12)
        # joint (P, sigma^2) scaling shifts ZF SINRs by exactly 1/c instead
        Gz = build_precoder(H, "zf", p)
        Gzc = build_precoder(H, "zf", c * p)
        gz = instantaneous_sinr(H, Gz, p, sigma2)
        gzc = instantaneous_sinr(H, Gzc, c * p, c * sigma2)
        assert np.allclose(gzc, gz / c, rtol=1e-12)


class TestEmpiricalEsr:
    def test_zero_gains(self, rng):
        M, K, L = 8, 3, 6
        corr = CorrelationSet(mode="uncommon",
                              R_tot=random_correlation(M, rng),
                              F_tot=[random_correlation(M, rng) for _ in range(K)],
                              C_L=random_correlation(L, rng),
                              C_R=[random_correlation(L, rng) for _ in range(K)])
        sc = Scenario(dims=Dimensions(M=M, K=K, L=L), correlations=corr,
                      u=np.zeros(K), t=np.zeros(K), p=np.ones(K), sigma2=0.5)
        est = empirical_esr(sc, None, None, "mrt", 16, 3)
        assert est.mean == 0.0

    def test_thread_determinism(self, small_uncommon):
        z = 0.2
        e1 = empirical_esr(small_uncommon, None, None, "rzf", 48, 5, z,
                           threads=1)
        e3 = empirical_esr(small_uncommon, None, None, "rzf", 48, 5, z,
                           threads=3)
        assert e1.mean == e3.mean and e1.stderr == e3.stderr

    def test_ci_shrinks_with_trials(self, small_uncommon):
        z = 0.2
        e1 = empirical_esr(small_uncommon, None, None, "rzf", 250, 5, z)
        e4 = empirical_esr(small_uncommon, None, None, "rzf", 1000, 5, z)
        ratio = e4.ci95 / e1.ci95
        assert 0.3 < ratio < 0.75        # ~0.5 with stochastic slack

    def test_needs_two_trials(self, small_uncommon):
        with pytest.raises(ValueError):
            empirical_esr(small_uncommon, None, None, "rzf", 1, 5, 0.2)


class TestConventionCalibration:
    """Pins the factor-M relation between the unit-trace precoder convention
    and the per-antenna convention the deterministic equivalents use.

    With tr(G P G^H) = 1 the instantaneous SINRs match the deterministic
    formulas only after the noise is rescaled by 1/M; empirical_esr applies
    the equivalent sqrt(M) precoder scaling. Both facts are asserted so a
    convention drift cannot pass silently.
    """

    def test_factor_m_between_conventions(self, small_uncommon):
        sc = small_uncommon
        z = sc.dims.K * sc.sigma2 / sc.dims.M
        F_list, R, C_list, p = sc.stats_uncommon()
        sol = solve_rzf_uncommon(F_list, R, C_list, z)
        rep, _ = sinr_rzf_uncommon(sol, F_list, R, C_list, p, sc.sigma2)

        from fasris.channel import ChannelSampler
        sampler = ChannelSampler(sc, None, None)
        M = sc.dims.M
        trials = 1500
        esr_unit, esr_antenna = 0.0, 0.0
        for trial in range(trials):
            H = sampler.draw(trial_rng(17, trial), keep_components=False).H
            G = build_precoder(H, "rzf", p, z)
            gam_unit = instantaneous_sinr(H, G, p, sc.sigma2)
            gam_ant = instantaneous_sinr(H, np.sqrt(M) * G, p, sc.sigma2)
            esr_unit += np.log2(1 + gam_unit).sum()
            esr_antenna += np.log2(1 + gam_ant).sum()
        esr_unit /= trials
        esr_antenna /= trials

        # per-antenna convention reproduces the deterministic equivalent
        assert abs(esr_antenna - rep.esr) / rep.esr < 0.05
        # unit-trace convention matches the DE evaluated at noise M sigma^2
        rep_scaled, _ = sinr_rzf_uncommon(sol, F_list, R, C_list, p,
                                          M * sc.sigma2)
        assert abs(esr_unit - rep_scaled.esr) / rep_scaled.esr < 0.05
        # and the two conventions genuinely differ
        assert abs(esr_unit - rep.esr) / rep.esr > 0.15

    def test_empirical_esr_uses_per_antenna_convention(self, small_uncommon):
        sc = small_uncommon
        z = sc.dims.K * sc.sigma2 / sc.dims.M
        F_list, R, C_list, p = sc.stats_uncommon()
        sol = solve_rzf_uncommon(F_list, R, C_list, z)
        rep, _ = sinr_rzf_uncommon(sol, F_list, R, C_list, p, sc.sigma2)
        est = empirical_esr(sc, None, None, "rzf", 1500, 17, z)
        assert abs(est.mean - rep.esr) / rep.esr < 0.05


class TestResolventProbe:
    def test_identity_large_z(self, rng):
        M, K, L = 8, 3, 6
        corr = CorrelationSet(mode="uncommon", R_tot=np.eye(M),
                              F_tot=[np.eye(M)] * K, C_L=np.eye(L),
                              C_R=[np.eye(L)] * K)
        sc = Scenario(dims=Dimensions(M=M, K=K, L=L), correlations=corr,
                      u=np.full(K, 0.1), t=np.full(K, 0.1), p=np.ones(K),
                      sigma2=0.5)
        z = 1e6
        pr = resolvent_probe(sc, None, None, z, trials=16, seed=2)
        # Q -> I/z, so (1/M) tr(R Q) -> 1/z
        assert abs(pr.delta_hat - 1.0 / z) < 1e-3 / z

    def test_first_order_against_solver(self, small_uncommon):
        sc = small_uncommon
        z = 0.2
        F_list, R, C_list, p = sc.stats_uncommon()
        sol = solve_rzf_uncommon(F_list, R, C_list, z)
        pr = resolvent_probe(sc, None, None, z, trials=800, seed=9)
        assert abs(pr.delta_hat - sol.delta) / sol.delta < 0.03
        assert np.max(np.abs(pr.omega_hat - sol.omega)
                      / np.maximum(sol.omega, 1e-6)) < 0.05
