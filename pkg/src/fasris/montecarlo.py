"""Exact-sample Monte-Carlo oracle: precoders, instantaneous SINR, ESR.

Per realization this builds the RZF/ZF/MRT precoder, normalizes it, and
evaluates the instantaneous SINRs. Precoders returned by build_precoder are
unit-trace (tr(G P G^H) = 1). The ESR estimator then rescales to the
per-antenna convention tr(G P G^H) = M, which is the normalization the
deterministic equivalents are written in; test_montecarlo pins the exact
factor-M relation between the two conventions so it cannot drift silently.

Trials run on counter-based RNG substreams keyed by (seed, trial index), so
the estimate is bit-identical no matter how trials are chunked or threaded.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel import ChannelSampler, Scenario, trial_rng
from .fixed_point import FeasibilityError

RANK_TOL = 1e-10


@dataclass(frozen=True)
class EsrEstimate:
    mean: float
    stderr: float
    ci95: float
    trials: int
    seed: int

    @property
    def per_trial_std(self) -> float:
        return self.stderr * np.sqrt(self.trials)


@dataclass
class ResolventProbe:
    """Monte-Carlo averages of the resolvent trace functionals.

    first-order: delta_hat ~ (1/M)tr(R Q), omega_hat_k ~ (1/L)tr(Z_k Z_k^H Q),
    mu_hat_k adds (1/M)tr(F_k Q). second-order: ups_I_hat_k for K = I_M and
    the bilinear lambda_hat[k,l].
    """

    z: float
    trials: int
    delta_hat: float
    omega_hat: np.ndarray
    mu_hat: np.ndarray
    ups_I_hat: np.ndarray
    lambda_hat: np.ndarray


def build_precoder(H: np.ndarray, kind: str, p: np.ndarray,
                   z: float | None = None) -> np.ndarray:
    """Linear precoder scaled so tr(G P G^H) = 1.

    rzf: (H H^H + z I)^{-1} H; zf: H (H^H H)^{-1}; mrt: H.
    """
    M, K = H.shape
    p = np.asarray(p, dtype=float)
    if kind == "rzf":
        if z is None or z <= 0:
            raise ValueError("rzf needs a positive regularization z")
        G0 = np.linalg.solve(H @ H.conj().T + z * np.eye(M), H)
    elif kind == "zf":
        if M < K:
            raise FeasibilityError(f"ZF infeasible: M={M} < K={K}")
        sv = np.linalg.svd(H, compute_uv=False)
        if sv[-1] < RANK_TOL * sv[0]:
            raise FeasibilityError(
                f"ZF infeasible: H numerically rank deficient "
                f"(sigma_min/sigma_max = {sv[-1] / sv[0]:.3e})")
        G0 = H @ np.linalg.inv(H.conj().T @ H)
    elif kind == "mrt":
        G0 = H.copy()
    else:
        raise ValueError(f"unknown precoder kind {kind!r}")
    power = np.real(np.einsum("mk,k,mk->", G0.conj(), p, G0))
    if power == 0.0:
        return G0          # zero channel: SINRs are zero for any scaling
    return G0 / np.sqrt(power)


def instantaneous_sinr(H: np.ndarray, G: np.ndarray, p: np.ndarray,
                       sigma2: float) -> np.ndarray:
    """gamma_k = p_k |h_k^H g_k|^2 / (sum_{i != k} p_i |h_k^H g_i|^2 + sigma^2)."""
    A = H.conj().T @ G                      # A[k, i] = h_k^H g_i
    p = np.asarray(p, dtype=float)
    powers = p[None, :] * np.abs(A) ** 2
    signal = np.diag(powers).copy()
    interference = powers.sum(axis=1) - signal
    return signal / (interference + sigma2)


def _sum_rate_one(sampler: ChannelSampler, p, sigma2, kind, z, seed, trial,
                  m_scale) -> float:
    sample = sampler.draw(trial_rng(seed, trial), keep_components=False)
    G = build_precoder(sample.H, kind, p, z)
    gam = instantaneous_sinr(sample.H, m_scale * G, p, sigma2)
    return float(np.log2(1.0 + gam).sum())


def empirical_esr(scenario: Scenario, s: np.ndarray | None,
                  phi: np.ndarray | None, kind: str, trials: int, seed: int,
                  z: float | None = None, threads: int = 1) -> EsrEstimate:
    """Monte-Carlo ESR estimate with standard error.

    The per-antenna power convention (tr(G P G^H) = M) matches the
    deterministic equivalents; it is applied by scaling the unit-trace
    precoder by sqrt(M) before the SINR evaluation. Results are identical
    for any thread count because every trial owns an RNG substream and the
    reduction runs over a trial-indexed array.
    """
    if trials < 2:
        raise ValueError("need at least 2 trials for a standard error")
    sampler = ChannelSampler(scenario, s, phi)
    m_scale = np.sqrt(sampler.M)
    rates = np.empty(trials)

    def run_block(block):
        lo, hi = block
        for trial in range(lo, hi):
            rates[trial] = _sum_rate_one(sampler, scenario.p, scenario.sigma2,
                                         kind, z, seed, trial, m_scale)

    if threads <= 1:
        run_block((0, trials))
    else:
        bounds = np.linspace(0, trials, threads + 1).astype(int)
        blocks = [(bounds[i], bounds[i + 1]) for i in range(threads)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_block, blocks))

    mean = float(np.add.reduce(rates) / trials)
    var = float(np.add.reduce((rates - mean) ** 2) / (trials - 1))
    stderr = np.sqrt(var / trials)
    return EsrEstimate(mean=mean, stderr=stderr, ci95=1.96 * stderr,
                       trials=trials, seed=seed)


def resolvent_probe(scenario: Scenario, s: np.ndarray | None,
                    phi: np.ndarray | None, z: float, trials: int,
                    seed: int) -> ResolventProbe:
    """Monte-Carlo estimates of the first/second-order resolvent traces.

    Q = (z I + H H^H)^{-1}; Z_k is the cascaded factor R^{1/2} X C_k^{+/2}.
    Used to validate the fixed-point solutions (first order) and the
    Pi/Delta interference blocks (second order, bilinear traces).
    """
    if z <= 0:
        raise ValueError("resolvent probe needs z > 0")
    sampler = ChannelSampler(scenario, s, phi)
    M, K, L = sampler.M, sampler.K, sampler.L
    R = scenario.select_R(s)
    # gain-weighted direct covariances F_k = u_k F_{c,k}
    F_stack = np.stack([sampler.F_half[k] @ sampler.F_half[k].conj().T
                        for k in range(K)])

    delta_acc = 0.0
    omega_acc = np.zeros(K)
    mu_acc = np.zeros(K)
    upsI_acc = np.zeros(K)
    lam_acc = np.zeros((K, K))
    for trial in range(trials):
        sample = sampler.draw(trial_rng(seed, trial), keep_components=True)
        H = sample.H
        Q = np.linalg.inv(z * np.eye(M) + H @ H.conj().T)
        Z = np.stack(sample.Z)                          # (K, M, L)
        delta_acc += np.real(np.trace(R @ Q)) / M
        QZ = np.einsum("mn,knl->kml", Q, Z)
        omega_t = np.real(np.einsum("kml,kml->k", Z.conj(), QZ)) / L
        omega_acc += omega_t
        trF = np.real(np.einsum("kij,ji->k", F_stack, Q)) / M
        mu_acc += trF + omega_t
        Q2 = Q @ Q
        Q2Z = np.einsum("mn,knl->kml", Q2, Z)
        upsI_acc += np.real(np.einsum("kml,kml->k", Z.conj(), Q2Z)) / L \
            + np.real(np.einsum("kij,ji->k", F_stack, Q2)) / M
        lam_acc += _bilinear_traces(Z, QZ, F_stack, L, M)
    n = float(trials)
    return ResolventProbe(z=z, trials=trials, delta_hat=delta_acc / n,
                          omega_hat=omega_acc / n, mu_hat=mu_acc / n,
                          ups_I_hat=upsI_acc / n, lambda_hat=lam_acc / n)


def _bilinear_traces(Z, QZ, F_stack, L, M) -> np.ndarray:
    """lambda[k,l] = (1/L)tr(Z_k Z_k^H Q Z_l Z_l^H Q) + (1/M)tr(Z_k Z_k^H Q F_l Q)."""
    K = Z.shape[0]
    # S[k,l] = Z_k^H Q Z_l; tr(Z_k Z_k^H Q Z_l Z_l^H Q) = tr(S[k,l] S[l,k])
    S = np.einsum("kma,lmb->klab", Z.conj(), QZ)
    term1 = np.real(np.einsum("klab,lkba->kl", S, S)) / L
    # tr(Z_k Z_k^H Q F_l Q) = tr((Q Z_k)^H F_l (Q Z_k)) with Q Hermitian
    term2 = np.empty((K, K))
    for l in range(K):
        FQZ = np.einsum("ij,kjl->kil", F_stack[l], QZ)
        term2[:, l] = np.real(np.einsum("kml,kml->k", QZ.conj(), FQZ)) / M
    return term1 + term2
