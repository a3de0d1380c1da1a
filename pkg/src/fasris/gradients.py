"""Analytic derivatives of the deterministic ESR.

Phase-shift gradients for the RZF rate (shared and per-user correlation)
and the ZF rate, plus port-selection gradients of the ZF rate through the
relaxed diag(s) embedding. The scalar sensitivities come from implicit
differentiation of the fixed-point systems (the same Pi / Pi_com matrices
used by the interference blocks); the rest is chain rule through the
second-order terms. Every path is pinned to central finite differences of
the full rate evaluation in the test suite, which is the arbiter whenever
a printed formula and the chain rule disagree.

Rates are in bits, so every gradient carries a 1/ln(2).
"""

from __future__ import annotations

import numpy as np

from .channel import herm, phase_matrix, psd_sqrt
from .fixed_point import ZfCommonSolution, ZfUncommonSolution
from .rates import SecondOrderCommon, SecondOrderUncommon, _solve_checked

LN2 = np.log(2.0)


# ---------------------------------------------------------------------------
# phase-shift perturbation matrices
# ---------------------------------------------------------------------------

def gradient_G_l(phi: np.ndarray, l: int) -> np.ndarray:
    """Entry-wise phase derivative pattern of Phi C Phi^H at angle l.

    Row l holds j e^{j(phi_l - phi_q)}, column l holds -j e^{j(phi_p - phi_l)},
    the diagonal (where the two cases collide) is 0. Hermitian.
    """
    L = len(phi)
    G = np.zeros((L, L), dtype=complex)
    G[l, :] = 1j * np.exp(1j * (phi[l] - phi))
    G[:, l] = -1j * np.exp(1j * (phi - phi[l]))
    G[l, l] = 0.0
    return G


def phase_perturbation(CL_root: np.ndarray, C_R: np.ndarray, phi: np.ndarray,
                       l: int) -> np.ndarray:
    """dC/dphi_l for C = C_L^{1/2} Phi C_R Phi^H C_L^{1/2}.

    Equals C_L^{1/2} (G_l o C_R) C_L^{1/2} with o the entry-wise product;
    G_l o C_R is supported on row/column l only, so the result is the
    Hermitian rank-<=2 matrix w s^T + (w s^T)^H.
    """
    b = 1j * np.exp(1j * (phi[l] - phi)) * C_R[l, :]
    b[l] = 0.0
    w = CL_root[:, l]
    s = CL_root.T @ b
    ws = np.outer(w, s)
    return ws + ws.conj().T


def _tr2(A: np.ndarray, B: np.ndarray) -> float:
    """Re tr(A B) via a flat dot; A, B square."""
    return float(np.real(np.sum(A * B.T)))


# ---------------------------------------------------------------------------
# shared-correlation phase gradient (RZF)
# ---------------------------------------------------------------------------

def esr_gradient_phases_common(so: SecondOrderCommon, C_L: np.ndarray,
                               C_R: np.ndarray, phi: np.ndarray,
                               sigma2: float) -> np.ndarray:
    """d ESR_RZF / d phi_l, shared-correlation regime (bits)."""
    sol = so.sol
    u, t, p = so.u, so.t, so.p
    F, R, C = so.F, so.R, so.C
    M = sol.m_norm
    L = C.shape[0]
    delta, kappa, omega = sol.delta, sol.kappa, sol.omega
    kappa_bar, omega_bar = sol.kappa_bar, sol.omega_bar
    Psi_R, Psi_C, psi_T = sol.Psi_R, sol.Psi_C, sol.psi_T

    if delta == 0.0 or omega_bar == 0.0:
        return np.zeros(len(phi))          # no cascaded link: rate ignores Phi

    CL_root = psd_sqrt(C_L, "C_L")
    mu = sol.mu_k(u, t)
    one_mu = 1.0 + mu
    gam, Dk = _common_sinr_parts(so, sigma2)

    # l-independent products
    RP = R @ Psi_R
    FP = F @ Psi_R
    CP = C @ Psi_C
    PCC = Psi_C @ CP                        # Psi_C C Psi_C
    Psi_C2 = Psi_C @ Psi_C
    a = L * omega * omega_bar / (M * delta ** 2)
    lam_zz = (so.Xi + (L / M) * so.Xi * so.eta_TU * so.x_F[2]
              + (L / M) * so.Xi_I * so.x_R[2] / delta ** 2) / so.Delta
    tt = np.outer(t, t)
    tu = np.outer(t, u)
    uu = np.outer(u, u)

    grad = np.zeros(len(phi))
    for l in range(len(phi)):
        A_l = phase_perturbation(CL_root, C_R, phi, l)
        U_Al = _tr2(A_l, Psi_C) / L - omega_bar * _tr2(A_l, PCC) / L
        d_, k_, o_ = _solve_checked(so.Pi_com, np.array([0.0, 0.0, U_Al]), "Pi_com")

        kb_ = -(k_ * so.eta_UU + o_ * so.eta_TU)
        ob_ = -(k_ * so.eta_TU + o_ * so.eta_TT)

        dPsiR_inv = (L / M) * ((o_ * omega_bar + omega * ob_) / delta
                               - omega * omega_bar * d_ / delta ** 2) * R \
            + (L / M) * kb_ * F
        PsiR_ = -Psi_R @ dPsiR_inv @ Psi_R
        dPsiC_inv = (-d_ / delta ** 2) * np.eye(L) + ob_ * C + omega_bar * A_l
        PsiC_ = -Psi_C @ dPsiC_inv @ Psi_C
        psiT_ = -(o_ * t + k_ * u) * psi_T ** 2

        RP_ = R @ PsiR_
        FP_ = F @ PsiR_
        chi_RR_ = (_tr2(RP_, RP) + _tr2(RP, RP_)) / M
        chi_RF_ = (_tr2(RP_, FP) + _tr2(RP, FP_)) / M
        chi_FF_ = (_tr2(FP_, FP) + _tr2(FP, FP_)) / M
        chi_RI_ = (_tr2(RP_, Psi_R) + _tr2(RP, PsiR_)) / M
        chi_FI_ = (_tr2(FP_, Psi_R) + _tr2(FP, PsiR_)) / M

        def eta_(a_vec, b_vec):
            return 2.0 * float(np.sum(a_vec * b_vec * psi_T * psiT_)) / L

        eta_TT_, eta_TU_, eta_UU_ = eta_(t, t), eta_(t, u), eta_(u, u)
        eta_PT_, eta_PU_ = eta_(p, t), eta_(p, u)

        CP_ = A_l @ Psi_C + C @ PsiC_
        Xi_ = 2.0 * _tr2(CP_, CP) / L
        Xi_I_ = (_tr2(A_l, Psi_C2) + 2.0 * _tr2(CP, PsiC_)) / L
        Delta_ = -Xi_ * so.eta_TT - so.Xi * eta_TT_

        # entry-wise derivative of Pi_com
        a_ = (L / (M * delta ** 2)) * (o_ * omega_bar + omega * ob_) \
            - 2.0 * a * d_ / delta
        w_omega = omega_bar - omega * so.eta_TT
        w_omega_ = ob_ - o_ * so.eta_TT - omega * eta_TT_

        def ups(chi_RA, chi_FA):
            return (L * omega / (M * delta)) * chi_RA * so.eta_TU \
                + (L / M) * chi_FA * so.eta_UU

        def ups_(chi_RA, chi_FA, chi_RA_, chi_FA_):
            return (L / M) * ((o_ / delta - omega * d_ / delta ** 2)
                              * chi_RA * so.eta_TU
                              + (omega / delta) * (chi_RA_ * so.eta_TU
                                                   + chi_RA * eta_TU_)) \
                + (L / M) * (chi_FA_ * so.eta_UU + chi_FA * eta_UU_)

        def lam_(chi_RA, chi_FA, chi_RA_, chi_FA_):
            return (L / M) * (chi_FA_ * so.eta_TU + chi_FA * eta_TU_) \
                - (L / M) * (-d_ / delta ** 2 * chi_RA * w_omega
                             + chi_RA_ * w_omega / delta
                             + chi_RA * w_omega_ / delta)

        Pi_ = np.array([
            [-(a_ * so.chi_RR + a * chi_RR_),
             -ups_(so.chi_RR, so.chi_RF, chi_RR_, chi_RF_),
             -lam_(so.chi_RR, so.chi_RF, chi_RR_, chi_RF_)],
            [-(a_ * so.chi_RF + a * chi_RF_),
             -ups_(so.chi_RF, so.chi_FF, chi_RF_, chi_FF_),
             -lam_(so.chi_RF, so.chi_FF, chi_RF_, chi_FF_)],
            [-(Xi_I_ / delta ** 2 - 2.0 * so.Xi_I * d_ / delta ** 3),
             -(Xi_ * so.eta_TU + so.Xi * eta_TU_),
             -(Xi_ * so.eta_TT + so.Xi * eta_TT_)],
        ])

        def x_prime(x, chi_vec_):
            return _solve_checked(so.Pi_com, chi_vec_ - Pi_ @ x, "Pi_com")

        x_R_ = x_prime(so.x_R, np.array([chi_RR_, chi_RF_, 0.0]))
        x_F_ = x_prime(so.x_F, np.array([chi_RF_, chi_FF_, 0.0]))
        x_I_ = x_prime(so.x_I, np.array([chi_RI_, chi_FI_, 0.0]))

        lam_zz_ = ((Xi_ + (L / M) * (Xi_ * so.eta_TU * so.x_F[2]
                                     + so.Xi * eta_TU_ * so.x_F[2]
                                     + so.Xi * so.eta_TU * x_F_[2])
                    + (L / M) * (Xi_I_ * so.x_R[2] / delta ** 2
                                 + so.Xi_I * x_R_[2] / delta ** 2
                                 - 2.0 * so.Xi_I * so.x_R[2] * d_ / delta ** 3))
                   - lam_zz * Delta_) / so.Delta
        Psi_kl_ = tt * lam_zz_ + (L / M) * (tu.T + tu) * x_F_[2] \
            + (L / M) * uu * x_F_[1]
        Cbar_ = (L / M) * (eta_PT_ * so.x_I[2] + so.eta_PT * x_I_[2]
                           + eta_PU_ * so.x_I[1] + so.eta_PU * x_I_[1])

        mu_ = t * o_ + u * k_
        grad[l] = _sinr_chain(gam, Dk, p, mu, mu_, so.Psi_kl, Psi_kl_,
                              so.Cbar, Cbar_, sigma2, L)
    return grad


def _common_sinr_parts(so: SecondOrderCommon, sigma2: float):
    """(sinr, denominator) of the shared-correlation RZF rate."""
    sol = so.sol
    L = so.C.shape[0]
    mu = sol.mu_k(so.u, so.t)
    one_mu2 = (1.0 + mu) ** 2
    interf = (so.Psi_kl / (L * one_mu2[None, :])) @ so.p \
        - np.diag(so.Psi_kl) * so.p / (L * one_mu2)
    Dk = interf + sigma2 * one_mu2 * so.Cbar
    return so.p * mu ** 2 / Dk, Dk


def _sinr_chain(gam, Dk, p, mu, mu_, Psi_kl, Psi_kl_, Cbar, Cbar_, sigma2, L):
    """Quotient rule through gamma_k = p_k mu_k^2 / D_k, summed into dESR (bits)."""
    one_mu = 1.0 + mu
    W = Psi_kl_ / (L * one_mu[None, :] ** 2) \
        - 2.0 * Psi_kl * mu_[None, :] / (L * one_mu[None, :] ** 3)
    interf_ = W @ p - np.diag(W) * p
    Dk_ = interf_ + sigma2 * (2.0 * one_mu * mu_ * Cbar + one_mu ** 2 * Cbar_)
    gam_ = p * (2.0 * mu * mu_ * Dk - mu ** 2 * Dk_) / Dk ** 2
    return float(np.sum(gam_ / (1.0 + gam)) / LN2)


# ---------------------------------------------------------------------------
# per-user-correlation phase gradient (RZF)
# ---------------------------------------------------------------------------

def esr_gradient_phases_uncommon(so: SecondOrderUncommon,
                                 C_list: list[np.ndarray], C_L: np.ndarray,
                                 C_R_list: list[np.ndarray], t: np.ndarray,
                                 phi: np.ndarray, p: np.ndarray,
                                 sigma2: float) -> np.ndarray:
    """d ESR_RZF / d phi_l, per-user-correlation regime (bits)."""
    sol = so.sol
    F_list, R = so.F_list, so.R
    K = len(F_list)
    M = sol.m_norm
    L = C_L.shape[0]
    mu, omega, delta = sol.mu, sol.omega, sol.delta
    Psi_R, Psi_C = sol.Psi_R, sol.Psi_C
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)

    if delta == 0.0 or np.all(t == 0.0):
        return np.zeros(len(phi))

    CL_root = psd_sqrt(C_L, "C_L")
    one_mu = 1.0 + mu
    one_mu2 = one_mu ** 2
    gam, Dk = _uncommon_sinr_parts(so, p, sigma2, L)

    # l-independent pieces
    E, ER, D = so.E, so.ER, so.D                       # F_k Psi_R, R Psi_R, C_k Psi_C
    P2 = np.einsum("ij,kjl->kil", Psi_C, D)            # Psi_C C_k Psi_C
    Psi_C2 = Psi_C @ Psi_C
    dinv = 1.0 / delta
    dinv2 = dinv * dinv
    # base W of the interference solve (recomputed: cheap at these sizes)
    B_base, W_base = _uncommon_interference_rhs(so, L, M)

    grad = np.zeros(len(phi))
    for l in range(len(phi)):
        A = np.stack([t[k] * phase_perturbation(CL_root, C_R_list[k], phi, l)
                      for k in range(K)])               # dC_k/dphi_l

        # explicit part of each omega_m
        trAP = np.real(np.einsum("kij,ji->k", A, Psi_C)) / L
        trP2A = np.real(np.einsum("mij,kji->mk", P2, A)) / L   # tr(A_k Psi_C C_m Psi_C)/L
        e_om = trAP - np.sum(trP2A / one_mu[None, :], axis=1) / L
        S = float(np.sum(e_om / (M * delta * one_mu)))

        n = np.empty(K + 1)
        n[:K] = e_om - so.chi_FR * S
        n[K] = -so.chi_RR * S
        w_sol = _solve_checked(so.Pi, n, "Pi")
        mu_, d_ = w_sol[:K], w_sol[K]

        om_ = e_om + so.Xi_I * d_ * dinv2 + (so.Xi / (L * one_mu2[None, :])) @ mu_

        dPsiR_inv = np.einsum("k,kij->ij", -mu_ / (M * one_mu2), np.stack(F_list))
        coefR = np.sum(om_ / (delta * one_mu) - omega * d_ / (delta ** 2 * one_mu)
                       - omega * mu_ / (delta * one_mu2)) / M
        dPsiR_inv = dPsiR_inv + coefR * R
        PsiR_ = -Psi_R @ dPsiR_inv @ Psi_R

        dPsiC_inv = (-d_ * dinv2) * np.eye(L) \
            + np.einsum("k,kij->ij", 1.0 / (L * one_mu), A) \
            - np.einsum("k,kij->ij", mu_ / (L * one_mu2), np.stack(C_list))
        PsiC_ = -Psi_C @ dPsiC_inv @ Psi_C

        E_ = np.einsum("kij,jl->kil", np.stack(F_list), PsiR_)
        ER_ = R @ PsiR_
        chi_FF_ = np.real(np.einsum("kij,lji->kl", E_, E)
                          + np.einsum("kij,lji->kl", E, E_)) / M
        chi_FR_ = np.real(np.einsum("kij,ji->k", E_, ER)
                          + np.einsum("kij,ji->k", E, ER_)) / M
        chi_RR_ = 2.0 * np.real(np.einsum("ij,ji->", ER_, ER)) / M
        chi_FI_ = np.real(np.einsum("kij,ji->k", E_, Psi_R)
                          + np.einsum("kij,ji->k", E, PsiR_)) / M
        chi_RI_ = float(np.real(np.einsum("ij,ji->", ER_, Psi_R)
                                + np.einsum("ij,ji->", ER, PsiR_)) / M)

        D_ = np.einsum("kij,jl->kil", A, Psi_C) \
            + np.einsum("kij,jl->kil", np.stack(C_list), PsiC_)
        Xi_ = np.real(np.einsum("kij,lji->kl", D_, D)
                      + np.einsum("kij,lji->kl", D, D_)) / L
        Xi_I_ = np.real(np.einsum("kij,ji->k", D_, Psi_C)
                        + np.einsum("kij,ji->k", D, PsiC_)) / L

        Pi_ = _uncommon_pi_prime(so, mu_, d_, om_, chi_FF_, chi_FR_, chi_RR_,
                                 Xi_, Xi_I_, M, L)

        ups_I_ = _solve_checked(
            so.Pi, np.concatenate([chi_FI_, [chi_RI_]]) - Pi_ @ so.ups_I, "Pi")
        Cbar_ = float(np.sum(p * (ups_I_[:K] / one_mu2
                                  - 2.0 * so.ups_I[:K] * mu_ / one_mu ** 3)) / M)

        B_ = _uncommon_interference_rhs_prime(so, mu_, d_, om_, Xi_, Xi_I_,
                                        chi_FF_, chi_FR_, chi_RR_, M, L)
        W_ = _solve_checked(so.Pi, B_ - Pi_ @ W_base, "Pi")
        W_adj = W_base[:K, :].copy()
        W_adj[np.diag_indices(K)] -= mu
        W_adj_ = W_[:K, :].copy()
        W_adj_[np.diag_indices(K)] -= mu_
        Psi_kl_ = -L * (2.0 * one_mu * mu_)[None, :] * W_adj \
            - L * one_mu2[None, :] * W_adj_

        grad[l] = _sinr_chain(gam, Dk, p, mu, mu_, so.Psi_kl, Psi_kl_,
                              so.Cbar, Cbar_, sigma2, L)
    return grad


def _uncommon_sinr_parts(so: SecondOrderUncommon, p, sigma2, L):
    mu = so.sol.mu
    one_mu2 = (1.0 + mu) ** 2
    interf = (so.Psi_kl / (L * one_mu2[None, :])) @ p \
        - np.diag(so.Psi_kl) * p / (L * one_mu2)
    Dk = interf + sigma2 * one_mu2 * so.Cbar
    return p * mu ** 2 / Dk, Dk


def _uncommon_interference_rhs(so: SecondOrderUncommon, L, M):
    """RHS matrix of the interference solve and its solution W."""
    sol = so.sol
    K = len(so.F_list)
    mu, omega, delta = sol.mu, sol.omega, sol.delta
    one_mu = 1.0 + mu
    B = np.zeros((K + 1, K))
    for l in range(K):
        e_om = -so.Xi[:, l] / (L * one_mu[l])
        e_om[l] += omega[l]
        S_l = np.sum(e_om / (M * delta * one_mu)) if delta > 0 else 0.0
        B[:K, l] = e_om - so.chi_FF[:, l] / (M * one_mu[l]) - so.chi_FR * S_l
        B[l, l] += mu[l] - omega[l]
        B[K, l] = -so.chi_FR[l] / (M * one_mu[l]) - so.chi_RR * S_l
    W = _solve_checked(so.Pi, B, "Pi")
    return B, W


def _uncommon_pi_prime(so, mu_, d_, om_, chi_FF_, chi_FR_, chi_RR_, Xi_, Xi_I_,
                       M, L):
    sol = so.sol
    K = len(so.F_list)
    mu, omega, delta = sol.mu, sol.omega, sol.delta
    one_mu = 1.0 + mu
    one_mu2 = one_mu ** 2
    c = 1.0 / one_mu2
    c_ = -2.0 * mu_ / one_mu ** 3
    dinv2 = 1.0 / delta ** 2
    dinv2_ = -2.0 * d_ / delta ** 3

    Pi_ = np.zeros((K + 1, K + 1))
    core = so.Xi_I[None, :] * dinv2 * so.chi_FR[:, None] + so.chi_FF
    core_ = (Xi_I_[None, :] * dinv2 + so.Xi_I[None, :] * dinv2_) \
        * so.chi_FR[:, None] + so.Xi_I[None, :] * dinv2 * chi_FR_[:, None] + chi_FF_
    Pi_[:K, :K] = -(Xi_ * c[None, :] + so.Xi * c_[None, :]) / L \
        - (core_ * c[None, :] + core * c_[None, :]) / M
    coreR = so.Xi_I * dinv2 * so.chi_RR + so.chi_FR
    coreR_ = (Xi_I_ * dinv2 + so.Xi_I * dinv2_) * so.chi_RR \
        + so.Xi_I * dinv2 * chi_RR_ + chi_FR_
    Pi_[K, :K] = -(coreR_ * c + coreR * c_) / M

    wI = (omega - so.Xi_I / delta) / (M * delta ** 2 * one_mu)
    wI_ = (om_ - Xi_I_ / delta + so.Xi_I * d_ / delta ** 2) \
        / (M * delta ** 2 * one_mu) \
        + (omega - so.Xi_I / delta) * (-2.0 * d_ / (M * delta ** 3 * one_mu)
                                       - mu_ / (M * delta ** 2 * one_mu2))
    sw, sw_ = np.sum(wI), np.sum(wI_)
    Pi_[:K, K] = -Xi_I_ * dinv2 - so.Xi_I * dinv2_ \
        - (sw_ * so.chi_FR + sw * chi_FR_)
    Pi_[K, K] = -(sw_ * so.chi_RR + sw * chi_RR_)
    return Pi_


def _uncommon_interference_rhs_prime(so, mu_, d_, om_, Xi_, Xi_I_, chi_FF_, chi_FR_,
                               chi_RR_, M, L):
    sol = so.sol
    K = len(so.F_list)
    mu, omega, delta = sol.mu, sol.omega, sol.delta
    one_mu = 1.0 + mu
    B_ = np.zeros((K + 1, K))
    for l in range(K):
        e_om = -so.Xi[:, l] / (L * one_mu[l])
        e_om[l] += omega[l]
        e_om_ = -Xi_[:, l] / (L * one_mu[l]) + so.Xi[:, l] * mu_[l] / (L * one_mu[l] ** 2)
        e_om_[l] += om_[l]
        S_l = np.sum(e_om / (M * delta * one_mu))
        S_l_ = np.sum(e_om_ / (M * delta * one_mu)
                      + e_om * (-d_ / (M * delta ** 2 * one_mu)
                                - mu_ / (M * delta * one_mu ** 2)))
        B_[:K, l] = e_om_ - chi_FF_[:, l] / (M * one_mu[l]) \
            + so.chi_FF[:, l] * mu_[l] / (M * one_mu[l] ** 2) \
            - (chi_FR_ * S_l + so.chi_FR * S_l_)
        B_[l, l] += mu_[l] - om_[l]
        B_[K, l] = -chi_FR_[l] / (M * one_mu[l]) \
            + so.chi_FR[l] * mu_[l] / (M * one_mu[l] ** 2) \
            - (chi_RR_ * S_l + so.chi_RR * S_l_)
    return B_


# ---------------------------------------------------------------------------
# ZF phase gradient (shared correlation)
# ---------------------------------------------------------------------------

def zf_common_pi(sol: ZfCommonSolution, F, R, C, u, t):
    """Pi_com analogue at the ZF (z->0 scaled) point, plus the trace tables."""
    M = sol.m_norm
    L = C.shape[0]
    delta, omega, omega_bar = sol.delta_u, sol.omega_u, sol.omega_bar_u
    Psi_R, Psi_C, psi_T = sol.Psi_R, sol.Psi_C, sol.psi_T

    RP = R @ Psi_R
    FP = F @ Psi_R
    CP = C @ Psi_C
    chi_RR = float(np.real(np.sum(RP * RP.T)) / M)
    chi_RF = float(np.real(np.sum(RP * FP.T)) / M)
    chi_FF = float(np.real(np.sum(FP * FP.T)) / M)
    psi2 = psi_T ** 2
    eta_TT = float(np.sum(t * t * psi2) / L)
    eta_TU = float(np.sum(t * u * psi2) / L)
    eta_UU = float(np.sum(u * u * psi2) / L)
    Xi = float(np.real(np.sum(CP * CP.T)) / L)
    Xi_I = float(np.real(np.sum(CP * Psi_C.T)) / L)

    dinv = 0.0 if delta == 0 else 1.0 / delta
    a = L * omega * omega_bar * dinv ** 2 / M

    def ups(chi_RA, chi_FA):
        return (L * omega * dinv / M) * chi_RA * eta_TU + (L / M) * chi_FA * eta_UU

    def lam(chi_RA, chi_FA):
        return (L / M) * chi_FA * eta_TU \
            - (L * dinv / M) * chi_RA * (omega_bar - omega * eta_TT)

    Pi = np.array([
        [1.0 - a * chi_RR, -ups(chi_RR, chi_RF), -lam(chi_RR, chi_RF)],
        [-a * chi_RF, 1.0 - ups(chi_RF, chi_FF), -lam(chi_RF, chi_FF)],
        [-Xi_I * dinv ** 2, -Xi * eta_TU, 1.0 - Xi * eta_TT],
    ])
    return Pi


def esr_gradient_phases_zf_common(sol: ZfCommonSolution, F, R, C_L, C_R,
                                  phi, u, t, p, sigma2) -> np.ndarray:
    """d ESR_ZF / d phi_l, shared correlation (bits)."""
    u = np.asarray(u, dtype=float)
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    L = len(phi)
    if sol.delta_u == 0.0 or sol.omega_bar_u == 0.0 or np.all(t == 0.0):
        return np.zeros(L)
    CL_root = psd_sqrt(C_L, "C_L")
    Phi = phase_matrix(phi, L)
    C = herm(CL_root @ Phi @ C_R @ Phi.conj().T @ CL_root)
    Pi = zf_common_pi(sol, F, R, C, u, t)
    Psi_C = sol.Psi_C
    CP = C @ Psi_C
    PCC = Psi_C @ CP
    mu = sol.mu_k(u, t)
    SS = float(np.sum(p / (sol.m_norm * mu)))
    gam = p / (sigma2 * SS)

    grad = np.zeros(L)
    for l in range(L):
        A_l = phase_perturbation(CL_root, C_R, phi, l)
        U_Al = _tr2(A_l, Psi_C) / L - sol.omega_bar_u * _tr2(A_l, PCC) / L
        _, k_, o_ = _solve_checked(Pi, np.array([0.0, 0.0, U_Al]), "Pi_com(zf)")
        mu_ = u * k_ + t * o_
        SS_ = -float(np.sum(p * mu_ / (sol.m_norm * mu ** 2)))
        gam_ = -gam * SS_ / SS
        grad[l] = float(np.sum(gam_ / (1.0 + gam)) / LN2)
    return grad


# ---------------------------------------------------------------------------
# port-selection gradients (ZF, relaxed diag(s) embedding)
# ---------------------------------------------------------------------------

def esr_gradient_ports_zf_common(sol: ZfCommonSolution, R_root, F_root,
                                 R_emb, F_emb, C, u, t, p, sigma2) -> np.ndarray:
    """d ESR_ZF / d s_i through R(s) = R^{1/2} diag(s) R^{1/2} (and F alike).

    sol must be the ZF solution on the embedded matrices with m_norm = M
    (the RF-chain count). Returns the full-length gradient over ports.
    """
    u = np.asarray(u, dtype=float)
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    M = sol.m_norm
    L = C.shape[0]
    Psi = sol.Psi_R
    kappa_bar, omega, omega_bar, delta = (sol.kappa_bar_u, sol.omega_u,
                                          sol.omega_bar_u, sol.delta_u)
    Pi = zf_common_pi(sol, F_emb, R_emb, C, u, t)

    RPsi = R_root @ Psi
    FPsi = F_root @ Psi
    mid_R = Psi @ R_emb @ Psi
    mid_F = Psi @ F_emb @ Psi
    d_RR = np.real(np.einsum("ij,ji->i", RPsi, R_root))
    d_FF = np.real(np.einsum("ij,ji->i", FPsi, F_root))
    d_FRF = np.real(np.einsum("ij,jk,ki->i", F_root, mid_R, F_root))
    d_RRR = np.real(np.einsum("ij,jk,ki->i", R_root, mid_R, R_root))
    d_FFF = np.real(np.einsum("ij,jk,ki->i", F_root, mid_F, F_root))
    d_RFR = np.real(np.einsum("ij,jk,ki->i", R_root, mid_F, R_root))

    cW = L * omega * omega_bar / (M * delta) if delta > 0 else 0.0
    B = np.vstack([
        d_RR / M - (L * kappa_bar / M ** 2) * d_FRF - (cW / M) * d_RRR,
        d_FF / M - (L * kappa_bar / M ** 2) * d_FFF - (cW / M) * d_RFR,
        np.zeros(len(d_RR)),
    ])
    V = _solve_checked(Pi, B, "Pi_com(zf)")
    mu = sol.mu_k(u, t)
    mu_i = u[:, None] * V[1][None, :] + t[:, None] * V[2][None, :]   # (K, M_tot)
    SS = float(np.sum(p / (M * mu)))
    gam = p / (sigma2 * SS)
    SS_i = -np.einsum("k,ki->i", p / (M * mu ** 2), mu_i)
    gam_i = -np.outer(gam / SS, SS_i)
    return np.einsum("ki,k->i", gam_i, 1.0 / (1.0 + gam)) / LN2


def zf_uncommon_pi(sol: ZfUncommonSolution, F_list, R, C_list):
    """(K+1) Pi analogue at the per-user ZF point, plus chi tables."""
    K = len(F_list)
    M = sol.m_norm
    L = C_list[0].shape[0]
    mu, omega, delta = sol.mu_u, sol.omega_u, sol.delta_u
    K_R, K_C = sol.K_R, sol.K_C

    E = np.stack([F @ K_R for F in F_list])
    ER = R @ K_R
    D = np.stack([C @ K_C for C in C_list])
    chi_FF = np.real(np.einsum("kij,lji->kl", E, E)) / M
    chi_FR = np.real(np.einsum("kij,ji->k", E, ER)) / M
    chi_RR = float(np.real(np.einsum("ij,ji->", ER, ER)) / M)
    Xi = np.real(np.einsum("kij,lji->kl", D, D)) / L
    Xi_I = np.real(np.einsum("kij,ji->k", D, K_C)) / L

    dinv = 0.0 if delta == 0 else 1.0 / delta
    dinv2 = dinv * dinv
    mu2 = mu ** 2
    wI = (omega - Xi_I * dinv) * dinv2 / (M * mu) if delta > 0 else np.zeros(K)
    Pi = np.zeros((K + 1, K + 1))
    Pi[:K, :K] = np.eye(K) - Xi / (L * mu2[None, :]) \
        - (Xi_I[None, :] * dinv2 * chi_FR[:, None] + chi_FF) / (M * mu2[None, :])
    Pi[K, :K] = -(Xi_I * dinv2 * chi_RR + chi_FR) / (M * mu2)
    Pi[:K, K] = -Xi_I * dinv2 - np.sum(wI) * chi_FR
    Pi[K, K] = 1.0 - np.sum(wI) * chi_RR
    return Pi


def esr_gradient_ports_zf_uncommon(sol: ZfUncommonSolution, R_root,
                                   F_roots: list[np.ndarray], R_emb,
                                   F_emb_list: list[np.ndarray],
                                   C_list: list[np.ndarray], p,
                                   sigma2) -> np.ndarray:
    """Per-user-correlation version of the ZF port gradient."""
    K = len(F_emb_list)
    M = sol.m_norm
    mu, omega, delta = sol.mu_u, sol.omega_u, sol.delta_u
    K_R = sol.K_R
    p = np.asarray(p, dtype=float)
    n = R_root.shape[0]
    Pi = zf_uncommon_pi(sol, F_emb_list, R_emb, C_list)

    # coefficients of the embedded-matrix terms inside K_R^{-1}
    cF = 1.0 / (M * mu)
    cR = float(np.sum(omega / (M * delta * mu))) if delta > 0 else 0.0

    B = np.zeros((K + 1, n))
    mids = [K_R @ F_emb_list[k] @ K_R for k in range(K)]
    mid_R = K_R @ R_emb @ K_R
    for k in range(K):
        row = np.real(np.einsum("ij,jk,ki->i", F_roots[k], K_R, F_roots[k])) / M
        for m in range(K):
            row -= cF[m] / M * np.real(
                np.einsum("ij,jk,ki->i", F_roots[m], mids[k], F_roots[m]))
        row -= cR / M * np.real(
            np.einsum("ij,jk,ki->i", R_root, mids[k], R_root))
        B[k, :] = row
    rowR = np.real(np.einsum("ij,jk,ki->i", R_root, K_R, R_root)) / M
    for m in range(K):
        rowR -= cF[m] / M * np.real(
            np.einsum("ij,jk,ki->i", F_roots[m], mid_R, F_roots[m]))
    rowR -= cR / M * np.real(np.einsum("ij,jk,ki->i", R_root, mid_R, R_root))
    B[K, :] = rowR

    V = _solve_checked(Pi, B, "Pi(zf)")
    mu_i = V[:K, :]                                   # (K, M_tot)
    SS = float(np.sum(p / (M * mu)))
    gam = p / (sigma2 * SS)
    SS_i = -np.einsum("k,ki->i", p / (M * mu ** 2), mu_i)
    gam_i = -np.outer(gam / SS, SS_i)
    return np.einsum("ki,k->i", gam_i, 1.0 / (1.0 + gam)) / LN2


# ---------------------------------------------------------------------------
# finite-difference oracles
# ---------------------------------------------------------------------------

def fd_gradient(fun, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return g
