"""Fixed-point systems behind the deterministic SINR equivalents.

Four solvers (RZF/ZF x per-user/shared correlation) plus the i.i.d. closed
form. Each solver runs a damped Picard iteration in Gauss-Seidel order
(delta first, then the RIS-side traces, then the per-user scalars), with the
damping factor halved whenever the residual oscillates. The returned
solutions carry the auxiliary inverse matrices needed by the second-order
interference terms downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import herm

EPS = 1e-12


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (residual {residual:.3e})")
        self.residual = residual


class FeasibilityError(ValueError):
    """System outside the solver's validity region (e.g. M < K for ZF)."""


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-10
    max_iter: int = 2000
    damping: float = 1.0
    init: float = 1.0

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must lie in (0, 1]")


DEFAULT_SETTINGS = SolverSettings()


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    new = np.atleast_1d(np.asarray(new, dtype=float))
    old = np.atleast_1d(np.asarray(old, dtype=float))
    return float(np.max(np.abs(new - old) / np.maximum(np.abs(new), EPS)))


class _Damper:
    """Adaptive damping: halve the step on residual growth or oscillation."""

    def __init__(self, damping: float):
        self.d = damping
        self.prev = np.inf
        self.prev_sign = 0
        self.flips = 0

    def mix(self, old, new):
        return old + self.d * (new - old)

    def update(self, residual: float, probe_change: float = 0.0):
        sign = int(np.sign(probe_change))
        if sign != 0 and sign == -self.prev_sign:
            self.flips += 1
        else:
            self.flips = 0
        if (residual > self.prev or self.flips >= 3) and self.d > 1.0 / 256.0:
            self.d *= 0.5
            self.flips = 0
        self.prev = residual
        self.prev_sign = sign if sign != 0 else self.prev_sign


# ---------------------------------------------------------------------------
# solution containers
# ---------------------------------------------------------------------------

@dataclass
class RzfUncommonSolution:
    z: float
    delta: float
    mu: np.ndarray
    omega: np.ndarray
    Psi_R: np.ndarray
    Psi_C: np.ndarray
    residual: float
    iterations: int
    m_norm: int


@dataclass
class ZfUncommonSolution:
    delta_u: float
    mu_u: np.ndarray
    omega_u: np.ndarray
    K_R: np.ndarray
    K_C: np.ndarray
    residual: float
    iterations: int
    m_norm: int


@dataclass
class RzfCommonSolution:
    z: float
    delta: float
    kappa: float
    omega: float
    kappa_bar: float
    omega_bar: float
    Psi_R: np.ndarray
    Psi_C: np.ndarray
    psi_T: np.ndarray          # diagonal of Psi_T = (I + omega T + kappa U)^{-1}
    residual: float
    iterations: int
    m_norm: int

    def mu_k(self, u: np.ndarray, t: np.ndarray) -> np.ndarray:
        return t * self.omega + u * self.kappa


@dataclass
class ZfCommonSolution:
    delta_u: float
    kappa_u: float
    omega_u: float
    kappa_bar_u: float
    omega_bar_u: float
    Psi_R: np.ndarray
    Psi_C: np.ndarray
    psi_T: np.ndarray          # diagonal of (kappa_u U + omega_u T)^{-1}
    residual: float
    iterations: int
    m_norm: int

    def mu_k(self, u: np.ndarray, t: np.ndarray) -> np.ndarray:
        return u * self.kappa_u + t * self.omega_u


@dataclass(frozen=True)
class IidSolution:
    u: float
    t: float
    c1: float
    c2: float
    alpha_val: float
    beta_val: float

    @property
    def mu_u(self) -> float:
        return (1.0 - self.c1) * self.beta_val


# ---------------------------------------------------------------------------
# RZF / ZF with per-user correlation
# ---------------------------------------------------------------------------

def _is_zero(A: np.ndarray) -> bool:
    return not np.any(A)


def _solve_rzf_uncommon_once(F_list: list[np.ndarray], R: np.ndarray,
                       C_list: list[np.ndarray], z: float,
                       settings: SolverSettings = DEFAULT_SETTINGS,
                       m_norm: int | None = None,
                       x0: dict | None = None) -> RzfUncommonSolution:
    """Per-user-correlation RZF system for (delta, omega_k, mu_k).

        delta   = tr(R Psi_R) / M
        omega_k = tr(C_k Psi_C) / L
        mu_k    = tr(F_k Psi_R) / M + omega_k
        Psi_R = (z I + sum_k [F_k + omega_k R / delta] / (M (1+mu_k)))^{-1}
        Psi_C = (I/delta + sum_k C_k / (L (1+mu_k)))^{-1}

    F_k and C_k carry the per-user link gains. m_norm overrides the trace
    normalization M when the matrices are full-size selection surrogates.
    Degenerate links (R = 0 or every C_k = 0) are branch-detected so no
    0/0 ratio is ever formed.
    """
    if z <= 0:
        raise ValueError("regularization z must be positive")
    K = len(F_list)
    Mdim = R.shape[0]
    M = Mdim if m_norm is None else m_norm
    L = C_list[0].shape[0]
    I_M = np.eye(Mdim)
    I_L = np.eye(L)

    cascaded = not (_is_zero(R) or all(_is_zero(C) for C in C_list))

    x0 = x0 or {}
    delta = x0.get("delta", settings.init)
    mu = np.array(x0.get("mu", np.full(K, settings.init)), dtype=float)
    omega = (np.array(x0.get("omega", np.full(K, settings.init)), dtype=float)
             if cascaded else np.zeros(K))
    damper = _Damper(settings.damping)

    def psi_r(delta, mu, omega):
        A = z * I_M.astype(complex)
        for k in range(K):
            A += F_list[k] / (M * (1.0 + mu[k]))
            if cascaded and omega[k] != 0.0:
                A += (omega[k] / (M * delta * (1.0 + mu[k]))) * R
        return np.linalg.inv(A)

    def psi_c(delta, mu):
        A = I_L / delta + sum(C_list[k] / (L * (1.0 + mu[k])) for k in range(K))
        return np.linalg.inv(A)

    Psi_C = None
    residual = np.inf
    for it in range(1, settings.max_iter + 1):
        Psi_R = psi_r(delta, mu, omega)
        delta_new = np.real(np.trace(R @ Psi_R)) / M
        if cascaded:
            Psi_C = psi_c(delta_new, mu)
            omega_new = np.array([np.real(np.trace(C_list[k] @ Psi_C)) / L
                                  for k in range(K)])
        else:
            omega_new = np.zeros(K)
        mu_new = np.array([np.real(np.trace(F_list[k] @ Psi_R)) / M
                           for k in range(K)]) + omega_new

        residual = max(_rel_change(delta_new, delta),
                       _rel_change(omega_new, omega),
                       _rel_change(mu_new, mu))
        probe = delta_new - delta
        delta = damper.mix(delta, delta_new)
        omega = damper.mix(omega, omega_new)
        mu = damper.mix(mu, mu_new)
        damper.update(residual, probe)
        if residual < settings.tol:
            break
    else:
        raise ConvergenceError("RZF fixed point did not converge", residual)

    Psi_R = psi_r(delta, mu, omega)
    if cascaded:
        Psi_C = psi_c(delta, mu)
    else:
        # harmless placeholder: with no cascaded link Psi_C never enters rates
        Psi_C = delta * I_L.astype(complex) if delta > 0 else np.zeros((L, L), complex)
    return RzfUncommonSolution(z=z, delta=delta, mu=mu, omega=omega,
                               Psi_R=herm(Psi_R), Psi_C=herm(Psi_C),
                               residual=residual, iterations=it, m_norm=M)


def solve_zf_uncommon(F_list: list[np.ndarray], R: np.ndarray,
                      C_list: list[np.ndarray],
                      settings: SolverSettings = DEFAULT_SETTINGS,
                      m_norm: int | None = None,
                      x0: dict | None = None) -> ZfUncommonSolution:
    """Per-user-correlation ZF system (the z->0 scaled limit, solved directly).

        delta_u = tr(R K_R) / M,  omega_u_k = tr(C_k K_C) / L,
        mu_u_k  = omega_u_k + tr(F_k K_R) / M
        K_R = (I + sum_k [omega_u_k R / delta_u + F_k] / (M mu_u_k))^{-1}
        K_C = (I/delta_u + sum_k C_k / (L mu_u_k))^{-1}
    """
    K = len(F_list)
    Mdim = R.shape[0]
    M = Mdim if m_norm is None else m_norm
    if M < K:
        raise FeasibilityError(f"ZF needs M >= K (got M={M}, K={K})")
    L = C_list[0].shape[0]
    I_M = np.eye(Mdim)
    I_L = np.eye(L)

    cascaded = not (_is_zero(R) or all(_is_zero(C) for C in C_list))

    x0 = x0 or {}
    delta = x0.get("delta", settings.init)
    mu = np.array(x0.get("mu", np.full(K, settings.init)), dtype=float)
    omega = (np.array(x0.get("omega", np.full(K, settings.init)), dtype=float)
             if cascaded else np.zeros(K))
    damper = _Damper(settings.damping)

    def k_r(delta, mu, omega):
        A = I_M.astype(complex).copy()
        for k in range(K):
            A += F_list[k] / (M * mu[k])
            if cascaded and omega[k] != 0.0:
                A += (omega[k] / (M * delta * mu[k])) * R
        return np.linalg.inv(A)

    def k_c(delta, mu):
        A = I_L / delta + sum(C_list[k] / (L * mu[k]) for k in range(K))
        return np.linalg.inv(A)

    K_C = None
    residual = np.inf
    for it in range(1, settings.max_iter + 1):
        K_R = k_r(delta, mu, omega)
        delta_new = np.real(np.trace(R @ K_R)) / M
        if cascaded:
            K_C = k_c(delta_new, mu)
            omega_new = np.array([np.real(np.trace(C_list[k] @ K_C)) / L
                                  for k in range(K)])
        else:
            omega_new = np.zeros(K)
        mu_new = omega_new + np.array([np.real(np.trace(F_list[k] @ K_R)) / M
                                       for k in range(K)])
        if (mu_new <= 0).any():
            raise FeasibilityError("ZF system produced a nonpositive mu; "
                                   "a user has no usable link")

        residual = max(_rel_change(delta_new, delta),
                       _rel_change(omega_new, omega),
                       _rel_change(mu_new, mu))
        probe = delta_new - delta
        delta = damper.mix(delta, delta_new)
        omega = damper.mix(omega, omega_new)
        mu = damper.mix(mu, mu_new)
        damper.update(residual, probe)
        if residual < settings.tol:
            break
    else:
        raise ConvergenceError("ZF fixed point did not converge", residual)

    K_R = k_r(delta, mu, omega)
    if cascaded:
        K_C = k_c(delta, mu)
    else:
        K_C = delta * I_L.astype(complex) if delta > 0 else np.zeros((L, L), complex)
    return ZfUncommonSolution(delta_u=delta, mu_u=mu, omega_u=omega,
                              K_R=herm(K_R), K_C=herm(K_C),
                              residual=residual, iterations=it, m_norm=M)


# ---------------------------------------------------------------------------
# RZF / ZF with shared correlation
# ---------------------------------------------------------------------------

def _solve_rzf_common_once(F: np.ndarray, R: np.ndarray, C: np.ndarray,
                     u: np.ndarray, t: np.ndarray, z: float,
                     settings: SolverSettings = DEFAULT_SETTINGS,
                     m_norm: int | None = None,
                     x0: dict | None = None) -> RzfCommonSolution:
    """Shared-correlation RZF quintuple (delta, kappa, omega, kappa_bar, omega_bar).

        delta = tr(R Psi_R)/M, kappa = tr(F Psi_R)/M, omega = tr(C Psi_C)/L,
        kappa_bar = tr(U Psi_T)/L, omega_bar = tr(T Psi_T)/L
        Psi_R = (z I + (L omega omega_bar / (M delta)) R + (L kappa_bar / M) F)^{-1}
        Psi_C = (I/delta + omega_bar C)^{-1}
        Psi_T = (I_K + omega T + kappa U)^{-1}

    F and C are correlation matrices (unit-scale); the gains live in u, t.
    """
    if z <= 0:
        raise ValueError("regularization z must be positive")
    Mdim = R.shape[0]
    M = Mdim if m_norm is None else m_norm
    L = C.shape[0]
    K = len(u)
    u = np.asarray(u, dtype=float)
    t = np.asarray(t, dtype=float)
    I_M = np.eye(Mdim)
    I_L = np.eye(L)

    cascaded = not (_is_zero(R) or _is_zero(C) or np.all(t == 0.0))

    x0 = x0 or {}
    delta = x0.get("delta", settings.init)
    kappa = x0.get("kappa", settings.init)
    omega = x0.get("omega", settings.init) if cascaded else 0.0
    kappa_bar = x0.get("kappa_bar", settings.init if cascaded else 0.0)
    omega_bar = x0.get("omega_bar", settings.init) if cascaded else 0.0
    damper = _Damper(settings.damping)

    def psi_r(delta, kappa_bar, omega, omega_bar):
        A = z * I_M.astype(complex) + (L * kappa_bar / M) * F
        if cascaded and omega * omega_bar != 0.0:
            A += (L * omega * omega_bar / (M * delta)) * R
        return np.linalg.inv(A)

    residual = np.inf
    for it in range(1, settings.max_iter + 1):
        Psi_R = psi_r(delta, kappa_bar, omega, omega_bar)
        delta_new = np.real(np.trace(R @ Psi_R)) / M
        kappa_new = np.real(np.trace(F @ Psi_R)) / M
        if cascaded:
            Psi_C = np.linalg.inv(I_L / delta_new + omega_bar * C)
            omega_new = np.real(np.trace(C @ Psi_C)) / L
        else:
            omega_new = 0.0
        psi_T = 1.0 / (1.0 + omega_new * t + kappa_new * u)
        kappa_bar_new = float(np.sum(u * psi_T) / L)
        omega_bar_new = float(np.sum(t * psi_T) / L)

        residual = max(_rel_change(delta_new, delta), _rel_change(kappa_new, kappa),
                       _rel_change(omega_new, omega),
                       _rel_change(kappa_bar_new, kappa_bar),
                       _rel_change(omega_bar_new, omega_bar))
        probe = delta_new - delta
        delta = damper.mix(delta, delta_new)
        kappa = damper.mix(kappa, kappa_new)
        omega = damper.mix(omega, omega_new)
        kappa_bar = damper.mix(kappa_bar, kappa_bar_new)
        omega_bar = damper.mix(omega_bar, omega_bar_new)
        damper.update(residual, probe)
        if residual < settings.tol:
            break
    else:
        raise ConvergenceError("common RZF fixed point did not converge", residual)

    Psi_R = psi_r(delta, kappa_bar, omega, omega_bar)
    if cascaded:
        Psi_C = np.linalg.inv(I_L / delta + omega_bar * C)
    else:
        Psi_C = delta * I_L.astype(complex)
    psi_T = 1.0 / (1.0 + omega * t + kappa * u)
    return RzfCommonSolution(z=z, delta=delta, kappa=kappa, omega=omega,
                             kappa_bar=kappa_bar, omega_bar=omega_bar,
                             Psi_R=herm(Psi_R), Psi_C=herm(Psi_C), psi_T=psi_T,
                             residual=residual, iterations=it, m_norm=M)


def solve_zf_common(F: np.ndarray, R: np.ndarray, C: np.ndarray,
                    u: np.ndarray, t: np.ndarray,
                    settings: SolverSettings = DEFAULT_SETTINGS,
                    m_norm: int | None = None,
                    x0: dict | None = None) -> ZfCommonSolution:
    """Shared-correlation ZF quintuple (underlined z->0 limits, solved directly).

        Psi_R = (I + (L kappa_bar_u / M) F + (L omega_u omega_bar_u / (M delta_u)) R)^{-1}
        Psi_C = (I/delta_u + omega_bar_u C)^{-1}
        Psi_T = (kappa_u U + omega_u T)^{-1}
    """
    Mdim = R.shape[0]
    M = Mdim if m_norm is None else m_norm
    L = C.shape[0]
    K = len(u)
    u = np.asarray(u, dtype=float)
    t = np.asarray(t, dtype=float)
    if M < K:
        raise FeasibilityError(f"ZF needs M >= K (got M={M}, K={K})")
    I_M = np.eye(Mdim)
    I_L = np.eye(L)

    cascaded = not (_is_zero(R) or _is_zero(C) or np.all(t == 0.0))

    x0 = x0 or {}
    delta = x0.get("delta", settings.init)
    kappa = x0.get("kappa", settings.init)
    omega = x0.get("omega", settings.init) if cascaded else 0.0
    kappa_bar = x0.get("kappa_bar", settings.init if cascaded else 0.0)
    omega_bar = x0.get("omega_bar", settings.init) if cascaded else 0.0
    damper = _Damper(settings.damping)

    def psi_r(delta, kappa_bar, omega, omega_bar):
        A = I_M.astype(complex) + (L * kappa_bar / M) * F
        if cascaded and omega * omega_bar != 0.0:
            A += (L * omega * omega_bar / (M * delta)) * R
        return np.linalg.inv(A)

    residual = np.inf
    for it in range(1, settings.max_iter + 1):
        Psi_R = psi_r(delta, kappa_bar, omega, omega_bar)
        delta_new = np.real(np.trace(R @ Psi_R)) / M
        kappa_new = np.real(np.trace(F @ Psi_R)) / M
        if cascaded:
            Psi_C = np.linalg.inv(I_L / delta_new + omega_bar * C)
            omega_new = np.real(np.trace(C @ Psi_C)) / L
        else:
            omega_new = 0.0
        mu_k = kappa_new * u + omega_new * t
        if (mu_k <= 0).any():
            raise FeasibilityError("ZF system produced a nonpositive user gain")
        psi_T = 1.0 / mu_k
        kappa_bar_new = float(np.sum(u * psi_T) / L)
        omega_bar_new = float(np.sum(t * psi_T) / L)

        residual = max(_rel_change(delta_new, delta), _rel_change(kappa_new, kappa),
                       _rel_change(omega_new, omega),
                       _rel_change(kappa_bar_new, kappa_bar),
                       _rel_change(omega_bar_new, omega_bar))
        probe = delta_new - delta
        delta = damper.mix(delta, delta_new)
        kappa = damper.mix(kappa, kappa_new)
        omega = damper.mix(omega, omega_new)
        kappa_bar = damper.mix(kappa_bar, kappa_bar_new)
        omega_bar = damper.mix(omega_bar, omega_bar_new)
        damper.update(residual, probe)
        if residual < settings.tol:
            break
    else:
        raise ConvergenceError("common ZF fixed point did not converge", residual)

    Psi_R = psi_r(delta, kappa_bar, omega, omega_bar)
    if cascaded:
        Psi_C = np.linalg.inv(I_L / delta + omega_bar * C)
    else:
        Psi_C = delta * I_L.astype(complex)
    psi_T = 1.0 / (kappa * u + omega * t)
    return ZfCommonSolution(delta_u=delta, kappa_u=kappa, omega_u=omega,
                            kappa_bar_u=kappa_bar, omega_bar_u=omega_bar,
                            Psi_R=herm(Psi_R), Psi_C=herm(Psi_C), psi_T=psi_T,
                            residual=residual, iterations=it, m_norm=M)




def solve_rzf_uncommon(F_list, R, C_list, z, settings=DEFAULT_SETTINGS,
                       m_norm=None, x0=None) -> RzfUncommonSolution:
    """Robust entry point: geometric continuation in z on a cold-start stall.

    Very small z (deep in the ZF limit) makes the Picard map oscillate from
    generic initial values; walking down from 1e6 z with warm starts keeps
    every step inside the contraction basin.
    """
    try:
        return _solve_rzf_uncommon_once(F_list, R, C_list, z, settings,
                                        m_norm=m_norm, x0=x0)
    except ConvergenceError:
        pass
    sol = None
    for zz in z * np.logspace(6, 0, 13):
        w = None if sol is None else {"delta": sol.delta, "mu": sol.mu,
                                      "omega": sol.omega}
        sol = _solve_rzf_uncommon_once(F_list, R, C_list, zz, settings,
                                       m_norm=m_norm, x0=w)
    return sol


def solve_rzf_common(F, R, C, u, t, z, settings=DEFAULT_SETTINGS,
                     m_norm=None, x0=None) -> RzfCommonSolution:
    """Robust entry point: geometric continuation in z on a cold-start stall."""
    try:
        return _solve_rzf_common_once(F, R, C, u, t, z, settings,
                                      m_norm=m_norm, x0=x0)
    except ConvergenceError:
        pass
    sol = None
    for zz in z * np.logspace(6, 0, 13):
        w = None if sol is None else {"delta": sol.delta, "kappa": sol.kappa,
                                      "omega": sol.omega,
                                      "kappa_bar": sol.kappa_bar,
                                      "omega_bar": sol.omega_bar}
        sol = _solve_rzf_common_once(F, R, C, u, t, zz, settings,
                                     m_norm=m_norm, x0=w)
    return sol


# ---------------------------------------------------------------------------
# i.i.d. closed form
# ---------------------------------------------------------------------------

def solve_iid_zf(u: float, t: float, c1: float, c2: float) -> IidSolution:
    """Closed-form ZF solution over i.i.d. channels.

        alpha = c2^2 t^2 - 2 c2 t^2 + t^2 + 2 t u c2 + 2 t u + u^2
        beta  = (u + t - t c2 + sqrt(alpha)) / 2
        mu_u  = (1 - c1) beta

    c2 = 0 gives beta = u + t, the large-RIS limit.
    """
    if c1 >= 1.0:
        raise FeasibilityError(f"needs c1 = K/M < 1 (got {c1})")
    if c1 <= 0 or c2 < 0:
        raise ValueError("c1 must be positive and c2 nonnegative")
    alpha = (c2 ** 2) * t ** 2 - 2.0 * c2 * t ** 2 + t ** 2 \
        + 2.0 * t * u * c2 + 2.0 * t * u + u ** 2
    beta = 0.5 * (u + t - t * c2 + np.sqrt(alpha))
    return IidSolution(u=u, t=t, c1=c1, c2=c2, alpha_val=float(alpha),
                       beta_val=float(beta))


# ---------------------------------------------------------------------------
# residual checks
# ---------------------------------------------------------------------------

def backsubstitution_residual(sol, F=None, R=None, C=None, u=None, t=None,
                              F_list=None, C_list=None, z=None) -> float:
    """One extra sweep starting at the returned solution; max relative change."""
    one = SolverSettings(tol=np.inf, max_iter=1, damping=1.0)
    if isinstance(sol, RzfUncommonSolution):
        re = solve_rzf_uncommon(F_list, R, C_list, sol.z, one, m_norm=sol.m_norm,
                                x0={"delta": sol.delta, "mu": sol.mu, "omega": sol.omega})
    elif isinstance(sol, ZfUncommonSolution):
        re = solve_zf_uncommon(F_list, R, C_list, one, m_norm=sol.m_norm,
                               x0={"delta": sol.delta_u, "mu": sol.mu_u,
                                   "omega": sol.omega_u})
    elif isinstance(sol, RzfCommonSolution):
        re = solve_rzf_common(F, R, C, u, t, sol.z, one, m_norm=sol.m_norm,
                              x0={"delta": sol.delta, "kappa": sol.kappa,
                                  "omega": sol.omega, "kappa_bar": sol.kappa_bar,
                                  "omega_bar": sol.omega_bar})
    elif isinstance(sol, ZfCommonSolution):
        re = solve_zf_common(F, R, C, u, t, one, m_norm=sol.m_norm,
                             x0={"delta": sol.delta_u, "kappa": sol.kappa_u,
                                 "omega": sol.omega_u, "kappa_bar": sol.kappa_bar_u,
                                 "omega_bar": sol.omega_bar_u})
    else:
        raise TypeError(f"unknown solution type {type(sol)}")
    return re.residual
