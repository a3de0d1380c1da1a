"""Two-timescale optimization: port selection, regularizer, phase shifts.

Frank-Wolfe over the relaxed port polytope (driven by the ZF rate through
the diag(s) embedding, with a top-M linear oracle and 2/(t+2) steps),
backtracking gradient ascent on the RIS phases, 1-D search for the RZF
regularizer with the homogeneous shortcut z = K sigma^2 / M, alternating
optimization of (z, Phi) at fixed selection, and the outer joint loop that
keeps the best recorded iterate.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .channel import (ConstraintError, Scenario, effective_ris_correlation,
                      herm, phase_matrix, psd_sqrt)
from .fixed_point import (DEFAULT_SETTINGS, SolverSettings, solve_rzf_common,
                          solve_rzf_uncommon, solve_zf_common,
                          solve_zf_uncommon)
from .gradients import (esr_gradient_phases_common,
                        esr_gradient_phases_uncommon,
                        esr_gradient_phases_zf_common,
                        esr_gradient_ports_zf_common,
                        esr_gradient_ports_zf_uncommon)
from .rates import (RateReport, sinr_rzf_common, sinr_rzf_uncommon,
                    sinr_zf_common, sinr_zf_uncommon)


# ---------------------------------------------------------------------------
# decision-variable containers
# ---------------------------------------------------------------------------

@dataclass
class PortSelection:
    """Binary (exactly M ones) or relaxed (entries in [0,1], sum <= M)."""

    s: np.ndarray
    M: int
    relaxed: bool = False

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        if self.relaxed:
            if (self.s < 0).any() or (self.s > 1).any():
                raise ConstraintError("relaxed selection outside [0,1]")
            if self.s.sum() > self.M + 1e-9:
                raise ConstraintError("relaxed selection exceeds budget M")
        else:
            if not np.all((self.s == 0) | (self.s == 1)):
                raise ConstraintError("binary selection has fractional entries")
            if int(self.s.sum()) != self.M:
                raise ConstraintError(
                    f"selection has {int(self.s.sum())} ports, expected {self.M}")

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.s)


@dataclass
class PhaseShifts:
    """Angles in radians; the unit-modulus matrix is built from them only."""

    phi: np.ndarray

    def __post_init__(self):
        self.phi = np.mod(np.asarray(self.phi, dtype=float), 2.0 * np.pi)

    @property
    def Phi(self) -> np.ndarray:
        return phase_matrix(self.phi, len(self.phi))


@dataclass
class OptimizerSettings:
    solver: SolverSettings = DEFAULT_SETTINGS
    # Frank-Wolfe
    fw_tol: float = 1e-5
    fw_max_iter: int = 500
    # phase ascent (backtracking)
    alpha0: float = 1.0
    backtrack_c: float = 0.5
    armijo_beta: float = 1e-4
    max_halvings: int = 40
    ascent_tol: float = 1e-5
    ascent_max_iter: int = 200
    # regularizer search
    z_grid_points: int = 41
    z_span_decades: float = 4.0
    golden_rel_width: float = 1e-4
    # alternating optimization
    ao_tol: float = 1e-5
    ao_max_iter: int = 10


DEFAULT_OPT = OptimizerSettings()


@dataclass
class OptimizationTrace:
    records: list[dict] = field(default_factory=list)

    def add(self, **kw):
        self.records.append(kw)

    def objectives(self) -> np.ndarray:
        return np.array([r["objective"] for r in self.records])


def _digest(arr) -> str:
    if arr is None:
        return "none"
    return hashlib.sha1(np.ascontiguousarray(arr).tobytes()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# deterministic ESR evaluation at scenario level
# ---------------------------------------------------------------------------

def deterministic_esr(scenario: Scenario, s: np.ndarray | None = None,
                      phi: np.ndarray | None = None, precoder: str = "rzf",
                      z: float | None = None,
                      settings: SolverSettings = DEFAULT_SETTINGS,
                      need_so: bool = False):
    """Deterministic-equivalent RateReport for a binary selection.

    Dispatches on the scenario correlation mode. For RZF, z defaults to
    K sigma^2 / M. Returns the report, or (report, sol, so) when need_so.
    """
    dims = scenario.dims
    M = int(np.sum(s)) if s is not None else dims.M
    dig = {"s": _digest(s), "phi": _digest(phi)}
    common = scenario.correlations.mode in ("common", "iid") and \
        not isinstance(scenario.correlations.F_tot, list)
    if precoder == "rzf":
        if z is None:
            z = dims.K * scenario.sigma2 / M
        if common:
            F, R, C, u, t, p = scenario.stats_common(s, phi)
            sol = solve_rzf_common(F, R, C, u, t, z, settings)
            rep, so = sinr_rzf_common(sol, F, R, C, u, t, p,
                                      scenario.sigma2, digest=dig)
        else:
            F_list, R, C_list, p = scenario.stats_uncommon(s, phi)
            sol = solve_rzf_uncommon(F_list, R, C_list, z, settings)
            rep, so = sinr_rzf_uncommon(sol, F_list, R, C_list, p,
                                        scenario.sigma2, digest=dig)
        return (rep, sol, so) if need_so else rep
    if precoder == "zf":
        if common:
            F, R, C, u, t, p = scenario.stats_common(s, phi)
            sol = solve_zf_common(F, R, C, u, t, settings)
            rep = sinr_zf_common(sol, u, t, p, scenario.sigma2, digest=dig)
        else:
            F_list, R, C_list, p = scenario.stats_uncommon(s, phi)
            sol = solve_zf_uncommon(F_list, R, C_list, settings)
            rep = sinr_zf_uncommon(sol, p, scenario.sigma2, digest=dig)
        return (rep, sol, None) if need_so else rep
    raise ValueError(f"no deterministic equivalent for precoder {precoder!r}")


# ---------------------------------------------------------------------------
# relaxed ZF objective over ports (Frank-Wolfe inner machinery)
# ---------------------------------------------------------------------------

class RelaxedZfObjective:
    """ZF rate and gradient on the diag(s)-embedded correlation surrogate.

    Caches the matrix square roots and warm-starts successive solves, since
    Frank-Wolfe evaluates along a slowly moving iterate.
    """

    def __init__(self, scenario: Scenario, phi: np.ndarray | None, M: int,
                 settings: SolverSettings = DEFAULT_SETTINGS):
        self.scenario = scenario
        self.M = M
        self.settings = settings
        corr = scenario.correlations
        self.common = not (isinstance(corr.F_tot, list) or isinstance(corr.C_R, list))
        self.R_root = psd_sqrt(corr.R_tot, "R_tot")
        K = scenario.dims.K
        if self.common:
            self.F_root = psd_sqrt(corr.F_tot, "F_tot")
            _, self.C = effective_ris_correlation(corr.C_L, phi, corr.C_R, 1.0)
        else:
            # fold the per-user gain into the root so F_k(s) = u_k F_k-embedded
            self.F_roots = [np.sqrt(scenario.u[k])
                            * psd_sqrt(corr.f_tot_list(K)[k], f"F_tot[{k}]")
                            for k in range(K)]
            self.C_list = [effective_ris_correlation(corr.C_L, phi,
                                                     corr.c_r_list(K)[k],
                                                     scenario.t[k])[1]
                           for k in range(K)]
        self._x0 = None

    def _embed(self, root, s):
        return herm((root * np.asarray(s, float)[None, :]) @ root)

    def solve(self, s: np.ndarray):
        sc = self.scenario
        if self.common:
            sol = solve_zf_common(self._embed(self.F_root, s),
                                  self._embed(self.R_root, s), self.C,
                                  sc.u, sc.t, self.settings, m_norm=self.M,
                                  x0=self._x0)
            self._x0 = {"delta": sol.delta_u, "kappa": sol.kappa_u,
                        "omega": sol.omega_u, "kappa_bar": sol.kappa_bar_u,
                        "omega_bar": sol.omega_bar_u}
            rep = sinr_zf_common(sol, sc.u, sc.t, sc.p, sc.sigma2)
        else:
            F_emb = [self._embed(Fr, s) for Fr in self.F_roots]
            sol = solve_zf_uncommon(F_emb, self._embed(self.R_root, s),
                                    self.C_list, self.settings, m_norm=self.M,
                                    x0=self._x0)
            self._x0 = {"delta": sol.delta_u, "mu": sol.mu_u,
                        "omega": sol.omega_u}
            rep = sinr_zf_uncommon(sol, sc.p, sc.sigma2)
        return rep, sol

    def esr(self, s: np.ndarray) -> float:
        return self.solve(s)[0].esr

    def gradient(self, s: np.ndarray):
        rep, sol = self.solve(s)
        sc = self.scenario
        if self.common:
            g = esr_gradient_ports_zf_common(
                sol, self.R_root, self.F_root, self._embed(self.R_root, s),
                self._embed(self.F_root, s), self.C, sc.u, sc.t, sc.p, sc.sigma2)
        else:
            g = esr_gradient_ports_zf_uncommon(
                sol, self.R_root, self.F_roots, self._embed(self.R_root, s),
                [self._embed(Fr, s) for Fr in self.F_roots], self.C_list,
                sc.p, sc.sigma2)
        return rep.esr, g


def fw_linear_oracle(gradient: np.ndarray, M: int) -> np.ndarray:
    """Vertex of {0 <= s <= 1, sum s <= M} maximizing <s, gradient>.

    Ones at the M largest gradient components; ties broken by lowest index.
    """
    gradient = np.asarray(gradient, dtype=float)
    if not np.all(np.isfinite(gradient)):
        raise ValueError("gradient has non-finite entries")
    order = np.argsort(-gradient, kind="stable")
    s = np.zeros(len(gradient))
    s[order[:M]] = 1.0
    return s


def top_m_rounding(s: np.ndarray, M: int) -> np.ndarray:
    """Binary selection at the M largest entries of s (ties: lowest index)."""
    return fw_linear_oracle(np.asarray(s, dtype=float), M)


def fw_port_selection(scenario: Scenario, phi: np.ndarray | None, M: int,
                      opt: OptimizerSettings = DEFAULT_OPT,
                      trace: OptimizationTrace | None = None) -> np.ndarray:
    """Frank-Wolfe port selection on the relaxed ZF objective.

    s^(0) = (M/M_tot) 1; update s += 2/(t+2) (s_bar - s) with the top-M
    vertex s_bar; stops on relative objective change < fw_tol; returns the
    top-M binary rounding of the final iterate.
    """
    M_tot = scenario.correlations.R_tot.shape[0]
    if M > M_tot:
        raise ConstraintError(f"M={M} exceeds M_tot={M_tot}")
    if M == M_tot:
        return np.ones(M_tot)
    obj = RelaxedZfObjective(scenario, phi, M, opt.solver)
    s = np.full(M_tot, M / M_tot)
    prev = None
    for it in range(opt.fw_max_iter):
        esr, grad = obj.gradient(s)
        if trace is not None:
            trace.add(stage="fw", iteration=it, objective=esr,
                      step=2.0 / (it + 2.0))
        if prev is not None and abs(esr - prev) < opt.fw_tol * abs(prev):
            break
        s_bar = fw_linear_oracle(grad, M)
        s = s + (2.0 / (it + 2.0)) * (s_bar - s)
        prev = esr
    return top_m_rounding(s, M)


# ---------------------------------------------------------------------------
# phase-shift gradient ascent
# ---------------------------------------------------------------------------

def _phase_objective(scenario: Scenario, s, precoder, z, settings):
    """Closure pair (esr(phi), esr_and_grad(phi)) for the selected scenario."""
    corr = scenario.correlations
    common = not (isinstance(corr.F_tot, list) or isinstance(corr.C_R, list))

    def value(phi):
        return deterministic_esr(scenario, s, phi, precoder, z, settings).esr

    if precoder == "rzf":
        def value_grad(phi):
            rep, sol, so = deterministic_esr(scenario, s, phi, "rzf", z,
                                             settings, need_so=True)
            if common:
                g = esr_gradient_phases_common(so, corr.C_L, corr.C_R, phi,
                                               scenario.sigma2)
            else:
                K = scenario.dims.K
                F_list, R, C_list, p = scenario.stats_uncommon(s, phi)
                g = esr_gradient_phases_uncommon(so, C_list, corr.C_L,
                                                 corr.c_r_list(K), scenario.t,
                                                 phi, p, scenario.sigma2)
            return rep.esr, g
    elif precoder == "zf":
        if not common:
            raise ValueError("ZF phase ascent is implemented for the "
                             "shared-correlation regime")

        def value_grad(phi):
            rep, sol, _ = deterministic_esr(scenario, s, phi, "zf", None,
                                            settings, need_so=True)
            F, R, C, u, t, p = scenario.stats_common(s, phi)
            g = esr_gradient_phases_zf_common(sol, F, R, corr.C_L, corr.C_R,
                                              phi, u, t, p, scenario.sigma2)
            return rep.esr, g
    else:
        raise ValueError(f"unsupported precoder {precoder!r}")
    return value, value_grad


def gradient_ascent_phases(scenario: Scenario, s: np.ndarray | None, z: float | None,
                           phi0: np.ndarray, opt: OptimizerSettings = DEFAULT_OPT,
                           precoder: str = "rzf",
                           trace: OptimizationTrace | None = None):
    """Backtracking gradient ascent on the RIS phase angles.

    Accepted steps satisfy R(phi + a g) - R(phi) >= a beta ||grad|| with the
    normalized direction g, so the deterministic ESR never decreases. A
    failed line search (max halvings) returns the current iterate with
    stalled=True.
    """
    value, value_grad = _phase_objective(scenario, s, precoder, z, opt.solver)
    phi = np.mod(np.asarray(phi0, dtype=float), 2.0 * np.pi)
    esr, grad = value_grad(phi)
    stalled = False
    for it in range(opt.ascent_max_iter):
        norm = float(np.linalg.norm(grad))
        if norm < 1e-14 * max(1.0, abs(esr)):
            break
        direction = grad / norm
        alpha = opt.alpha0
        halvings = 0
        while True:
            cand = np.mod(phi + alpha * direction, 2.0 * np.pi)
            esr_cand = value(cand)
            if esr_cand - esr >= alpha * opt.armijo_beta * norm:
                break
            alpha *= opt.backtrack_c
            halvings += 1
            if halvings > opt.max_halvings:
                stalled = True
                break
        if stalled:
            break
        phi = cand
        esr_prev = esr
        esr, grad = value_grad(phi)
        if trace is not None:
            trace.add(stage="phases", iteration=it, objective=esr,
                      step=alpha, gradient_norm=norm)
        if abs(esr - esr_prev) < opt.ascent_tol * abs(esr_prev):
            break
    return PhaseShifts(phi), esr, stalled


# ---------------------------------------------------------------------------
# regularizer search
# ---------------------------------------------------------------------------

class _WarmRzfEsr:
    """ESR_RZF(z) with the previous fixed point reused as the next start."""

    def __init__(self, scenario: Scenario, s, phi, settings: SolverSettings):
        self.sigma2 = scenario.sigma2
        self.settings = settings
        corr = scenario.correlations
        self.common = not (isinstance(corr.F_tot, list)
                           or isinstance(corr.C_R, list))
        if self.common:
            self.stats = scenario.stats_common(s, phi)
        else:
            self.stats = scenario.stats_uncommon(s, phi)
        self._x0 = None

    def __call__(self, z: float) -> float:
        if self.common:
            F, R, C, u, t, p = self.stats
            sol = solve_rzf_common(F, R, C, u, t, z, self.settings, x0=self._x0)
            self._x0 = {"delta": sol.delta, "kappa": sol.kappa,
                        "omega": sol.omega, "kappa_bar": sol.kappa_bar,
                        "omega_bar": sol.omega_bar}
            rep, _ = sinr_rzf_common(sol, F, R, C, u, t, p, self.sigma2)
        else:
            F_list, R, C_list, p = self.stats
            sol = solve_rzf_uncommon(F_list, R, C_list, z, self.settings,
                                     x0=self._x0)
            self._x0 = {"delta": sol.delta, "mu": sol.mu, "omega": sol.omega}
            rep, _ = sinr_rzf_uncommon(sol, F_list, R, C_list, p, self.sigma2)
        return rep.esr


def z_search_profile(scenario: Scenario, s, phi,
                     opt: OptimizerSettings = DEFAULT_OPT):
    """Grid + golden-section profile of ESR_RZF over z. Returns
    (z_star, grid, values, golden_width)."""
    dims = scenario.dims
    M = int(np.sum(s)) if s is not None else dims.M
    z_center = dims.K * scenario.sigma2 / M
    esr_of = _WarmRzfEsr(scenario, s, phi, opt.solver)

    grid = z_center * np.logspace(-opt.z_span_decades, opt.z_span_decades,
                                  opt.z_grid_points)
    # sweep from the best-conditioned (largest) z downward, warm-starting
    vals = np.empty(len(grid))
    for j in range(len(grid) - 1, -1, -1):
        vals[j] = esr_of(grid[j])
    i = int(np.argmax(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]

    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = esr_of(c), esr_of(d)
    while (b - a) > opt.golden_rel_width * max(abs(c), abs(d)):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = esr_of(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = esr_of(d)
    z_star = c if fc > fd else d
    return float(z_star), grid, vals, float(b - a)


def search_regularization(scenario: Scenario, s: np.ndarray | None,
                          phi: np.ndarray | None,
                          opt: OptimizerSettings = DEFAULT_OPT,
                          force_search: bool = False) -> float:
    """Best RZF regularizer. Homogeneous scenarios shortcut to K sigma^2 / M."""
    dims = scenario.dims
    M = int(np.sum(s)) if s is not None else dims.M
    if scenario.homogeneous and not force_search:
        return dims.K * scenario.sigma2 / M
    z_star, _, _, _ = z_search_profile(scenario, s, phi, opt)
    return z_star


# ---------------------------------------------------------------------------
# alternating optimization and the joint loop
# ---------------------------------------------------------------------------

def alternating_optimization(scenario: Scenario, s: np.ndarray | None,
                             phi0: np.ndarray, z0: float | None = None,
                             opt: OptimizerSettings = DEFAULT_OPT,
                             precoder: str = "rzf",
                             trace: OptimizationTrace | None = None):
    """Alternate {z search; phase ascent} at fixed port selection.

    ESR is non-decreasing across outer iterations: the z update maximizes
    over a grid that includes the incumbent, and the ascent only accepts
    improving steps. ZF mode skips the z updates entirely.
    """
    trace = trace if trace is not None else OptimizationTrace()
    phi = np.mod(np.asarray(phi0, dtype=float), 2.0 * np.pi)
    z = z0
    esr_prev = None
    for it in range(opt.ao_max_iter):
        if precoder == "rzf":
            z_cand = search_regularization(scenario, s, phi, opt)
            # keep the incumbent if the search (rarely) lands lower
            if z is not None:
                esr_keep = deterministic_esr(scenario, s, phi, "rzf", z,
                                             opt.solver).esr
                esr_new = deterministic_esr(scenario, s, phi, "rzf", z_cand,
                                            opt.solver).esr
                z = z_cand if esr_new >= esr_keep else z
            else:
                z = z_cand
        phases, esr, stalled = gradient_ascent_phases(scenario, s, z, phi,
                                                      opt, precoder)
        phi = phases.phi
        trace.add(stage="ao", iteration=it, objective=esr, z=z,
                  stalled=stalled)
        if esr_prev is not None and abs(esr - esr_prev) < opt.ao_tol * abs(esr_prev):
            break
        esr_prev = esr
    return z, PhaseShifts(phi), esr, trace


def joint_optimize(scenario: Scenario, M: int, phi0: np.ndarray | None = None,
                   z0: float | None = None, T_iter: int = 3,
                   opt: OptimizerSettings = DEFAULT_OPT,
                   precoder: str = "rzf"):
    """Outer loop: port selection, then (z, Phi) optimization; best iterate wins.

    Returns (s, z, PhaseShifts, RateReport, trace).
    """
    if T_iter < 1:
        raise ValueError("T_iter must be >= 1")
    L = scenario.dims.L
    phi = np.zeros(L) if phi0 is None else np.mod(np.asarray(phi0, float),
                                                  2.0 * np.pi)
    z = z0
    trace = OptimizationTrace()
    best = None
    for t in range(1, T_iter + 1):
        s = fw_port_selection(scenario, phi, M, opt, trace)
        z_t, phases, esr, _ = alternating_optimization(scenario, s, phi, z,
                                                       opt, precoder, trace)
        trace.add(stage="joint", iteration=t, objective=esr,
                  z=z_t, s_indices=np.flatnonzero(s).tolist())
        if best is None or esr > best[0]:
            best = (esr, s, z_t, phases)
        phi, z = phases.phi, z_t
    esr, s, z, phases = best
    report = deterministic_esr(scenario, s, phases.phi, precoder, z, opt.solver)
    return s, z, phases, report, trace
