"""Scenario construction and correlated Rayleigh channel sampling.

Builds the statistical description of a fluid-antenna (FAS) + RIS downlink:
spatial correlation matrices for the port grid and the RIS array, path-loss
gains, and the per-user channel covariances. Also draws channel realizations
for the Monte-Carlo oracle, with counter-based per-trial RNG substreams so
parallel and serial runs produce identical samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import spherical_jn

PSD_TOL = 1e-10


class DegenerateGridError(ValueError):
    """Port grid has a single row/column along an axis with nonzero aperture."""


class PrecisionError(RuntimeError):
    """Numerical quadrature failed to reach the requested tolerance."""


class ConstraintError(ValueError):
    """A selection vector violates its cardinality/range constraint."""


class DomainError(ValueError):
    """Matrix input outside the admissible set (e.g. not PSD)."""


# ---------------------------------------------------------------------------
# basic converters
# ---------------------------------------------------------------------------

def db2lin(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def lin2db(x: float) -> float:
    return 10.0 * np.log10(np.maximum(x, 1e-300))


def herm(A: np.ndarray) -> np.ndarray:
    """Symmetrize to kill roundoff skew; input must already be near-Hermitian."""
    return 0.5 * (A + A.conj().T)


def check_psd(A: np.ndarray, name: str = "matrix", tol: float = PSD_TOL) -> np.ndarray:
    """Validate Hermitian PSD up to -tol roundoff; clip tiny negative eigenvalues.

    Eigenvalues in [-tol, 0) are treated as roundoff and clipped to zero;
    anything below -tol is a modeling error and raises DomainError.
    """
    A = herm(np.asarray(A))
    w, V = np.linalg.eigh(A)
    if w.min() < -tol * max(1.0, abs(w.max())):
        raise DomainError(
            f"{name} is not PSD: min eigenvalue {w.min():.3e} "
            f"(max {w.max():.3e}, tolerance {tol:.0e})"
        )
    if w.min() < 0.0:
        w = np.clip(w, 0.0, None)
        A = herm((V * w) @ V.conj().T)
    return A


def psd_sqrt(A: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Principal (Hermitian) square root via eigendecomposition.

    Keeps A^{1/2} Hermitian, which the correlation algebra relies on.
    """
    A = herm(np.asarray(A))
    w, V = np.linalg.eigh(A)
    if w.min() < -PSD_TOL * max(1.0, abs(w.max())):
        raise DomainError(f"cannot take square root of non-PSD {name}: "
                          f"min eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    return herm((V * np.sqrt(w)) @ V.conj().T)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dimensions:
    """System size: M selected ports / RF chains, K users, L RIS elements."""

    M: int
    K: int
    L: int
    M_tot: int | None = None

    def __post_init__(self):
        if self.M < 1 or self.K < 1 or self.L < 1:
            raise ValueError("M, K, L must all be >= 1")
        if self.M_tot is not None and self.M > self.M_tot:
            raise ValueError(f"M={self.M} exceeds M_tot={self.M_tot}")

    @property
    def c1(self) -> float:
        return self.K / self.M

    @property
    def c2(self) -> float:
        return self.K / self.L


@dataclass(frozen=True)
class PlanarFasGeometry:
    """Planar port grid: aperture W_x x W_y wavelengths, N_x x N_y ports.

    Ports are indexed top to bottom within a column, then left to right
    across columns.
    """

    W_x: float
    W_y: float
    N_x: int
    N_y: int

    def __post_init__(self):
        if self.W_x <= 0 or self.W_y <= 0:
            raise ValueError("apertures W_x, W_y must be positive")
        if self.N_x < 1 or self.N_y < 1:
            raise ValueError("N_x, N_y must be >= 1")

    @property
    def M_tot(self) -> int:
        return self.N_x * self.N_y

    def port_coordinates(self) -> np.ndarray:
        """(M_tot, 2) integer grid coordinates (col, row), column-major order."""
        cols, rows = np.meshgrid(np.arange(self.N_x), np.arange(self.N_y),
                                 indexing="ij")
        return np.stack([cols.ravel(), rows.ravel()], axis=1)


@dataclass(frozen=True)
class RisAngularProfile:
    """Linear-array angular profile: spacing d_c (wavelengths), mean angle
    alpha and RMS spread beta in degrees."""

    d_c: float
    alpha: float
    beta: float
    L: int

    def __post_init__(self):
        if self.d_c <= 0:
            raise ValueError("element spacing d_c must be positive")
        if self.beta <= 0:
            raise ValueError("angle spread beta must be positive")
        if self.L < 1:
            raise ValueError("L must be >= 1")


@dataclass(frozen=True)
class PathLossParams:
    """Power-law path loss: gain = C / d^exponent, all linear scale."""

    ref_gain: float
    exponent: float
    distance: float

    def __post_init__(self):
        if self.distance <= 0:
            raise ValueError("distance must be positive")
        if self.exponent <= 0:
            raise ValueError("path-loss exponent must be positive")
        if self.ref_gain <= 0:
            raise ValueError("reference gain must be positive")


@dataclass
class CorrelationSet:
    """Correlation matrices of a scenario.

    mode "uncommon": per-user F_tot list and C_R list; "common": shared
    F_tot and C_R; "iid": all identity. R_tot is the BS-side correlation
    toward the RIS, C_L the RIS receive side.
    """

    mode: str
    R_tot: np.ndarray
    F_tot: np.ndarray | list[np.ndarray]
    C_L: np.ndarray
    C_R: np.ndarray | list[np.ndarray]

    def __post_init__(self):
        if self.mode not in ("uncommon", "common", "iid"):
            raise ValueError(f"unknown correlation mode {self.mode!r}")
        self.R_tot = check_psd(self.R_tot, "R_tot")
        self.C_L = check_psd(self.C_L, "C_L")
        if isinstance(self.F_tot, list):
            self.F_tot = [check_psd(F, f"F_tot[{k}]") for k, F in enumerate(self.F_tot)]
        else:
            self.F_tot = check_psd(self.F_tot, "F_tot")
        if isinstance(self.C_R, list):
            self.C_R = [check_psd(C, f"C_R[{k}]") for k, C in enumerate(self.C_R)]
        else:
            self.C_R = check_psd(self.C_R, "C_R")

    def f_tot_list(self, K: int) -> list[np.ndarray]:
        return list(self.F_tot) if isinstance(self.F_tot, list) else [self.F_tot] * K

    def c_r_list(self, K: int) -> list[np.ndarray]:
        return list(self.C_R) if isinstance(self.C_R, list) else [self.C_R] * K


@dataclass
class Scenario:
    """Single source of truth for one problem instance.

    Gains u (direct) and t (cascaded) are linear per-user scalars; p is the
    per-user transmit power; sigma2 the linear noise power. Correlation
    matrices live at full port resolution (M_tot); `stats_*` helpers produce
    the selected-port inputs the solvers consume.
    """

    dims: Dimensions
    correlations: CorrelationSet
    u: np.ndarray
    t: np.ndarray
    p: np.ndarray
    sigma2: float
    name: str = "scenario"

    def __post_init__(self):
        K = self.dims.K
        self.u = np.asarray(self.u, dtype=float).reshape(K)
        self.t = np.asarray(self.t, dtype=float).reshape(K)
        self.p = np.asarray(self.p, dtype=float).reshape(K)
        if (self.u < 0).any() or (self.t < 0).any():
            raise ValueError("link gains must be nonnegative")
        if (self.p <= 0).any():
            raise ValueError("transmit powers must be positive")
        if self.sigma2 <= 0:
            raise ValueError("noise power must be positive")

    @property
    def homogeneous(self) -> bool:
        """True iff every user shares gains, power and correlation matrices."""
        same_scalars = (np.ptp(self.u) == 0.0 and np.ptp(self.t) == 0.0
                        and np.ptp(self.p) == 0.0)
        shared = not (isinstance(self.correlations.F_tot, list)
                      or isinstance(self.correlations.C_R, list))
        return bool(same_scalars and shared)

    # -- selected-port views -------------------------------------------------

    def select_R(self, s: np.ndarray | None = None) -> np.ndarray:
        if s is None:
            return self.correlations.R_tot
        return select_submatrix(self.correlations.R_tot, s)

    def stats_common(self, s: np.ndarray | None = None,
                     phi: np.ndarray | None = None):
        """(F, R, C, u, t, p) inputs for the common-correlation solvers."""
        if isinstance(self.correlations.F_tot, list) or isinstance(self.correlations.C_R, list):
            raise ValueError("scenario has per-user correlations; use stats_uncommon")
        F = self.correlations.F_tot if s is None else select_submatrix(self.correlations.F_tot, s)
        R = self.select_R(s)
        C = effective_ris_correlation(self.correlations.C_L, phi,
                                      self.correlations.C_R, 1.0)[1]
        return F, R, C, self.u, self.t, self.p

    def stats_uncommon(self, s: np.ndarray | None = None,
                       phi: np.ndarray | None = None):
        """(F_k list with gains, R, C_k list with gains, p) for the uncommon solvers."""
        K = self.dims.K
        R = self.select_R(s)
        F_list = []
        for k, F in enumerate(self.correlations.f_tot_list(K)):
            Fk = F if s is None else select_submatrix(F, s)
            F_list.append(self.u[k] * Fk)
        C_list = [effective_ris_correlation(self.correlations.C_L, phi, CR, self.t[k])[1]
                  for k, CR in enumerate(self.correlations.c_r_list(K))]
        return F_list, R, C_list, self.p


@dataclass
class ChannelSample:
    """One channel draw: H (M x K) plus the factors it was assembled from."""

    H: np.ndarray
    X: np.ndarray
    W: np.ndarray
    Y: np.ndarray
    Z: list[np.ndarray] = field(default_factory=list)


# ---------------------------------------------------------------------------
# correlation builders
# ---------------------------------------------------------------------------

def fas_correlation_matrix(geometry: PlanarFasGeometry) -> np.ndarray:
    """Port-grid correlation under 3-D rich scattering.

    [R]_{ij} = j0(2 pi sqrt((|xi-xj| W_x/(N_x-1))^2 + (|yi-yj| W_y/(N_y-1))^2))
    with j0 the spherical Bessel function of the first kind (sin x / x) and
    (xi, yi) integer grid coordinates. Real symmetric PSD.
    """
    if geometry.N_x == 1 or geometry.N_y == 1:
        raise DegenerateGridError(
            "port spacing W/(N-1) is undefined for a single-row/column grid "
            f"(N_x={geometry.N_x}, N_y={geometry.N_y})")
    coords = geometry.port_coordinates().astype(float)
    dx = np.abs(coords[:, None, 0] - coords[None, :, 0]) * geometry.W_x / (geometry.N_x - 1)
    dy = np.abs(coords[:, None, 1] - coords[None, :, 1]) * geometry.W_y / (geometry.N_y - 1)
    arg = 2.0 * np.pi * np.hypot(dx, dy)
    R = spherical_jn(0, arg)
    return check_psd(R, "FAS correlation matrix", tol=1e-8)


def _gauss_legendre_panels(n_panels: int, order: int = 16):
    """Composite Gauss-Legendre nodes/weights on [-180, 180], cached by size."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-180.0, 180.0, n_panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def ris_correlation_matrix(profile: RisAngularProfile, abs_tol: float = 1e-10) -> np.ndarray:
    """RIS linear-array correlation with a truncated-Gaussian angle profile.

    [C]_{mn} = int_{-180}^{180} (2 pi beta^2)^{-1/2}
               exp(j 2 pi d_c (m-n) sin(pi phi/180) - (phi-alpha)^2/(2 beta^2)) dphi

    evaluated by composite Gauss-Legendre quadrature with panel doubling until
    the abs_tol target is met. The Gaussian is used exactly as truncated (not
    renormalized), so the diagonal is ~1 rather than exactly 1. The entry
    depends on m-n only, so one pass over offsets fills the Toeplitz matrix.
    """
    L = profile.L
    offsets = np.arange(L, dtype=float)          # values for m-n = 0..L-1
    vals = np.zeros(L, dtype=complex)
    norm = 1.0 / np.sqrt(2.0 * np.pi * profile.beta ** 2)

    n_panels, max_panels = 16, 4096
    prev = None
    while True:
        nodes, weights = _gauss_legendre_panels(n_panels)
        envelope = norm * np.exp(-(nodes - profile.alpha) ** 2 / (2.0 * profile.beta ** 2))
        phase = np.exp(1j * 2.0 * np.pi * profile.d_c
                       * offsets[:, None] * np.sin(np.pi * nodes / 180.0)[None, :])
        cur = phase @ (weights * envelope)
        if prev is not None and np.abs(cur - prev).max() < abs_tol:
            vals = cur
            break
        if n_panels >= max_panels:
            raise PrecisionError(
                f"RIS correlation quadrature did not reach {abs_tol:.0e} "
                f"with {n_panels} panels (residual {np.abs(cur - prev).max():.3e})")
        prev = cur
        n_panels *= 2

    idx = np.arange(L)
    diff = idx[:, None] - idx[None, :]
    C = np.where(diff >= 0, vals[np.abs(diff)], np.conj(vals[np.abs(diff)]))
    return check_psd(C, "RIS correlation matrix", tol=1e-8)


def path_loss(params: PathLossParams) -> float:
    """Linear gain C / d^alpha."""
    return params.ref_gain / params.distance ** params.exponent


# ---------------------------------------------------------------------------
# port selection
# ---------------------------------------------------------------------------

def select_submatrix(A_tot: np.ndarray, s: np.ndarray, m: int | None = None) -> np.ndarray:
    """Rows/columns of A_tot at the selected (binary s) indices, order kept."""
    s = np.asarray(s)
    if not np.all((s == 0) | (s == 1)):
        raise ConstraintError("selection vector must be binary for submatrix extraction")
    if m is not None and int(s.sum()) != m:
        raise ConstraintError(f"selection has {int(s.sum())} ones, expected {m}")
    idx = np.flatnonzero(s)
    return A_tot[np.ix_(idx, idx)]


def embed_selection(A_tot: np.ndarray, s: np.ndarray,
                    A_tot_sqrt: np.ndarray | None = None) -> np.ndarray:
    """Full-size relaxed-selection surrogate A_tot^{1/2} diag(s) A_tot^{1/2}.

    For s in [0,1]^{M_tot} this is the correlation the relaxed port-selection
    objective is evaluated on; for binary s its nonzero spectrum equals that
    of the directly selected submatrix.
    """
    s = np.asarray(s, dtype=float)
    if (s < 0).any() or (s > 1).any():
        raise ConstraintError("relaxed selection entries must lie in [0, 1]")
    root = psd_sqrt(A_tot, "A_tot") if A_tot_sqrt is None else A_tot_sqrt
    return herm((root * s[None, :]) @ root)


# ---------------------------------------------------------------------------
# RIS phase composition and channel sampling
# ---------------------------------------------------------------------------

def phase_matrix(phi: np.ndarray | None, L: int) -> np.ndarray:
    """Unit-modulus diagonal Phi = diag(exp(j phi)); phi=None means Phi = I."""
    if phi is None:
        return np.eye(L, dtype=complex)
    phi = np.asarray(phi, dtype=float).reshape(L)
    return np.diag(np.exp(1j * phi))


def effective_ris_correlation(C_L: np.ndarray, phi: np.ndarray | None,
                              C_R: np.ndarray, t: float):
    """Cascaded RIS correlation factor and its Gram matrix.

    Returns (C_half, C) with C_half = sqrt(t) C_L^{1/2} Phi C_R^{1/2} and
    C = C_half C_half^H. C is Hermitian PSD; when C_R is diagonal its trace
    is independent of the phase configuration.
    """
    if t < 0:
        raise DomainError("cascaded gain t must be nonnegative")
    L = C_L.shape[0]
    C_half = np.sqrt(t) * psd_sqrt(C_L, "C_L") @ phase_matrix(phi, L) @ psd_sqrt(C_R, "C_R")
    C = herm(C_half @ C_half.conj().T)
    return C_half, C


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Counter-based substream: same draws for a trial regardless of order."""
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(trial)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _cn(rng: np.random.Generator, shape, var: float) -> np.ndarray:
    scale = np.sqrt(var / 2.0)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * scale


class ChannelSampler:
    """Caches matrix square roots so repeated trials only draw Gaussians.

    h_k = sqrt(u_k) F_{c,k}^{1/2} w_k + sqrt(t_k) R^{1/2} X C_L^{1/2} Phi C_{R,k}^{1/2} y_k,
    with X, w_k entrywise CN(0, 1/M) and y_k entrywise CN(0, 1/L).
    """

    def __init__(self, scenario: Scenario, s: np.ndarray | None = None,
                 phi: np.ndarray | None = None):
        dims = scenario.dims
        self.M = int(np.sum(s)) if s is not None else dims.M
        self.K, self.L = dims.K, dims.L
        corr = scenario.correlations

        R = scenario.select_R(s)
        F_list = corr.f_tot_list(self.K)
        if s is not None:
            F_list = [select_submatrix(F, s) for F in F_list]

        self.R_half = psd_sqrt(R, "R")
        # gain-weighted direct-link factors sqrt(u_k) F_{c,k}^{1/2}
        self.F_half = [np.sqrt(scenario.u[k]) * psd_sqrt(F_list[k], f"F[{k}]")
                       for k in range(self.K)]
        Phi = phase_matrix(phi, self.L)
        CL_half = psd_sqrt(corr.C_L, "C_L")
        # cascaded factors C_k^{+/2} = sqrt(t_k) C_L^{1/2} Phi C_{R,k}^{1/2}
        self.C_half = [np.sqrt(scenario.t[k]) * CL_half @ Phi
                       @ psd_sqrt(CR, f"C_R[{k}]")
                       for k, CR in enumerate(corr.c_r_list(self.K))]

    def draw(self, rng: np.random.Generator, keep_components: bool = True) -> ChannelSample:
        M, K, L = self.M, self.K, self.L
        X = _cn(rng, (M, L), 1.0 / M)
        W = _cn(rng, (M, K), 1.0 / M)
        Y = _cn(rng, (L, K), 1.0 / L)
        RX = self.R_half @ X
        H = np.zeros((M, K), dtype=complex)
        Z: list[np.ndarray] = []
        for k in range(K):
            Zk = RX @ self.C_half[k]
            H[:, k] = self.F_half[k] @ W[:, k] + Zk @ Y[:, k]
            if keep_components:
                Z.append(Zk)
        return ChannelSample(H=H, X=X, W=W, Y=Y, Z=Z)


def sample_channel(scenario: Scenario, s: np.ndarray | None,
                   phi: np.ndarray | None, rng: np.random.Generator,
                   keep_components: bool = True) -> ChannelSample:
    """Draw one correlated-Rayleigh realization of the M x K channel."""
    return ChannelSampler(scenario, s, phi).draw(rng, keep_components)
