"""Quasimode hierarchy near the curvature maximum and projections onto the fiber ground state.

Functions of (sigma, tau) are stored as coefficient arrays ``G`` of shape
``(N, n_tau)``: row ``j`` is the tau profile multiplying the scaled Hermite
function psi_j(sigma / ell) / sqrt(ell).  Derivatives and multiplication by
sigma act on rows through banded matrices, so everything in sigma is exact
and the L2 norm is the plain row sum of tau norms.  In tau the discrete
fiber operators of :mod:`magstep.fiber` are used, which makes the first
hierarchy equations hold to solver precision.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError
from .fiber import Grid1D
from .invariants import SpectralInvariants, resolvent_apply
from .linalg import TriDiag, tridiag_eigenvalues

EXTRA_MODES = 12


@dataclass(frozen=True)
class HarmonicOscParams:
    """-c2 d^2/dsigma^2 + K sigma^2 with K = k2 M3 / 2."""
    c2: float
    K: float

    def __post_init__(self):
        if not (self.c2 > 0 and self.K > 0):
            raise ValidationError(f"need c2 > 0 and K > 0, got c2={self.c2}, K={self.K}")

    @classmethod
    def from_invariants(cls, inv: SpectralInvariants, k2: float):
        return cls(inv.c2, 0.5 * k2 * inv.M3)

    @property
    def length(self):
        return (self.c2 / self.K) ** 0.25

    def energy(self, n):
        return (2 * n - 1) * np.sqrt(self.c2 * self.K)


# -- Hermite functions ---------------------------------------------------------------

def hermite_functions(x, N):
    """psi_0 .. psi_{N-1} at ``x`` by the three-term recurrence, shape (N, x.size)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros((N,) + x.shape)
    out[0] = np.pi ** -0.25 * np.exp(-0.5 * x ** 2)
    if N > 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for j in range(1, N - 1):
        out[j + 1] = np.sqrt(2.0 / (j + 1)) * x * out[j] - np.sqrt(j / (j + 1)) * out[j - 1]
    return out


def _ladder(N):
    s = np.sqrt(np.arange(1, N) / 2.0)
    return s


def derivative_matrix(N, ell=1.0):
    """Coefficient map of d/dsigma for the scaled basis."""
    s = _ladder(N)
    D = np.zeros((N, N))
    D[np.arange(N - 1), np.arange(1, N)] = s
    D[np.arange(1, N), np.arange(N - 1)] = -s
    return D / ell


def position_matrix(N, ell=1.0):
    """Coefficient map of multiplication by sigma."""
    s = _ladder(N)
    X = np.zeros((N, N))
    X[np.arange(N - 1), np.arange(1, N)] = s
    X[np.arange(1, N), np.arange(N - 1)] = s
    return X * ell


def harm_eigenpair(n: int, p: HarmonicOscParams, g: Grid1D):
    """Analytic eigenvalue and sampled eigenfunction of the oscillator.

    ``g`` is a grid in sigma.  The sampled vector is renormalized with
    trapezoid weights and has a positive tail at +infinity.
    """
    if int(n) != n or n < 1:
        raise ValidationError(f"mode index must be a positive integer, got {n}")
    ell = p.length
    f = hermite_functions(g.tau / ell, int(n))[-1] / np.sqrt(ell)
    f = f / np.sqrt(g.trapezoid(f ** 2))
    return float(p.energy(n)), f


def harm_discrete_eigenvalues(p: HarmonicOscParams, g: Grid1D, k: int):
    """Three-point discretization of the oscillator, as an independent check."""
    d = g.step
    s = g.tau[1:-1]
    T = TriDiag(2 * p.c2 / d ** 2 + p.K * s ** 2, -np.full(s.size - 1, p.c2 / d ** 2))
    return tridiag_eigenvalues(T, k)


def default_sigma_grid(p: HarmonicOscParams, n: int = 1, widths: float = 12.0, points: int = 801):
    """Half-length of ``widths`` oscillator lengths, widened for n > 4."""
    spread = max(1.0, np.sqrt((2 * n - 1) / 7.0))
    return Grid1D(widths * p.length * spread, points)


# -- tau operators on coefficient rows -----------------------------------------------

class _TauOps:
    def __init__(self, inv: SpectralInvariants):
        g = inv.grid
        self.inv = inv
        self.g = g
        tau = g.tau
        self.u = inv.zeta_grid + inv.b * tau
        self.w = 2 * tau * self.u ** 2 - inv.b * tau ** 2 * self.u
        self.V = self.u ** 2
        self.beta = inv.beta_grid

    def p0(self, G):
        d2 = self.g.step ** 2
        out = np.zeros_like(G)
        out[..., 1:-1] = (-(G[..., :-2] - 2 * G[..., 1:-1] + G[..., 2:]) / d2
                          + (self.V[1:-1] - self.beta) * G[..., 1:-1])
        return out

    def dtau(self, G):
        out = np.zeros_like(G)
        out[..., 1:-1] = (G[..., 2:] - G[..., :-2]) / (2 * self.g.step)
        return out

    def resolvent(self, G):
        out = np.zeros_like(G)
        for j in range(G.shape[0]):
            row = G[j]
            if not np.any(row):
                continue
            re = resolvent_apply(self.inv, row.real) if np.any(row.real) else 0.0
            im = resolvent_apply(self.inv, row.imag) if np.any(row.imag) else 0.0
            out[j] = re + 1j * im
        return out

    def inner(self, a, b):
        return self.g.trapezoid(np.conj(a) * b)

    def norm2(self, G):
        return float(np.real(self.g.trapezoid(np.abs(G) ** 2).sum()))


# -- expansion --------------------------------------------------------------------

@dataclass
class QuasiModeExpansion:
    n: int
    mu: np.ndarray
    g: list = field(repr=False)
    inv: SpectralInvariants = field(repr=False)
    k_max: float = 1.0
    k2: float = -0.5
    osc: Optional[HarmonicOscParams] = None
    sigma_grid: Optional[Grid1D] = None

    @property
    def grids(self):
        return self.sigma_grid, self.inv.grid

    @property
    def n_modes(self):
        return self.g[0].shape[0]

    @property
    def ell(self):
        return self.osc.length

    def total(self, h):
        return (self.g[0] + h ** 0.375 * self.g[1] + h ** 0.5 * self.g[2]
                + h ** 0.75 * self.g[3])

    def mu_total(self, h):
        return h ** 0.5 * self.mu[2] + h ** 0.75 * self.mu[3]

    def to_grid(self, G=None, sigma=None):
        """Sample a coefficient array on the sigma grid, shape (n_sigma, n_tau)."""
        G = self.g[0] if G is None else G
        sigma = self.sigma_grid.tau if sigma is None else sigma
        psi = hermite_functions(np.asarray(sigma) / self.ell, G.shape[0]) / np.sqrt(self.ell)
        return psi.T @ G


class _SigmaOps:
    def __init__(self, N, ell):
        self.D = derivative_matrix(N, ell)
        self.X = position_matrix(N, ell)
        self.D2 = self.D @ self.D
        self.X2 = self.X @ self.X


def _pieces(inv, k_max, k2, N, ell):
    t = _TauOps(inv)
    s = _SigmaOps(N, ell)

    def P1(G):
        return -2j * t.u * (s.D @ G)

    def P2(G):
        return k_max * (t.w * G + t.dtau(G))

    def P3(G):
        S2 = s.X2 @ G
        return -(s.D2 @ G) + 0.5 * k2 * (t.w * S2 + t.dtau(S2))
    return t, s, P1, P2, P3


def build_expansion(inv: SpectralInvariants, k_max: float, k2: float, n: int = 1,
                    sigma_grid: Optional[Grid1D] = None) -> QuasiModeExpansion:
    """Solve the hierarchy (e_0)..(e_3) for mode ``n``."""
    if not k2 < 0:
        raise ValidationError("k2 must be negative")
    if int(n) != n or n < 1:
        raise ValidationError("mode index must be a positive integer")
    osc = HarmonicOscParams.from_invariants(inv, k2)
    N = int(n) + EXTRA_MODES
    t, s, P1, P2, P3 = _pieces(inv, k_max, k2, N, osc.length)
    coef = np.zeros(N)
    coef[n - 1] = 1.0
    phi = inv.phi_a.astype(complex)
    g0 = np.outer(coef, phi)
    mu2 = k_max * inv.M3
    mu3 = osc.energy(n)
    g1 = -t.resolvent(P1(g0))
    g2 = -t.resolvent(P2(g0) - mu2 * g0)
    g3 = -t.resolvent(P1(g1) + P3(g0) - mu3 * g0)
    sigma_grid = sigma_grid or default_sigma_grid(osc, n)
    return QuasiModeExpansion(n=int(n), mu=np.array([0.0, 0.0, mu2, mu3]),
                              g=[g0, g1, g2, g3], inv=inv, k_max=k_max, k2=k2,
                              osc=osc, sigma_grid=sigma_grid)


def hierarchy_residuals(ex: QuasiModeExpansion) -> dict:
    """Max nodewise size of each equation (e_0)..(e_3) after substitution."""
    t, s, P1, P2, P3 = _pieces(ex.inv, ex.k_max, ex.k2, ex.n_modes, ex.ell)
    g0, g1, g2, g3 = ex.g
    mu = ex.mu
    eqs = {
        "e0": t.p0(g0) - mu[0] * g0,
        "e1": t.p0(g1) + P1(g0) - mu[1] * g0,
        "e2": t.p0(g2) + P2(g0) - mu[2] * g0,
        "e3": t.p0(g3) + P1(g1) + P3(g0) - mu[3] * g0,
    }
    return {k: float(np.abs(v).max()) for k, v in eqs.items()}


def solvability_defect(ex: QuasiModeExpansion) -> float:
    """L2 norm in sigma of <P1 g1 + (P3 - mu_3) g0, phi> (zero when f is the oscillator mode)."""
    t, s, P1, P2, P3 = _pieces(ex.inv, ex.k_max, ex.k2, ex.n_modes, ex.ell)
    src = P1(ex.g[1]) + P3(ex.g[0]) - ex.mu[3] * ex.g[0]
    proj = src @ (ex.inv.phi_a * _trap_weights(ex.inv.grid))
    return float(np.linalg.norm(proj))


def _trap_weights(g: Grid1D):
    w = np.full(g.n_points, g.step)
    w[0] = w[-1] = 0.5 * g.step
    return w


def _pnew_coeff(h, G, ex, mu):
    t, s, P1, P2, P3 = _pieces(ex.inv, ex.k_max, ex.k2, G.shape[0], ex.ell)
    return t.p0(G) + h ** 0.375 * P1(G) + h ** 0.5 * P2(G) + h ** 0.75 * P3(G) - mu * G, t


def apply_Pnew_truncated(h, field, inv: SpectralInvariants = None, k_max=None, k2=None,
                         mu=None, sigma_grid: Optional[Grid1D] = None, cutoff=False,
                         eta=1.0 / 16, delta=1.0 / 16, weighted=False):
    """Relative residual ||(P0 + h^3/8 P1 + h^1/2 P2 + h^3/4 P3 - mu) g|| / ||g||.

    ``field`` is either a :class:`QuasiModeExpansion` (mu defaults to the
    expansion's mu(h)) or an array sampled on ``sigma_grid`` x ``inv.grid``,
    for which ``mu``, ``k_max``, ``k2`` are required and sigma derivatives
    use fourth-order differences.  ``cutoff`` multiplies by
    chi(h^eta sigma) chi(h^delta tau) first, which needs a sampled field.
    ``weighted`` measures both norms with the Jacobian
    1 - h^1/2 k(h^1/8 sigma) tau, k expanded to second order and clipped
    at zero (it only vanishes where tau ~ h^(-1/2) and the field is negligible).
    """
    if not h > 0:
        raise ValidationError("h must be positive")
    if isinstance(field, QuasiModeExpansion):
        ex = field
        mu = ex.mu_total(h) if mu is None else mu
        if not (cutoff or weighted):
            G = ex.total(h)
            R, t = _pnew_coeff(h, G, ex, mu)
            return float(np.sqrt(t.norm2(R) / t.norm2(G)))
        inv, k_max, k2 = ex.inv, ex.k_max, ex.k2
        sigma_grid = sigma_grid or ex.sigma_grid
        V = ex.to_grid(ex.total(h), sigma_grid.tau)
    else:
        if inv is None or k_max is None or k2 is None or mu is None or sigma_grid is None:
            raise ValidationError("sampled fields need inv, k_max, k2, mu and sigma_grid")
        V = np.asarray(field, dtype=complex)
        if V.shape != (sigma_grid.n_points, inv.grid.n_points):
            raise ValidationError("field shape does not match the grids")
    if cutoff:
        reach = h ** -eta
        if reach > sigma_grid.half_length:
            raise ValidationError(f"cutoff support {reach:.3g} exceeds the sigma grid {sigma_grid.half_length:.3g}")
        V = V * cutoff_chi(h ** eta * sigma_grid.tau)[:, None] * cutoff_chi(h ** delta * inv.grid.tau)[None, :]
    jac = _jacobian(h, inv, k_max, k2, sigma_grid) if weighted else None
    return _dense_residual(h, V, inv, k_max, k2, mu, sigma_grid, jac)


def _jacobian(h, inv, k_max, k2, sg: Grid1D):
    k = k_max + 0.5 * k2 * h ** 0.25 * sg.tau[:, None] ** 2
    return np.maximum(1.0 - np.sqrt(h) * k * inv.grid.tau[None, :], 0.0)


def _d_sigma(V, d, order):
    """Fourth-order central differences along axis 0 (zero padding outside)."""
    P = np.zeros((V.shape[0] + 4,) + V.shape[1:], dtype=V.dtype)
    P[2:-2] = V
    if order == 1:
        return (-P[4:] + 8 * P[3:-1] - 8 * P[1:-3] + P[:-4]) / (12 * d)
    return (-P[4:] + 16 * P[3:-1] - 30 * P[2:-2] + 16 * P[1:-3] - P[:-4]) / (12 * d * d)


def _dense_residual(h, V, inv, k_max, k2, mu, sg: Grid1D, jac=None):
    t = _TauOps(inv)
    sigma = sg.tau[:, None]
    ds = sg.step
    out = t.p0(V)
    out += h ** 0.375 * (-2j * t.u * _d_sigma(V, ds, 1))
    out += h ** 0.5 * k_max * (t.w * V + t.dtau(V))
    S2 = sigma ** 2 * V
    out += h ** 0.75 * (-_d_sigma(V, ds, 2) + 0.5 * k2 * (t.w * S2 + t.dtau(S2)))
    out -= mu * V
    wt = np.outer(_trap_weights(sg), _trap_weights(inv.grid))
    if jac is not None:
        wt = wt * jac
    return float(np.sqrt((wt * np.abs(out) ** 2).sum() / (wt * np.abs(V) ** 2).sum()))


def cutoff_chi(x):
    """C^2 bump: 1 on [-1/2, 1/2], 0 outside (-1, 1), quintic smoothstep between."""
    t = np.clip((1.0 - np.abs(np.asarray(x, dtype=float))) / 0.5, 0.0, 1.0)
    return t ** 3 * (10 - 15 * t + 6 * t ** 2)


# -- projections ------------------------------------------------------------------

@dataclass(frozen=True)
class ProjectionDiagnostics:
    norm_v: float
    defect_pi0: float
    defect_dtau: float
    defect_tau: float
    norm_Rnew: float = np.nan
    h: float = np.nan


def _check_field(v, inv):
    v = np.asarray(v)
    if v.ndim != 2 or v.shape[1] != inv.grid.n_points:
        raise ValidationError(f"expected shape (n_sigma, {inv.grid.n_points}), got {v.shape}")
    return v


def _flat_norm(v, inv, ds):
    return float(np.sqrt(ds * inv.grid.trapezoid(np.abs(v) ** 2).sum()))


def project_pi0(v, inv: SpectralInvariants, sigma_step: float = 1.0, h=np.nan, with_rnew=False):
    """(Pi_0 v)(sigma, tau) = (int phi v(sigma, .)) phi(tau), plus defect norms.

    Norms are flat L2 with the sigma sum weighted by ``sigma_step``.
    """
    v = _check_field(v, inv)
    phi = inv.phi_a
    coef = inv.grid.trapezoid(phi[None, :] * v)
    P = coef[:, None] * phi[None, :]
    r = v - P
    t = _TauOps(inv)
    diag = ProjectionDiagnostics(
        norm_v=_flat_norm(v, inv, sigma_step),
        defect_pi0=_flat_norm(r, inv, sigma_step),
        defect_dtau=_flat_norm(t.dtau(r), inv, sigma_step),
        defect_tau=_flat_norm(inv.grid.tau[None, :] * r, inv, sigma_step),
        norm_Rnew=(float(np.sqrt(sigma_step * np.sum(np.abs(project_Rnew(v, inv)) ** 2)))
                   if with_rnew else np.nan),
        h=h)
    return P, diag


def phi_ah(inv: SpectralInvariants, kappa, h, delta=1.0 / 16, cutoff=True):
    """chi(h^delta tau)(phi + h^(1/2) kappa phi_cor)."""
    prof = inv.phi_a + np.sqrt(h) * kappa * inv.phi_cor
    if cutoff:
        prof = prof * cutoff_chi(h ** delta * inv.grid.tau)
    return prof


def project_pi_h(v, inv: SpectralInvariants, kappa: float, h: float, delta: float = 1.0 / 16,
                 cutoff=True):
    """Orthogonal projection on span(phi_ah) in tau, in the weight (1 - h^1/2 kappa tau)."""
    v = _check_field(v, inv)
    weight = 1.0 - np.sqrt(h) * kappa * inv.grid.tau
    if cutoff:
        inside = np.abs(inv.grid.tau) < h ** -delta
        if np.any(weight[inside] <= 0):
            raise ValidationError("weight is not positive on the cutoff support")
    elif np.any(weight <= 0):
        raise ValidationError("weight is not positive on the grid")
    q = phi_ah(inv, kappa, h, delta, cutoff)
    qw = q * weight
    nrm = inv.grid.trapezoid(q * qw)
    coef = inv.grid.trapezoid(qw[None, :] * v) / nrm
    return coef[:, None] * q[None, :]


def weighted_profile(inv: SpectralInvariants):
    """phi - 4 (b tau + zeta) R[(b tau + zeta) phi]."""
    u = inv.zeta_grid + inv.b * inv.grid.tau
    return inv.phi_a - 4.0 * u * resolvent_apply(inv, u * inv.phi_a)


def project_Rnew(v, inv: SpectralInvariants, profile=None):
    """(R_new v)(sigma) = int varphi(tau) v(sigma, tau) dtau."""
    v = _check_field(v, inv)
    prof = weighted_profile(inv) if profile is None else profile
    return inv.grid.trapezoid(prof[None, :] * v)


def p0_apply(v, inv: SpectralInvariants):
    """Fiber part P_0 = -d^2 + (zeta + b tau)^2 - beta on a sampled field."""
    return _TauOps(inv).p0(np.asarray(v))


__all__ = ["HarmonicOscParams", "QuasiModeExpansion", "ProjectionDiagnostics",
           "harm_eigenpair", "harm_discrete_eigenvalues", "build_expansion",
           "hierarchy_residuals", "solvability_defect", "apply_Pnew_truncated",
           "cutoff_chi", "project_pi0", "project_pi_h", "project_Rnew",
           "weighted_profile", "phi_ah", "hermite_functions", "p0_apply"]
