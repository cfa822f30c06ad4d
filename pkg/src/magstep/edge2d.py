"""Two-dimensional operator near a curved magnetic edge in Frenet coordinates.

The form

    q(u) = int ( a^-2 |(h d_s - i A) u|^2 + |h d_t u|^2 ) a dt ds,   a = 1 - t k(s),

is discretized on a rectangle in (s, t) with Dirichlet sides.  Each grid
link contributes one squared difference quotient, so the stiffness matrix is
Hermitian by construction; the mass is diag(a ds dt).  A constant shift of
A by -xi h^(1/2) is a gauge change that removes the fast tangential phase
of low-lying states.
"""
import struct
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from .errors import IndefiniteMatrixError, SolverError, ValidationError
from .fiber import Grid1D, field_profile
from .linalg import (EigsInfo, SparseHermitian, TriDiag, hermitian_smallest_eigs,
                     sparse_count_below, tridiag_eigenvalues)
from .invariants import SpectralInvariants
from . import io
from .quasimode import project_pi0, project_Rnew, weighted_profile

PROFILE_KINDS = ("gaussian_bump", "cosine_bump", "flat")


@dataclass(frozen=True)
class CurvatureProfile:
    """Edge curvature k(s) with a single maximum k_max at s = 0 and k''(0) = k2.

    ``flat`` (k = 0) is a straight edge used for reference runs.
    """
    kind: str = "gaussian_bump"
    k_max: float = 1.0
    k2: float = -0.5

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValidationError(f"unknown profile kind {self.kind!r}; expected one of {PROFILE_KINDS}")
        if self.kind == "flat":
            if self.k_max != 0 or self.k2 != 0:
                raise ValidationError("the flat profile needs k_max = 0 and k2 = 0")
            return
        if not self.k_max > 0:
            raise ValidationError("k_max must be positive")
        if not self.k2 < 0:
            raise ValidationError("k2 must be negative")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "flat":
            return np.zeros_like(s)
        if self.kind == "gaussian_bump":
            return self.k_max * np.exp(-(abs(self.k2) / (2 * self.k_max)) * s ** 2)
        # raised cosine on |s| < pi / w, zero outside; C^1 at the junction
        w = np.sqrt(2 * abs(self.k2) / self.k_max)
        return np.where(np.abs(w * s) < np.pi, 0.5 * self.k_max * (1 + np.cos(w * s)), 0.0)


@dataclass(frozen=True)
class EdgeDomain:
    """Rectangle (-S, S) x (-t_minus, T) with Dirichlet sides.

    ``T`` bounds the side t > 0 where the Jacobian 1 - t k shrinks;
    ``t_minus`` defaults to ``T``.  Both grids contain 0 as a node.
    """
    S: float
    T: float
    n_s: int
    n_t: int
    t_minus: Optional[float] = None

    def __post_init__(self):
        if self.t_minus is None:
            object.__setattr__(self, "t_minus", self.T)
        if not (self.S > 0 and self.T > 0 and self.t_minus > 0):
            raise ValidationError("S, T and t_minus must be positive")
        if self.n_s < 3 or self.n_s % 2 == 0:
            raise ValidationError("n_s must be odd and at least 3")
        if self.n_t < 3:
            raise ValidationError("n_t must be at least 3")
        k_minus = self.t_minus / self.dt
        if abs(k_minus - round(k_minus)) > 1e-6:
            raise ValidationError("t = 0 is not a grid node; adjust t_minus, T or n_t")

    @classmethod
    def for_h(cls, h, S=16.0, ds_scale=0.25, dtau=0.2, t_plus=0.5, minus_widths=10.0):
        """Domain scaled to h: ds = ds_scale h^(1/2), dt = dtau h^(1/2).

        The t > 0 side stops at ``t_plus``; the t < 0 side reaches
        ``minus_widths`` h^(1/2).
        """
        rt = np.sqrt(h)
        dt = dtau * rt
        kp = int(np.floor(t_plus / dt + 1e-9))
        km = int(np.ceil(minus_widths * rt / dt - 1e-9))
        js = int(np.ceil(S / (ds_scale * rt)))
        return cls(S=float(S), T=kp * dt, n_s=2 * js + 1, n_t=kp + km + 1, t_minus=km * dt)

    @property
    def ds(self):
        return 2 * self.S / (self.n_s - 1)

    @property
    def dt(self):
        return (self.T + self.t_minus) / (self.n_t - 1)

    @property
    def s(self):
        return np.linspace(-self.S, self.S, self.n_s)

    @property
    def t(self):
        k_minus = int(round(self.t_minus / self.dt))
        return (np.arange(self.n_t) - k_minus) * self.dt

    @property
    def origin(self):
        return self.n_s // 2, int(round(self.t_minus / self.dt))

    def check_frenet(self, profile: CurvatureProfile):
        kmax = float(np.max(profile(self.s))) if profile.kind != "flat" else 0.0
        if 1 - self.T * kmax < 0.5 - 1e-12:
            raise ValidationError(f"1 - T k_max = {1 - self.T * kmax:.3f} < 1/2")


@dataclass
class EigenResult2D:
    h: float
    a: float
    profile: CurvatureProfile
    domain: EdgeDomain
    lambdas: np.ndarray
    eigvecs: List[np.ndarray] = field(repr=False)
    stats: dict = field(default_factory=dict)
    momentum: float = 0.0

    def to_json(self):
        return {"h": self.h, "a": self.a, "lambdas": list(map(float, self.lambdas)),
                "stats": self.stats}


# -- assembly ------------------------------------------------------------------------

def build_gauge_potential(profile: CurvatureProfile, domain: EdgeDomain, a: float, s=None, t=None):
    """F_1(s, t) = -b_a(t) (t - t^2 k(s) / 2) on the node grid (or on given s, t)."""
    s = domain.s if s is None else np.asarray(s)
    t = domain.t if t is None else np.asarray(t)
    S, Tt = np.meshgrid(s, t, indexing="ij")
    return -field_profile(a, Tt) * (Tt - 0.5 * Tt ** 2 * profile(S))


def _link_coeffs(scheme, h, d, A):
    """Coefficients (c_plus, c_minus) of the difference quotient on each link."""
    if scheme == "average":
        return h / d - 0.5j * A, -h / d - 0.5j * A
    if scheme == "peierls":
        return (h / d) * np.exp(-1j * A * d / h), np.full(np.shape(A), -h / d, dtype=complex)
    raise ValidationError(f"unknown link scheme {scheme!r}")


@dataclass
class Operator2D:
    stiffness: SparseHermitian
    mass: np.ndarray
    domain: EdgeDomain
    h: float
    a: float
    profile: CurvatureProfile
    momentum: float = 0.0
    scheme: str = "average"
    alias_floor: float = np.inf

    @property
    def interior_shape(self):
        return self.domain.n_s - 2, self.domain.n_t - 2

    def reduced(self) -> SparseHermitian:
        return self.stiffness.scaled(1.0 / np.sqrt(self.mass))


def assemble_operator2d(h: float, a: float, profile: CurvatureProfile, domain: EdgeDomain,
                        momentum: float = 0.0, scheme: str = "average",
                        gauge: Optional[Callable] = None, field_scale: float = 1.0) -> Operator2D:
    """Stiffness and diagonal mass of the form on the interior nodes.

    ``momentum`` shifts A by -momentum h^(1/2) and ``field_scale``
    multiplies the field (0 gives the field-free box).  ``gauge`` is an optional
    function omega(s, t) whose gradient is added to the potential
    (exact link differences, so with the Peierls scheme the spectrum is
    unchanged).
    """
    if not h > 0:
        raise ValidationError("h must be positive")
    if not -1 <= a <= 1:
        raise ValidationError("a must lie in [-1, 1]")
    domain.check_frenet(profile)
    s, t = domain.s, domain.t
    ds, dt = domain.ds, domain.dt
    ns, nt = domain.n_s, domain.n_t
    mi, ni = ns - 2, nt - 2

    def idx(j, k):
        return (j - 1) * ni + (k - 1)

    rows, cols, vals = [], [], []
    diag = np.zeros(mi * ni)

    def add_links(jm, km, jp, kp, w, cp, cm):
        # q += w |cp u(jp,kp) + cm u(jm,km)|^2 ; endpoints on the boundary drop out
        inside_p = (jp >= 1) & (jp <= ns - 2) & (kp >= 1) & (kp <= nt - 2)
        inside_m = (jm >= 1) & (jm <= ns - 2) & (km >= 1) & (km <= nt - 2)
        ip = idx(jp, kp)
        im = idx(jm, km)
        np.add.at(diag, ip[inside_p], (w * np.abs(cp) ** 2)[inside_p])
        np.add.at(diag, im[inside_m], (w * np.abs(cm) ** 2)[inside_m])
        both = inside_p & inside_m
        rows.append(ip[both])
        cols.append(im[both])
        vals.append((w * np.conj(cp) * cm)[both])

    # s-links at interior t rows
    J, K = np.meshgrid(np.arange(ns - 1), np.arange(1, nt - 1), indexing="ij")
    smid = 0.5 * (s[J] + s[J + 1])
    tt = t[K]
    jac = 1.0 - tt * profile(smid)
    A = (-field_scale * field_profile(a, tt) * (tt - 0.5 * tt ** 2 * profile(smid))
         - momentum * np.sqrt(h))
    if gauge is not None:
        A = A + (gauge(s[J + 1], tt) - gauge(s[J], tt)) / ds
    cp, cm = _link_coeffs(scheme, h, ds, A)
    add_links(J.ravel(), K.ravel(), (J + 1).ravel(), K.ravel(),
              (ds * dt / jac).ravel(), cp.ravel(), cm.ravel())
    floor = alias_floor(h, ds, A, field_scale * field_profile(a, tt)) if scheme == "average" else np.inf

    # t-links at interior s columns
    J, K = np.meshgrid(np.arange(1, ns - 1), np.arange(nt - 1), indexing="ij")
    tmid = 0.5 * (t[K] + t[K + 1])
    jac = 1.0 - tmid * profile(s[J])
    if gauge is not None:
        A2 = (gauge(s[J], t[K + 1]) - gauge(s[J], t[K])) / dt
        cp, cm = _link_coeffs(scheme, h, dt, A2)
    else:
        cp = np.full(J.shape, h / dt, dtype=complex)
        cm = np.full(J.shape, -h / dt, dtype=complex)
    add_links(J.ravel(), K.ravel(), J.ravel(), (K + 1).ravel(),
              (ds * dt * jac).ravel(), cp.ravel(), cm.ravel())

    stiff = SparseHermitian.from_lower(mi * ni, diag, np.concatenate(rows),
                                       np.concatenate(cols), np.concatenate(vals))
    Sg, Tg = np.meshgrid(s[1:-1], t[1:-1], indexing="ij")
    mass = ((1.0 - Tg * profile(Sg)) * ds * dt).ravel()
    if np.any(mass <= 0):
        raise ValidationError("nonpositive Jacobian on the grid")
    return Operator2D(stiff, mass, domain, h, a, profile, momentum, scheme, floor)


def alias_floor(h, ds, A, b):
    """Rough level of aliased s-modes of the averaged link quotient.

    On a link with potential A the averaged quotient has symbol
    (2h/ds) sin(p/2) - A cos(p/2), so it mimics a field reduced by
    c = cos(p/2) = (1 + (A ds / 2h)^2)^(-1/2).  The estimate is
    h |b| c minimized over the s-links where the field is nonzero.  It
    ignores the walls, so it is a diagnostic and not a bound.
    """
    b = np.abs(np.broadcast_to(b, np.shape(A)))
    c = 1.0 / np.sqrt(1.0 + (np.asarray(A) * ds / (2.0 * h)) ** 2)
    sel = b > 0
    return float(h * np.min(b[sel] * c[sel])) if np.any(sel) else np.inf


# -- solve ---------------------------------------------------------------------------

def _count_below(A, sigma):
    for bump in (0.0, 1e-9, -1e-9, 1e-7):
        try:
            return sparse_count_below(A, sigma * (1.0 + bump))
        except IndefiniteMatrixError:
            continue
    raise SolverError(f"could not count eigenvalues below {sigma}")


def solve_eigs2d(op: Operator2D, k: int = 2, tol: float = 1e-9, shift: Optional[float] = None,
                 block_size: Optional[int] = None, max_iter: int = 400, seed: int = 0,
                 certify: bool = True) -> EigenResult2D:
    """Lowest ``k`` eigenpairs of K u = lambda M u.

    The pencil is reduced by M^(-1/2) on both sides and passed to block
    inverse iteration with a sparse LU of the shifted matrix.  Inverse
    iteration finds the pairs nearest the shift, so with ``certify`` an
    inertia count checks that nothing lies below the returned values; if
    something does, a shift under the bottom of the spectrum is located by
    bisection on the count and the solve is repeated.  Vectors come back on
    the full node grid, M-normalized, with a real positive value at the
    origin.
    """
    t0 = time.perf_counter()
    A = op.reduced()
    info = EigsInfo()
    sigma = 0.0 if shift is None else float(shift)
    restarts = 0
    while True:
        pairs = hermitian_smallest_eigs(A, k, tol=tol, block_size=block_size, max_iter=max_iter,
                                        shift=sigma, inner="lu", seed=seed, info=info)
        if not certify or k == 0:
            break
        top = pairs[-1].value
        count = _count_below(A, top + 1e-7 * abs(top))
        if count <= k:
            break
        if restarts >= 2:
            raise SolverError(f"{count} eigenvalues lie below the {k} returned ones")
        restarts += 1
        lo = min(sigma, pairs[0].value)
        step = max(abs(top - lo), 1e-3 * abs(top))
        while _count_below(A, lo) > 0:
            lo -= step
            step *= 2.0
        hi = top
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            if _count_below(A, mid) > 0:
                hi = mid
            else:
                lo = mid
            if hi - lo < 1e-4 * abs(hi):
                break
        sigma = lo - 0.5 * (hi - lo)
    dom = op.domain
    mi, ni = op.interior_shape
    j0, k0 = dom.origin
    vecs = []
    for p in pairs:
        x = p.vector / np.sqrt(op.mass)
        x = x / np.sqrt(np.sum(op.mass * np.abs(x) ** 2))
        full = np.zeros((dom.n_s, dom.n_t), dtype=complex)
        full[1:-1, 1:-1] = x.reshape(mi, ni)
        ref = full[j0, k0]
        if abs(ref) > 0:
            full *= np.conj(ref) / abs(ref)
            full[j0, k0] = abs(ref)
        vecs.append(full)
    stats = {"iterations": info.iterations, "residuals": [float(r) for r in info.residuals],
             "n_unknowns": mi * ni, "shift": sigma, "restarts": restarts, "scheme": op.scheme,
             "alias_floor": op.alias_floor if np.isfinite(op.alias_floor) else None,
             "seconds": time.perf_counter() - t0,
             "grid": {"S": dom.S, "T": dom.T, "t_minus": dom.t_minus, "n_s": dom.n_s, "n_t": dom.n_t}}
    return EigenResult2D(op.h, op.a, op.profile, dom, np.array([p.value for p in pairs]),
                         vecs, stats, op.momentum)


def predicted_lambda(h, inv: SpectralInvariants, profile: CurvatureProfile, n=1):
    """h beta + h^(3/2) k_max M_3 + h^(7/4) (2n-1) sqrt(k2 M_3 c2 / 2)."""
    e = np.sqrt(profile.k2 * inv.M3 * inv.c2 / 2) if profile.kind != "flat" else 0.0
    return h * inv.beta_a + h ** 1.5 * profile.k_max * inv.M3 + h ** 1.75 * (2 * n - 1) * e


def check_edge_localized(res: EigenResult2D, widths=8.0, max_mass=1e-2):
    """Raise SolverError if a mode keeps more than ``max_mass`` beyond |t| >= widths h^(1/2).

    Edge states decay on the scale h^(1/2) away from t = 0; a low mode
    sitting elsewhere is a discretization artifact (aliasing of the
    averaged scheme at large |A| ds / h) and must not be reported.
    """
    for n in range(len(res.lambdas)):
        m = mass_outside(res, n, t_cut=widths * np.sqrt(res.h))
        if m > max_mass:
            raise SolverError(
                f"mode {n + 1} at h={res.h:g} has mass {m:.3g} beyond |t| >= {widths:g} h^(1/2); "
                "it is not an edge state (reduce ds_scale or the normal extent of the domain)")
    return res


def solve_edge(h, inv: SpectralInvariants, profile: CurvatureProfile, k=2, S=16.0,
               ds_scale=0.25, dtau=0.2, t_plus=0.5, minus_widths=10.0, tol=1e-9,
               scheme="average") -> EigenResult2D:
    """Assemble on an h-scaled domain with the zeta gauge shift, solve and check localization."""
    dom = EdgeDomain.for_h(h, S, ds_scale, dtau, t_plus, minus_widths)
    op = assemble_operator2d(h, inv.a, profile, dom, momentum=inv.zeta_a, scheme=scheme)
    shift = 0.98 * min(predicted_lambda(h, inv, profile, 1), h * inv.beta_a)
    return check_edge_localized(solve_eigs2d(op, k, tol=tol, shift=shift))


# -- fitting --------------------------------------------------------------------------

@dataclass
class FitReport:
    rows: list
    predicted: dict
    coefficients: dict
    deviations: dict
    slopes: dict
    free_fit: dict

    def to_json(self):
        return {"rows": self.rows, "predicted": self.predicted, "coefficients": self.coefficients,
                "deviations": self.deviations, "slopes": self.slopes, "free_fit": self.free_fit}


def _intercept(x, y):
    if len(x) == 1:
        return float(y[0]), 0.0
    slope, icpt = np.polyfit(x, y, 1)
    return float(icpt), float(slope)


def _loglog(x, y):
    """Log-log slope of |y| against x, nan when some |y| is zero."""
    y = np.abs(y)
    if np.any(y == 0):
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def fit_asymptotics(hs, lambdas, beta, kM3, E1, gap=None, beta_ref=None) -> FitReport:
    """Peel the eigenvalue expansion order by order.

    ``lambdas`` has one row per h with lambda_1, lambda_2, ... .  The third
    coefficient of mode n is the h -> 0 intercept of a straight-line fit of
    Lambda_n(h) / h^(3/4) in h^(1/4), where
    Lambda_n = lambda_n / h - beta - kM3 h^(1/2).

    ``beta`` is a scalar or one value per h (a discretization-matched
    constant); ``beta_ref`` is what the fitted c0 is compared with.
    """
    hs = np.asarray(hs, dtype=float)
    L = np.atleast_2d(np.asarray(lambdas, dtype=float))
    if L.shape[0] != hs.size:
        L = L.T
    if hs.size < 3 or np.unique(hs).size < 3:
        raise ValidationError("need at least three distinct h values")
    order = np.argsort(-hs)
    beta = np.broadcast_to(np.asarray(beta, dtype=float), hs.shape)
    hs, L, beta = hs[order], L[order], beta[order]
    beta_ref = float(beta[-1]) if beta_ref is None else float(beta_ref)
    gap = 2.0 * E1 if gap is None else gap  # sqrt(2 k2 M3 c2) = 2 E1
    x = hs ** 0.25
    nmodes = L.shape[1]
    Lam = L / hs[:, None] - beta[:, None] - kM3 * np.sqrt(hs)[:, None]
    ratio = Lam / hs[:, None] ** 0.75
    rows = []
    for i, h in enumerate(hs):
        r = {"h": float(h), "beta": float(beta[i])}
        for n in range(nmodes):
            r[f"lambda_{n + 1}"] = float(L[i, n])
            r[f"Lambda_{n + 1}"] = float(Lam[i, n])
            r[f"Lambda_{n + 1}_over_h34"] = float(ratio[i, n])
        if nmodes >= 2:
            r["gap_over_h74"] = float((L[i, 1] - L[i, 0]) / h ** 1.75)
        rows.append(r)
    coef, slopes = {}, {}
    # lambda/h on {1, h^1/2, h^3/4}: exact for three points of the truncated expansion
    B = np.column_stack([np.ones_like(hs), np.sqrt(hs), hs ** 0.75])
    sol = np.linalg.lstsq(B, L[:, 0] / hs, rcond=None)[0]
    free = {"c0": float(sol[0]), "c1": float(sol[1]), "c2": float(sol[2])}
    coef["c0_from_lambda_over_h"] = free["c0"]
    c1, _ = _intercept(hs ** 0.25, (L[:, 0] / hs - beta) / np.sqrt(hs))
    coef["c1_from_peel"] = c1
    for n in range(nmodes):
        icpt, sl = _intercept(x, ratio[:, n])
        coef[f"third_{n + 1}"] = icpt
        slopes[f"third_{n + 1}_vs_h14"] = sl
        slopes[f"Lambda_{n + 1}_loglog"] = _loglog(hs, Lam[:, n])
    if nmodes >= 2:
        g = (L[:, 1] - L[:, 0]) / hs ** 1.75
        coef["gap"], slopes["gap_vs_h14"] = _intercept(x, g)
        coef["ladder"] = coef["third_2"] / coef["third_1"]
        slopes["gap_loglog"] = _loglog(hs, L[:, 1] - L[:, 0])
    pred = {"beta": beta_ref, "kM3": kM3, "third_1": E1, "gap": gap, "ladder": 3.0}
    for n in range(2, nmodes + 1):
        pred[f"third_{n}"] = (2 * n - 1) * E1
    dev = {}
    for key, p in (("c0_from_lambda_over_h", beta_ref), ("c1_from_peel", kM3)):
        dev[key] = abs(coef[key] - p) / abs(p) if p else abs(coef[key])
    for key in [k for k in coef if k.startswith("third_")] + (["gap", "ladder"] if nmodes >= 2 else []):
        p = pred[key]
        dev[key] = abs(coef[key] - p) / abs(p)
    return FitReport(rows, pred, coef, dev, slopes, free)


def matched_fiber_beta(domain: EdgeDomain, h: float, a: float, zeta: float) -> float:
    """Band minimum of the fiber operator on the normal nodes of ``domain``.

    Subtracting it instead of beta_a cancels the leading normal
    discretization and truncation error of the 2D eigenvalues.
    """
    tau = domain.t[1:-1] / np.sqrt(h)
    d = domain.dt / np.sqrt(h)
    off = -np.ones(tau.size - 1) / d ** 2

    def mu(x):
        V = (x + field_profile(a, tau) * tau) ** 2
        return tridiag_eigenvalues(TriDiag(2.0 / d ** 2 + V, off), 1)[0]

    r = minimize_scalar(mu, bracket=(zeta - 0.05, zeta, zeta + 0.05), tol=1e-10)
    return float(r.fun)


def fit_results(results: List[EigenResult2D], inv: SpectralInvariants, profile: CurvatureProfile,
                matched=True) -> FitReport:
    """:func:`fit_asymptotics` on solver output with constants from ``inv``.

    With ``matched`` the leading constant subtracted at each h is the band
    minimum of the 1D discretization on the same normal grid.
    """
    if matched:
        beta = [matched_fiber_beta(r.domain, r.h, inv.a, inv.zeta_a) for r in results]
    else:
        beta = inv.beta_a
    E1 = float(np.sqrt(profile.k2 * inv.M3 * inv.c2 / 2))
    k = min(len(r.lambdas) for r in results)
    return fit_asymptotics([r.h for r in results], [r.lambdas[:k] for r in results],
                           beta, profile.k_max * inv.M3, E1, 2 * E1, beta_ref=inv.beta_a)


# -- diagnostics -----------------------------------------------------------------------

def mass_outside(res: EigenResult2D, n=0, t_cut=None, s_cut=None):
    """Fraction of the (Jacobian-weighted) mass with |t| >= t_cut or |s| >= s_cut."""
    dom = res.domain
    u = res.eigvecs[n]
    S, T = np.meshgrid(dom.s, dom.t, indexing="ij")
    w = (1 - T * res.profile(S)) * np.abs(u) ** 2
    mask = np.zeros_like(w, dtype=bool)
    if t_cut is not None:
        mask |= np.abs(T) >= t_cut
    if s_cut is not None:
        mask |= np.abs(S) >= s_cut
    return float(w[mask].sum() / w.sum())


def _decay_rate(x, m, lo_frac=1e-2, hi_frac=1e-10):
    """Exponential rate from the tail of a nonnegative profile m(x), x >= 0."""
    mx = m.max()
    sel = (m < lo_frac * mx) & (m > hi_frac * mx) & (x > 0)
    if sel.sum() < 3:
        return float("nan")
    return float(-np.polyfit(x[sel], np.log(m[sel]), 1)[0])


def rescaled_profile(res: EigenResult2D, inv: SpectralInvariants, n=0):
    """v(sigma, tau) on sigma = s h^(-1/8) and inv.grid's tau, L2-normalized in (sigma, tau).

    The solve already uses the zeta gauge, so removing the phase
    exp(i zeta sigma / h^(3/8)) is built in.  Values are interpolated in tau
    by cubic splines and set to zero outside the domain.
    """
    dom = res.domain
    h = res.h
    if abs(res.momentum - inv.zeta_a) > 1e-8:
        ph = np.exp(-1j * (inv.zeta_a - res.momentum) * dom.s / np.sqrt(h))
        u = res.eigvecs[n] * ph[:, None]
    else:
        u = res.eigvecs[n]
    tau_src = dom.t / np.sqrt(h)
    tau = inv.grid.tau
    inside = (tau >= tau_src[0]) & (tau <= tau_src[-1])
    v = np.zeros((dom.n_s, tau.size), dtype=complex)
    cs = CubicSpline(tau_src, u, axis=1)
    v[:, inside] = cs(tau[inside])
    sigma = dom.s / h ** 0.125
    dsig = sigma[1] - sigma[0]
    nrm = np.sqrt(dsig * inv.grid.trapezoid(np.abs(v) ** 2).sum())
    return sigma, v / nrm


def localization_diagnostics(res: EigenResult2D, inv: SpectralInvariants, n=0) -> dict:
    h = res.h
    dom = res.domain
    out = {"h": h, "mode": n + 1}
    for c in (2, 4, 8):
        out[f"mass_t_ge_{c}sqrt_h"] = mass_outside(res, n, t_cut=c * np.sqrt(h))
        out[f"mass_s_ge_{c}h18"] = mass_outside(res, n, s_cut=c * h ** 0.125)
    u2 = np.abs(res.eigvecs[n]) ** 2
    ms = u2.sum(axis=1)
    mt = u2.sum(axis=0)
    out["s_decay_rate"] = _decay_rate(np.abs(dom.s[dom.s > 0]), ms[dom.s > 0])
    out["t_decay_rate_plus"] = _decay_rate(dom.t[dom.t > 0], mt[dom.t > 0])
    out["t_decay_rate_minus"] = _decay_rate(-dom.t[dom.t < 0], mt[dom.t < 0])
    out["s_mass_at_boundary"] = float(ms[[1, -2]].max() / ms.max())
    sigma, v = rescaled_profile(res, inv, n)
    dsig = sigma[1] - sigma[0]
    P, diag = project_pi0(v, inv, sigma_step=dsig, h=h)
    rn = project_Rnew(v, inv, weighted_profile(inv))
    out["norm_v"] = diag.norm_v
    out["defect_pi0"] = diag.defect_pi0
    out["defect_dtau"] = diag.defect_dtau
    out["defect_tau"] = diag.defect_tau
    out["norm_Rnew"] = float(np.sqrt(dsig * np.sum(np.abs(rn) ** 2)))
    out["one_minus_4I2"] = 1 - 4 * inv.I2
    dv = np.gradient(v, dsig, axis=0) * h ** 0.375
    d2v = np.gradient(dv, dsig, axis=0) * h ** 0.375
    out["norm_h38_dsigma_v"] = float(np.sqrt(dsig * inv.grid.trapezoid(np.abs(dv) ** 2).sum()))
    out["norm_h38_dsigma2_v"] = float(np.sqrt(dsig * inv.grid.trapezoid(np.abs(d2v) ** 2).sum()))
    return out


# -- binary dumps ----------------------------------------------------------------------

DUMP_MAGIC = b"MSTP"
DUMP_VERSION = 1


def dump_grid(path, u, h=0.0):
    """Row-major little-endian complex64 after a 32-byte header.

    Header: magic, uint32 version, uint32 n_s, uint32 n_t, float64 h, 8 zero bytes.
    """
    u = np.asarray(u)
    ns, nt = u.shape
    head = DUMP_MAGIC + struct.pack("<IIId8x", DUMP_VERSION, ns, nt, float(h))
    assert len(head) == 32
    return io.write_bytes(path, head + u.astype("<c8").tobytes(order="C"))


def load_grid(path):
    raw = open(path, "rb").read()
    if raw[:4] != DUMP_MAGIC:
        raise ValidationError("not a grid dump")
    version, ns, nt, h = struct.unpack("<IIId", raw[4:24])
    data = np.frombuffer(raw[32:], dtype="<c8").reshape(ns, nt)
    return data, {"version": version, "h": h}
