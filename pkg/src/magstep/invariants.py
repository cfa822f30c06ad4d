"""Spectral constants of the step-field fiber family and the curvature-weighted model.

Everything here lives on a :class:`~magstep.fiber.Grid1D`.  Scalars are
computed on the working grid and on a companion grid with half the step,
then combined by Richardson extrapolation; vectors stay on the working grid.
"""
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import BracketError, ValidationError
from .fiber import (FiberParams, Grid1D, band_energy, band_value, centered_slope,
                    build_fiber_operator, field_profile, richardson)
from .linalg import TriDiag, cg_solve, tridiag_eigenvalues
from . import io

SCHEMA_VERSION = 2
ZETA_BRACKET = (-3.0, 0.0)


@dataclass(frozen=True)
class SpectralInvariants:
    a: float
    beta_a: float
    zeta_a: float
    phi_a: np.ndarray = field(repr=False)
    phi0: float
    dphi0: float
    M2: float
    M3: float
    I2: float
    c2: float
    mu_second: float
    phi_cor: np.ndarray = field(repr=False)
    grid: Grid1D
    # values that are exact for the discrete problem on ``grid``
    beta_grid: float = np.nan
    zeta_grid: float = np.nan
    # raw invariants on the half-step grid; None means no extrapolation
    refined: Optional["SpectralInvariants"] = field(default=None, repr=False)

    @property
    def tau(self):
        return self.grid.tau

    @property
    def b(self):
        return field_profile(self.a, self.grid.tau)

    def operator(self) -> TriDiag:
        return build_fiber_operator(FiberParams(self.a, self.zeta_grid), self.grid)


@dataclass(frozen=True)
class WeightedModelParams:
    a: float
    xi: float
    kappa: float
    h: float
    delta: float

    def __post_init__(self):
        if not -1.0 <= self.a <= 1.0:
            raise ValidationError(f"a must lie in [-1, 1], got {self.a}")
        if not self.h > 0:
            raise ValidationError("h must be positive")
        if not 0 < self.delta < 1.0 / 12.0:
            raise ValidationError(f"delta must lie in (0, 1/12), got {self.delta}")
        if abs(self.kappa) * self.h ** (0.5 - self.delta) >= 1.0 / 3.0:
            raise ValidationError("need |kappa| h^(1/2 - delta) < 1/3")

    @property
    def half_width(self):
        return self.h ** (-self.delta)


# -- zeta and beta ---------------------------------------------------------------

def find_zeta(a: float, g: Grid1D, xtol=1e-13):
    """Minimizer and minimum of the band function on the grid.

    The Feynman-Hellmann derivative is the exact derivative of the discrete
    eigenvalue, so a root solve on it lands on the discrete minimizer.
    """
    if 0 < a < 1:
        raise ValidationError("for 0 < a < 1 the band function has no interior minimum")
    if a == 1:
        raise ValidationError("for a = 1 the band function is constant")
    if not -1 <= a <= 0:
        raise ValidationError(f"a must lie in [-1, 0], got {a}")

    def dmu(xi):
        return band_value(FiberParams(a, xi), g).mu_prime

    lo, hi = ZETA_BRACKET
    flo, fhi = dmu(lo), dmu(hi)
    if not (flo < 0 < fhi):
        raise BracketError(f"mu' does not change sign on [{lo}, {hi}] ({flo:.3e}, {fhi:.3e})")
    zeta = brentq(dmu, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
    return float(zeta), band_energy(FiberParams(a, zeta), g)


def second_derivative_fd(a, xi, g, step=1e-3):
    """Centered second difference of mu_a at ``xi``, Richardson-refined in the step."""
    def d2(s):
        m = [band_energy(FiberParams(a, xi + k * s), g) for k in (-1, 0, 1)]
        return (m[0] - 2 * m[1] + m[2]) / s ** 2
    return float(richardson(d2(2 * step), d2(step)))


# -- quadratures ---------------------------------------------------------------

def inverse_profile(a, g: Grid1D):
    """1/b_a on the nodes.

    At tau = 0 the average of the one-sided limits is used, which is what a
    trapezoid rule split at the interface gives.  Any one-sided choice there
    costs first order accuracy.
    """
    if a == 0:
        raise ValidationError("1/b_a is undefined for a = 0")
    w = 1.0 / field_profile(a, g.tau)
    w[g.center] = 0.5 * (1.0 + 1.0 / a)
    return w


def _combine(inv: SpectralInvariants, fn):
    if inv.refined is None:
        return float(fn(inv))
    return float(richardson(fn(inv), fn(inv.refined)))


def _moment_raw(n, inv):
    g = inv.grid
    u = inv.zeta_grid + inv.b * g.tau
    return g.trapezoid(inverse_profile(inv.a, g) * u ** n * inv.phi_a ** 2)


def moment(n: int, inv: SpectralInvariants) -> float:
    """M_n = int b^-1 (zeta + b tau)^n phi^2 dtau."""
    if int(n) != n or n < 1 or n > 8:
        raise ValidationError(f"moment order must be an integer in [1, 8], got {n}")
    return _combine(inv, lambda s: _moment_raw(int(n), s))


def inverse_weight_mass(inv: SpectralInvariants) -> float:
    """int b^-1 phi^2."""
    return _combine(inv, lambda s: s.grid.trapezoid(inverse_profile(s.a, s.grid) * s.phi_a ** 2))


def _phi0_dphi0(phi, g):
    return float(phi[g.center]), centered_slope(phi, g)


def m3_closed_form(inv: SpectralInvariants) -> float:
    return (1.0 / inv.a - 1.0) * inv.zeta_a * inv.phi0 * inv.dphi0 / 3.0


def m2_closed_form(inv: SpectralInvariants) -> float:
    """Stated closed form for M_2, kept verbatim for comparison.

    Quadrature disagrees with it away from a = -1; see
    :func:`m2_closed_form_virial` for the expression that matches.
    """
    return (-0.5 * inv.beta_a * inverse_weight_mass(inv)
            + 0.25 * (1.0 / inv.a - 1.0) * inv.zeta_a * inv.phi0 * inv.dphi0)


def m2_closed_form_virial(inv: SpectralInvariants) -> float:
    """M_2 = beta/2 int b^-1 phi^2 + (1/a - 1) phi(0) phi'(0) / 4.

    Obtained by the scaling (virial) identity on each half-line with
    u = zeta + b tau as variable.
    """
    return (0.5 * inv.beta_a * inverse_weight_mass(inv)
            + 0.25 * (1.0 / inv.a - 1.0) * inv.phi0 * inv.dphi0)


def _identities_raw(s: SpectralInvariants):
    g = s.grid
    tau = g.tau
    b = s.b
    u = s.zeta_grid + b * tau
    p2 = s.phi_a ** 2
    d = g.step
    dphi = np.diff(s.phi_a) / d
    mid = 0.5 * (tau[1:] + tau[:-1])
    return np.array([
        g.trapezoid(tau * u * p2),
        g.trapezoid(tau * u ** 2 * p2),
        g.trapezoid(b * tau ** 2 * u * p2),
        g.trapezoid(tau * p2),
        float(np.sum(mid * dphi ** 2) * d),
        g.trapezoid(u * p2),
    ])


def moment_identities(inv: SpectralInvariants) -> dict:
    """Left side minus right side for each moment identity.

    Right sides use the quadrature moments M_2, M_3 and int b^-1 phi^2.
    The extra entry ``orthogonality`` is int (zeta + b tau) phi^2.  The
    entry ``tau_dphi2_rederived`` tests int tau phi'^2 against
    2 M_3 - 3 zeta M_2 + beta zeta int b^-1 phi^2, which is what the
    multiplier tau^2 phi' gives; the stated right side carries
    -2 zeta M_2 instead.
    """
    if inv.refined is None:
        lhs = _identities_raw(inv)
    else:
        lhs = richardson(_identities_raw(inv), _identities_raw(inv.refined))
    M2, M3, z, beta = inv.M2, inv.M3, inv.zeta_a, inv.beta_a
    ib = inverse_weight_mass(inv)
    rhs = np.array([M2, M3 - z * M2, M3 - 2 * z * M2, -z * ib,
                    beta * z * ib + 2 * M3 - 2 * z * M2, 0.0])
    names = ["tau_u", "tau_u2", "b_tau2_u", "tau", "tau_dphi2", "orthogonality"]
    out = {k: float(v) for k, v in zip(names, lhs - rhs)}
    out["tau_dphi2_rederived"] = float(lhs[4] - (beta * z * ib + 2 * M3 - 3 * z * M2))
    return out


# -- resolvent -------------------------------------------------------------------

def resolvent_apply(inv: SpectralInvariants, u, tol=1e-10, info=None):
    """Regularized resolvent: the solution orthogonal to phi of (h - beta) v = u_perp.

    Works on the grid problem; ``u`` and the result are nodal vectors with
    zero end values.
    """
    g = inv.grid
    u = np.asarray(u, dtype=float)
    if u.shape != (g.n_points,):
        raise ValidationError(f"u must have shape ({g.n_points},), got {u.shape}")
    phi = inv.phi_a
    u_perp = u - g.inner(phi, u) * phi
    if not np.any(u_perp[1:-1]):
        return np.zeros_like(u)
    T = inv.operator().shifted(inv.beta_grid)
    q = phi[1:-1] / np.linalg.norm(phi[1:-1])
    # the equation is scaled by the step so the CG residual matches the L2 norm
    rhs = u_perp[1:-1]
    x = cg_solve(T, rhs, tol=tol, deflation=q, info=info)
    v = np.zeros_like(u)
    v[1:-1] = x
    return v - g.inner(phi, v) * phi


def _h1_phi(s: SpectralInvariants):
    """(d/dtau + 2 tau u^2 - b tau^2 u) phi with u = zeta + b tau."""
    g = s.grid
    tau, b, phi = g.tau, s.b, s.phi_a
    u = s.zeta_grid + b * tau
    dphi = np.zeros_like(phi)
    dphi[1:-1] = (phi[2:] - phi[:-2]) / (2 * g.step)
    return dphi + (2 * tau * u ** 2 - b * tau ** 2 * u) * phi


def _m3_grid(s: SpectralInvariants):
    """M_3 as the weight of phi in h1 phi on this grid (makes h1 phi - M_3 phi exactly admissible)."""
    return float(s.grid.inner(s.phi_a, _h1_phi(s)))


def _i2_raw(s: SpectralInvariants):
    u = (s.zeta_grid + s.b * s.tau) * s.phi_a
    return float(s.grid.inner(u, resolvent_apply(s, u)))


def compute_I2_c2(inv: SpectralInvariants):
    I2 = _combine(inv, _i2_raw)
    return I2, 1.0 - 4.0 * I2


def phi_cor(inv: SpectralInvariants, m3=None):
    """-R (h1 phi - M_3 phi) on the working grid.

    By default M_3 is the grid-consistent value so the source is exactly
    orthogonal to phi.
    """
    m3 = _m3_grid(inv) if m3 is None else m3
    return -resolvent_apply(inv, _h1_phi(inv) - m3 * inv.phi_a)


def phi_cor_source(inv: SpectralInvariants, m3=None):
    m3 = inv.M3 if m3 is None else m3
    return _h1_phi(inv) - m3 * inv.phi_a


def second_fiber_value(inv: SpectralInvariants) -> float:
    """mu_2(zeta_a), the second eigenvalue at the band minimum."""
    vals = [tridiag_eigenvalues(s.operator(), 2)[1]
            for s in ([inv] if inv.refined is None else [inv, inv.refined])]
    return float(vals[0] if len(vals) == 1 else richardson(vals[0], vals[1]))


# -- assembly ----------------------------------------------------------------------

def _raw_invariants(a, g: Grid1D) -> SpectralInvariants:
    zeta, beta = find_zeta(a, g)
    bp = band_value(FiberParams(a, zeta), g)
    phi0, dphi0 = _phi0_dphi0(bp.phi, g)
    empty = np.zeros(0)
    s = SpectralInvariants(a=a, beta_a=beta, zeta_a=zeta, phi_a=bp.phi, phi0=phi0,
                           dphi0=dphi0, M2=np.nan, M3=np.nan, I2=np.nan, c2=np.nan,
                           mu_second=np.nan, phi_cor=empty, grid=g,
                           beta_grid=beta, zeta_grid=zeta)
    M2 = float(_moment_raw(2, s)) if a != 0 else np.nan
    M3 = float(_moment_raw(3, s)) if a != 0 else np.nan
    I2 = _i2_raw(s)
    s = replace(s, M2=M2, M3=M3, I2=I2, c2=1.0 - 4.0 * I2,
                mu_second=second_derivative_fd(a, zeta, g))
    return replace(s, phi_cor=phi_cor(s))


_SCALARS = ("beta_a", "zeta_a", "phi0", "dphi0", "M2", "M3", "I2", "c2", "mu_second")


def compute_invariants(a: float, grid: Grid1D = None, extrapolate=True,
                       cache=False, cache_dir=None) -> SpectralInvariants:
    """All invariants for one value of ``a``.

    With ``extrapolate`` the scalars are Richardson-combined with a solve on
    the half-step grid.  With ``cache`` the result is read from / written to
    the cache directory.
    """
    grid = grid or Grid1D()
    if cache:
        path = cache_path(a, grid, extrapolate, cache_dir)
        if path.exists():
            try:
                return load_invariants(path)
            except (KeyError, ValueError):
                pass
    base = _raw_invariants(a, grid)
    if extrapolate:
        fine = _raw_invariants(a, grid.refined())
        upd = {k: float(richardson(getattr(base, k), getattr(fine, k))) for k in _SCALARS}
        inv = replace(base, refined=fine, **upd)
    else:
        inv = base
    if cache:
        save_invariants(inv, path)
    return inv


# -- cache ------------------------------------------------------------------------

def cache_path(a, grid, extrapolate=True, cache_dir=None):
    tag = "rx" if extrapolate else "raw"
    name = f"invariants_a{a:+.8f}_L{grid.half_length:g}_n{grid.n_points}_{tag}.json"
    return io.cache_dir(cache_dir) / name


def _to_dict(inv: SpectralInvariants, nested=True):
    d = {"schema_version": SCHEMA_VERSION, "a": inv.a,
         "grid": {"L": inv.grid.half_length, "n": inv.grid.n_points}}
    for k in _SCALARS:
        d[k] = getattr(inv, k)
    d["beta_grid"] = inv.beta_grid
    d["zeta_grid"] = inv.zeta_grid
    d["phi_a"] = inv.phi_a
    d["phi_cor"] = inv.phi_cor
    if nested and inv.refined is not None:
        d["refined"] = _to_dict(inv.refined, nested=False)
    return d


def _from_dict(d) -> SpectralInvariants:
    g = Grid1D(d["grid"]["L"], d["grid"]["n"])
    kw = {k: float(d[k]) for k in _SCALARS}
    ref = _from_dict(d["refined"]) if d.get("refined") else None
    phi = np.asarray(d["phi_a"], dtype=float)
    cor = np.asarray(d["phi_cor"], dtype=float)
    if phi.shape != (g.n_points,) or cor.shape != (g.n_points,):
        raise ValueError("cached vectors do not match the grid")
    return SpectralInvariants(a=float(d["a"]), phi_a=phi, phi_cor=cor, grid=g,
                              beta_grid=float(d["beta_grid"]), zeta_grid=float(d["zeta_grid"]),
                              refined=ref, **kw)


def save_invariants(inv: SpectralInvariants, path):
    return io.write_json(path, _to_dict(inv))


def load_invariants(path) -> SpectralInvariants:
    d = io.read_json(path)
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"cache schema {d.get('schema_version')} != {SCHEMA_VERSION}")
    return _from_dict(d)


# -- curvature-weighted model ------------------------------------------------------

def weighted_operator(p: WeightedModelParams, g: Grid1D, half_width=None):
    """Symmetrized three-point matrix of the weighted form and its node mask.

    Nodes strictly inside the window carry unknowns; the first node outside
    on each side is a Dirichlet node.
    """
    W = p.half_width if half_width is None else float(half_width)
    tau = g.tau
    d = g.step
    inside = np.abs(tau) < W
    inside[0] = inside[-1] = False
    idx = np.flatnonzero(inside)
    if idx.size < 1:
        raise ValidationError("window contains no grid nodes")
    eps = p.kappa * np.sqrt(p.h)
    t = tau[idx]
    lo, hi = tau[idx[0] - 1], tau[idx[-1] + 1]
    if min(1 - eps * lo, 1 - eps * hi) <= 0:
        raise ValidationError("weight 1 - kappa h^(1/2) tau is not positive on the window")
    m = 1.0 - eps * t
    m_left = 1.0 - eps * (t - 0.5 * d)
    m_right = 1.0 - eps * (t + 0.5 * d)
    b = field_profile(p.a, t)
    pot = (1.0 + 2.0 * eps * t) * (b * t + p.xi - eps * b * t ** 2 / 2.0) ** 2
    diag = (m_left + m_right) / (d * d * m) + pot
    off = -m_right[:-1] / (d * d * np.sqrt(m[:-1] * m[1:]))
    return TriDiag(diag, off), idx


def weighted_op_lambda1(p: WeightedModelParams, inv: SpectralInvariants, half_width=None) -> float:
    """Lowest eigenvalue of the curvature-weighted model on ``inv.grid``.

    The window defaults to (-h^-delta, h^-delta); ``half_width`` overrides it.
    """
    T, _ = weighted_operator(p, inv.grid, half_width)
    return float(tridiag_eigenvalues(T, 1)[0])


def weighted_lower_bound_check(inv: SpectralInvariants, h, kappa, delta, offsets=None,
                               C=None, half_width=None, quad_tol=0.1, far_gap=0.01) -> dict:
    """Scan xi around zeta and compare lambda_1 with beta + kappa M_3 h^(1/2).

    ``C`` defaults to twice the size of the remainder at xi = zeta divided
    by h.  The grid-consistent beta and zeta are used so discretization
    errors cancel.

    The report also locates the regimes on the scanned offsets.
    ``quadratic_window`` is the widest band of |xi - zeta| on which the
    growth ratio stays within ``quad_tol`` of c2 on both sides (below it the
    kappa h^(1/2) shift of the minimum dominates), and ``far_from`` is the
    smallest |xi - zeta| beyond which lambda_1 >= beta + ``far_gap``.
    """
    if offsets is None:
        pos = np.logspace(-3, 0, 13)
        offsets = np.concatenate([-pos[::-1], [0.0], pos])
    offsets = np.asarray(offsets, dtype=float)
    beta, zeta = inv.beta_grid, inv.zeta_grid
    base = beta + kappa * inv.M3 * np.sqrt(h)
    lam = np.array([weighted_op_lambda1(WeightedModelParams(inv.a, zeta + o, kappa, h, delta),
                                        inv, half_width) for o in offsets])
    gap = lam - base
    lam0 = weighted_op_lambda1(WeightedModelParams(inv.a, zeta, kappa, h, delta), inv, half_width)
    r0 = lam0 - base
    if C is None:
        C = 2.0 * abs(r0) / h
    with np.errstate(divide="ignore", invalid="ignore"):
        growth = np.where(offsets != 0, (lam - lam0) / offsets ** 2, np.nan)
    dist = np.abs(offsets)
    levels = np.unique(dist[dist > 0])
    quad_ok = np.abs(growth / inv.c2 - 1) <= quad_tol
    good = [bool(np.all(quad_ok[dist == d])) for d in levels]
    best, start = (0, 0), None
    for i, ok in enumerate(good + [False]):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    far_ok = lam - beta >= far_gap
    far = [d for d in levels if np.all(far_ok[dist >= d])]
    return {
        "xi": zeta + offsets, "offsets": offsets, "lambda1": lam, "gap": gap,
        "min_gap": float(gap.min()), "C": float(C), "remainder_at_zeta": float(r0),
        "holds": bool(gap.min() >= -C * h), "quadratic_ratio": growth,
        "quadratic_window": ((float(levels[best[0]]), float(levels[best[1] - 1]))
                             if best[1] > best[0] else None),
        "far_from": float(min(far)) if far else np.inf,
    }
