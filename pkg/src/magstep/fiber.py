"""Fiber operator h_a[xi] = -d^2/dtau^2 + (xi + b_a(tau) tau)^2 on a truncated line.

The line is cut to [-L, L] with Dirichlet ends and discretized by the
standard three-point stencil on an odd number of nodes, so tau = 0 is a
node.  The jump of b_a sits on that node where it is multiplied by zero,
which is why the plain scheme keeps second order.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import ValidationError
from .linalg import TriDiag, tridiag_eigenvalues, tridiag_ground_state


@dataclass(frozen=True)
class Grid1D:
    half_length: float = 20.0
    n_points: int = 4001

    def __post_init__(self):
        if not self.half_length > 0:
            raise ValidationError(f"half_length must be positive, got {self.half_length}")
        if int(self.n_points) != self.n_points or self.n_points < 3 or self.n_points % 2 == 0:
            raise ValidationError(f"n_points must be an odd integer >= 3, got {self.n_points}")
        object.__setattr__(self, "n_points", int(self.n_points))
        object.__setattr__(self, "half_length", float(self.half_length))

    @property
    def step(self):
        return 2.0 * self.half_length / (self.n_points - 1)

    @property
    def tau(self):
        return np.linspace(-self.half_length, self.half_length, self.n_points)

    @property
    def center(self):
        return self.n_points // 2

    def refined(self):
        """Same interval with the step halved."""
        return Grid1D(self.half_length, 2 * self.n_points - 1)

    def trapezoid(self, values):
        """Composite trapezoid rule for nodal values."""
        v = np.asarray(values)
        return self.step * (v.sum(axis=-1) - 0.5 * (v[..., 0] + v[..., -1]))

    def inner(self, u, v):
        return self.trapezoid(np.conj(u) * v)


@dataclass(frozen=True)
class FiberParams:
    a: float
    xi: float

    def __post_init__(self):
        if not -1.0 <= self.a <= 1.0:
            raise ValidationError(f"a must lie in [-1, 1], got {self.a}")
        if not np.isfinite(self.xi):
            raise ValidationError("xi must be finite")


@dataclass(frozen=True)
class BandPoint:
    xi: float
    mu: float
    phi: np.ndarray = field(repr=False)
    mu_prime: float = np.nan


def field_profile(a, tau):
    """b_a(tau): 1 on tau >= 0, a on tau < 0 (the value at 0 never matters in b*tau)."""
    return np.where(np.asarray(tau) < 0, a, 1.0)


def fiber_potential(p: FiberParams, g: Grid1D):
    tau = g.tau
    return (p.xi + field_profile(p.a, tau) * tau) ** 2


def build_fiber_operator(p: FiberParams, g: Grid1D) -> TriDiag:
    """Three-point discretization on the interior nodes (Dirichlet ends)."""
    d2 = g.step ** 2
    V = fiber_potential(p, g)[1:-1]
    return TriDiag(2.0 / d2 + V, -np.ones(g.n_points - 3) / d2)


def _embed(vec, g):
    phi = np.zeros(g.n_points)
    phi[1:-1] = vec
    return phi


def _normalize_positive(phi, g):
    phi = phi / np.sqrt(g.trapezoid(phi ** 2))
    ref = phi[g.center]
    if ref < 0 or (ref == 0 and phi.sum() < 0):
        phi = -phi
    return phi


def band_value(p: FiberParams, g: Grid1D) -> BandPoint:
    """Ground energy mu_a(xi) with its positive normalized state."""
    T = build_fiber_operator(p, g)
    mu = float(tridiag_eigenvalues(T, 1)[0])
    phi = _normalize_positive(_embed(tridiag_ground_state(T, mu), g), g)
    bp = BandPoint(p.xi, mu, phi)
    return BandPoint(p.xi, mu, phi, band_derivative_fh(bp, p, g))


def band_values(p: FiberParams, g: Grid1D, k: int = 2) -> np.ndarray:
    """The ``k`` lowest eigenvalues of the discretized fiber operator."""
    return tridiag_eigenvalues(build_fiber_operator(p, g), k)


def band_energy(p: FiberParams, g: Grid1D) -> float:
    return float(band_values(p, g, 1)[0])


def band_derivative_fh(bp: BandPoint, p: FiberParams, g: Grid1D) -> float:
    """mu'(xi) = 2 int (xi + b tau) phi^2.

    On the grid this is exactly the derivative of the discrete eigenvalue.
    """
    tau = g.tau
    return float(2.0 * g.trapezoid((p.xi + field_profile(p.a, tau) * tau) * bp.phi ** 2))


def centered_slope(phi, g: Grid1D) -> float:
    c = g.center
    return float((phi[c + 1] - phi[c - 1]) / (2.0 * g.step))


def band_derivative_boundary(bp: BandPoint, p: FiberParams, g: Grid1D) -> float:
    """mu'(xi) from the values of phi and phi' at the interface."""
    if p.a == 0:
        raise ValidationError("the interface formula needs a != 0")
    phi0 = bp.phi[g.center]
    dphi0 = centered_slope(bp.phi, g)
    return float((1.0 - 1.0 / p.a) * (dphi0 ** 2 + (bp.mu - p.xi ** 2) * phi0 ** 2))


def band_sweep(a: float, xi_lo: float, xi_hi: float, n_xi: int, g: Grid1D,
               jobs: int = 1) -> List[BandPoint]:
    if not xi_lo < xi_hi:
        raise ValidationError(f"need xi_lo < xi_hi, got [{xi_lo}, {xi_hi}]")
    if n_xi < 2:
        raise ValidationError("n_xi must be at least 2")
    xs = np.linspace(xi_lo, xi_hi, int(n_xi))
    params = [FiberParams(a, float(x)) for x in xs]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda q: band_value(q, g), params))
    return [band_value(q, g) for q in params]


def richardson(coarse, fine, order=2):
    """Eliminate the leading h^order error from values on steps 2h and h."""
    r = 2.0 ** order
    return (r * np.asarray(fine) - np.asarray(coarse)) / (r - 1.0)


# -- independent half-line problem --------------------------------------------

def neumann_halfline_operator(xi: float, half_length: float, n_points: int) -> TriDiag:
    """-u'' + (xi + tau)^2 on [0, L] with u'(0) = 0 and u(L) = 0.

    The Neumann node carries half a cell of mass; after the diagonal
    similarity that symmetrizes the pencil the first off-diagonal entry
    becomes -sqrt(2)/d^2.
    """
    if n_points < 3:
        raise ValidationError("need at least 3 points")
    tau = np.linspace(0.0, half_length, n_points)[:-1]
    d = tau[1] - tau[0]
    V = (xi + tau) ** 2
    diag = 2.0 / d ** 2 + V
    off = -np.ones(tau.size - 1) / d ** 2
    off[0] *= np.sqrt(2.0)
    return TriDiag(diag, off)


def neumann_band_value(xi: float, half_length: float = 20.0, n_points: int = 2001) -> float:
    return float(tridiag_eigenvalues(neumann_halfline_operator(xi, half_length, n_points), 1)[0])
