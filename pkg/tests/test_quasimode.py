import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magstep.errors import ValidationError
from magstep.fiber import Grid1D
from magstep.invariants import resolvent_apply
from magstep.quasimode import (HarmonicOscParams, apply_Pnew_truncated, build_expansion,
                               cutoff_chi, harm_discrete_eigenvalues, harm_eigenpair,
                               hierarchy_residuals, p0_apply, project_pi0, project_pi_h,
                               project_Rnew, solvability_defect, weighted_profile)

SG = Grid1D(6, 61)


@pytest.fixture(scope="module")
def ex1(inv05):
    return build_expansion(inv05, 1.0, -0.5, 1)


def _norm(v, inv, sg=SG):
    return np.sqrt(sg.step * inv.grid.trapezoid(np.abs(v) ** 2).sum())


def _smooth_field(inv, seed=0):
    rng = np.random.default_rng(seed)
    f = np.exp(-SG.tau ** 2 / 2)
    tau = inv.grid.tau
    prof = np.exp(-(tau - rng.uniform(-1, 1)) ** 2) * (1 + rng.uniform(-1, 1) * tau)
    return np.outer(f, inv.phi_a) + 0.5 * np.outer(f * SG.tau, prof)


# -- oscillator ----------------------------------------------------------------------

def test_oscillator_examples():
    p = HarmonicOscParams(0.5, 0.5)
    g = Grid1D(10, 2001)
    assert harm_eigenpair(1, p, g)[0] == pytest.approx(0.5)
    assert harm_eigenpair(2, p, g)[0] == pytest.approx(1.5)


def test_oscillator_vs_discretization():
    p = HarmonicOscParams(0.3, 0.2)
    g = Grid1D(12 * p.length, 4001)
    E = [harm_eigenpair(n, p, g)[0] for n in (1, 2, 3)]
    disc = harm_discrete_eigenvalues(p, g, 3)
    assert E[0] == pytest.approx(np.sqrt(0.06))
    assert np.max(np.abs(disc - E)) <= 1e-5
    assert np.max(np.abs(np.diff(disc) - 2 * np.sqrt(0.06))) <= 1e-5


@pytest.mark.parametrize("n", [1, 2, 4])
def test_oscillator_mode_solves_equation(n):
    p = HarmonicOscParams(0.3, 0.2)
    g = Grid1D(12 * p.length, 4001)
    E, f = harm_eigenpair(n, p, g)
    assert abs(g.trapezoid(f ** 2) - 1) <= 1e-12
    d = g.step
    r = -p.c2 * (f[2:] - 2 * f[1:-1] + f[:-2]) / d ** 2 + p.K * g.tau[1:-1] ** 2 * f[1:-1] - E * f[1:-1]
    assert np.sqrt(d * np.sum(r ** 2)) <= 1e-4


def test_oscillator_validation():
    with pytest.raises(ValidationError):
        HarmonicOscParams(0.0, 1.0)
    with pytest.raises(ValidationError):
        HarmonicOscParams(1.0, -1.0)
    with pytest.raises(ValidationError):
        harm_eigenpair(0, HarmonicOscParams(1, 1), Grid1D(5, 101))


# -- hierarchy ---------------------------------------------------------------------

def test_expansion_eigenvalue_terms(ex1, inv05):
    assert ex1.mu[0] == 0 and ex1.mu[1] == 0
    assert ex1.mu[2] == 1.0 * inv05.M3
    assert ex1.mu[3] == pytest.approx(np.sqrt(-0.5 * inv05.M3 * inv05.c2 / 2), rel=1e-14)
    assert ex1.mu[3] == pytest.approx(0.0680547, abs=5e-7)


def test_expansion_ladder(inv05):
    mus = [build_expansion(inv05, 1.0, -0.5, n).mu[3] for n in (1, 2, 3)]
    step = 2 * np.sqrt(-0.5 * inv05.M3 * inv05.c2 / 2)
    assert np.allclose(np.diff(mus), step, rtol=1e-14)


def test_expansion_orthogonality(ex1, inv05):
    for G in ex1.g[1:]:
        V = ex1.to_grid(G)
        assert np.abs(inv05.grid.trapezoid(V * inv05.phi_a[None, :])).max() <= 1e-10


def test_hierarchy_and_solvability(ex1):
    r = hierarchy_residuals(ex1)
    for k in ("e0", "e1", "e2"):
        assert r[k] <= 1e-5, (k, r[k])
    assert solvability_defect(ex1) <= 1e-4


def test_p0_annihilates_ground_state(inv05):
    _, f = harm_eigenpair(1, HarmonicOscParams(0.5, 0.5), SG)
    v = np.outer(f, inv05.phi_a)
    assert np.abs(p0_apply(v, inv05)).max() <= 1e-6


def test_truncated_residual_order(ex1):
    r = [apply_Pnew_truncated(h, ex1) for h in (1e-2, 1e-3)]
    slope = np.log(r[0] / r[1]) / np.log(10)
    assert 0.75 <= slope <= 1.0


@pytest.mark.parametrize("h", [1e-3, 1e-4, 1e-6])
def test_wrong_mu3_plateau(ex1, h):
    r = apply_Pnew_truncated(h, ex1)
    rw = apply_Pnew_truncated(h, ex1, mu=ex1.mu_total(h) + 0.1 * h ** 0.75)
    # the perturbation adds exactly 0.1 h^(3/4) g to the residual
    assert abs(rw - 0.1 * h ** 0.75) <= r * (1 + 1e-9)


def test_truncated_residual_validation(ex1):
    with pytest.raises(ValidationError):
        apply_Pnew_truncated(0.0, ex1)
    with pytest.raises(ValidationError):
        apply_Pnew_truncated(1e-2, np.zeros((3, 3)))


def test_build_expansion_validation(inv05):
    with pytest.raises(ValidationError):
        build_expansion(inv05, 1.0, 0.5, 1)
    with pytest.raises(ValidationError):
        build_expansion(inv05, 1.0, -0.5, 0)


def test_cutoff_shape():
    x = np.array([0.0, 0.5, 0.75, 1.0, 2.0])
    assert np.allclose(cutoff_chi(x), [1, 1, 0.5, 0, 0])
    assert np.allclose(cutoff_chi(-x), cutoff_chi(x))


# -- projections ---------------------------------------------------------------------

def test_pi0_fixed_point_and_kernel(inv05):
    f = np.exp(-SG.tau ** 2)
    v = np.outer(f, inv05.phi_a)
    P, _ = project_pi0(v, inv05, SG.step)
    assert np.abs(P - v).max() <= 1e-10
    psi = (inv05.zeta_grid + inv05.b * inv05.tau) * inv05.phi_a
    P, _ = project_pi0(np.outer(f, psi), inv05, SG.step)
    assert np.abs(P).max() <= 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_pi0_idempotent_and_contractive(seed):
    from magstep.invariants import compute_invariants
    inv = compute_invariants(-0.5, Grid1D(12, 601), extrapolate=False)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((SG.n_points, inv.grid.n_points))
    P, diag = project_pi0(v, inv, SG.step)
    PP, _ = project_pi0(P, inv, SG.step)
    assert np.abs(PP - P).max() <= 1e-12 * max(1.0, np.abs(P).max())
    assert _norm(P, inv) <= diag.norm_v * (1 + 1e-12)
    assert diag.defect_pi0 <= diag.norm_v * (1 + 1e-12)
    # R_0^- v is the coefficient of phi, with the same norm as Pi_0 v
    coef = inv.grid.trapezoid(inv.phi_a[None, :] * v)
    assert np.sqrt(SG.step * np.sum(coef ** 2)) <= diag.norm_v * (1 + 1e-12)


def test_pi_h_reduces_to_pi0(inv05):
    v = _smooth_field(inv05)
    P0, _ = project_pi0(v, inv05, SG.step)
    assert np.abs(project_pi_h(v, inv05, 0.0, 1e-3, cutoff=False) - P0).max() <= 1e-8


def test_pi_h_weighted_idempotent(inv05):
    v = _smooth_field(inv05, 1)
    for cut in (False, True):
        P = project_pi_h(v, inv05, 0.25, 1e-2, cutoff=cut)
        assert np.abs(project_pi_h(P, inv05, 0.25, 1e-2, cutoff=cut) - P).max() <= 1e-12


def test_pi_h_distance_order(inv05):
    v = _smooth_field(inv05, 2)
    P0, _ = project_pi0(v, inv05, SG.step)
    d = [_norm(project_pi_h(v, inv05, 0.25, h, cutoff=False) - P0, inv05) for h in (1e-2, 1e-3)]
    assert np.log(d[0] / d[1]) / np.log(10) == pytest.approx(0.5, abs=0.05)


def test_pi_h_rejects_negative_weight(inv05):
    with pytest.raises(ValidationError):
        project_pi_h(_smooth_field(inv05), inv05, 1.0, 1e-2, cutoff=False)


def test_rnew_on_product_state(inv05_raw):
    inv = inv05_raw
    f = np.exp(-SG.tau ** 2 / 2)
    out = project_Rnew(np.outer(f, inv.phi_a), inv)
    assert np.abs(out - (1 - 4 * inv.I2) * f).max() <= 1e-6


def test_rnew_kernel(inv05):
    g = inv05.grid
    u = inv05.zeta_grid + inv05.b * inv05.tau
    basis = [inv05.phi_a, u * resolvent_apply(inv05, u * inv05.phi_a)]
    psi = np.exp(-(inv05.tau - 0.3) ** 2) * (1 + inv05.tau)
    for _ in range(2):
        Q = []
        for b in basis:
            for q in Q:
                b = b - g.inner(q, b) * q
            Q.append(b / np.sqrt(g.inner(b, b)))
        for q in Q:
            psi = psi - g.inner(q, psi) * q
    out = project_Rnew(np.outer(np.ones(3), psi), inv05)
    assert np.abs(out).max() <= 1e-10
    assert np.allclose(project_Rnew(np.outer([1.0], inv05.phi_a), inv05,
                                    profile=weighted_profile(inv05)),
                       project_Rnew(np.outer([1.0], inv05.phi_a), inv05))


def test_projection_shape_check(inv05):
    with pytest.raises(ValidationError):
        project_pi0(np.zeros((4, 7)), inv05)


def test_weighted_norm_residual_tracks_flat(inv05):
    ex = build_expansion(inv05, 1.0, -0.5, 1)
    hs = np.array([1e-2, 3e-3, 1e-3])
    flat = [apply_Pnew_truncated(h, ex) for h in hs]
    wtd = [apply_Pnew_truncated(h, ex, weighted=True) for h in hs]
    # the two norms differ by a factor 1 + O(h^1/2)
    assert np.allclose(wtd, flat, rtol=0.2)
    sl = np.polyfit(np.log(hs), np.log(wtd), 1)[0]
    assert 0.75 <= sl <= 1.0
