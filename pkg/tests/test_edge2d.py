import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy.special import erfcinv

from magstep.errors import SolverError, ValidationError
from magstep.edge2d import (CurvatureProfile, EdgeDomain, EigenResult2D, Operator2D,
                            assemble_operator2d, build_gauge_potential, check_edge_localized,
                            dump_grid,
                            fit_asymptotics, load_grid, localization_diagnostics,
                            mass_outside, matched_fiber_beta, predicted_lambda, solve_eigs2d)
from magstep.linalg import SparseHermitian

FLAT = CurvatureProfile("flat", 0.0, 0.0)
BUMP = CurvatureProfile()


def _lambda1(h, a, profile, dom, inv=None, **kw):
    mom = inv.zeta_a if inv is not None else 0.0
    op = assemble_operator2d(h, a, profile, dom, momentum=mom, **kw)
    return solve_eigs2d(op, 1, shift=0.9 * h * (inv.beta_a if inv is not None else 0.5)).lambdas[0]


# -- profile and domain ------------------------------------------------------------

@pytest.mark.parametrize("kind", ["gaussian_bump", "cosine_bump"])
def test_profile_shape(kind):
    p = CurvatureProfile(kind, 1.0, -0.5)
    d = 1e-4
    assert p(0.0) == 1.0
    assert abs((p(d) - 2 * p(0.0) + p(-d)) / d ** 2 - p.k2) <= 1e-8
    s = np.linspace(-5, 5, 1001)
    s = s[s != 0]
    assert np.all(p(s) < p.k_max)
    assert np.allclose(p(s), p(-s))


def test_profile_validation():
    for args in [("wavy", 1, -1), ("gaussian_bump", 0, -1), ("gaussian_bump", 1, 0.5),
                 ("flat", 1, 0)]:
        with pytest.raises(ValidationError):
            CurvatureProfile(*args)
    assert np.all(FLAT(np.linspace(-1, 1, 5)) == 0)


def test_domain_validation():
    dom = EdgeDomain(4.0, 0.45, 241, 241)
    j, k = dom.origin
    assert dom.s[j] == 0 and abs(dom.t[k]) < 1e-15
    with pytest.raises(ValidationError):
        EdgeDomain(4.0, 0.45, 240, 241)
    with pytest.raises(ValidationError):
        EdgeDomain(4.0, 0.45, 241, 240, t_minus=0.3)
    with pytest.raises(ValidationError):
        EdgeDomain(4.0, 0.8, 241, 241).check_frenet(BUMP)
    with pytest.raises(ValidationError):
        assemble_operator2d(1e-2, -0.5, BUMP, EdgeDomain(4.0, 0.8, 41, 41))


def test_domain_for_h_scaling():
    h = 1e-2
    dom = EdgeDomain.for_h(h, S=2.0)
    assert dom.ds == pytest.approx(0.25 * np.sqrt(h), rel=0.05)
    assert dom.dt == pytest.approx(0.2 * np.sqrt(h))
    assert dom.T <= 0.5 + 1e-12 and dom.t_minus >= 10 * np.sqrt(h) - 1e-12


# -- gauge potential -------------------------------------------------------------------

def test_gauge_potential_examples():
    dom = EdgeDomain(1.0, 1.0, 5, 5)
    assert np.all(build_gauge_potential(BUMP, dom, -0.5, t=[0.0]) == 0)
    assert build_gauge_potential(FLAT, dom, 0.3, s=[0.2], t=[1.0])[0, 0] == pytest.approx(-1.0)

    class Unit(CurvatureProfile):
        def __call__(self, s):
            return np.ones_like(np.asarray(s, dtype=float))
    assert build_gauge_potential(Unit(), dom, -0.5, s=[0.0], t=[-1.0])[0, 0] == pytest.approx(-0.75)


def test_gauge_potential_curl():
    dom = EdgeDomain(2.0, 0.45, 21, 721)
    F = build_gauge_potential(BUMP, dom, -0.5)
    t, s = dom.t, dom.s
    mid = 0.5 * (t[1:] + t[:-1])
    dF = np.diff(F, axis=1) / dom.dt
    S, Tm = np.meshgrid(s, mid, indexing="ij")
    b = np.where(Tm < 0, -0.5, 1.0)
    target = -(1 - Tm * BUMP(S)) * b
    away = np.abs(mid) > 2 * dom.dt
    assert np.abs(dF - target)[:, away].max() <= 5 * dom.dt ** 2


# -- assembly -------------------------------------------------------------------------

@pytest.mark.parametrize("scheme", ["average", "peierls"])
def test_stiffness_exactly_hermitian(scheme):
    op = assemble_operator2d(1e-2, -0.5, BUMP, EdgeDomain.for_h(1e-2, S=1.0), momentum=-0.66,
                             scheme=scheme)
    assert op.stiffness.max_hermitian_defect() == 0
    assert np.all(op.mass > 0)


def test_reflection_symmetry():
    dom = EdgeDomain.for_h(1e-2, S=1.0)
    op = assemble_operator2d(1e-2, -0.5, BUMP, dom, momentum=-0.66)
    mi, ni = op.interior_shape
    perm = np.arange(mi * ni).reshape(mi, ni)[::-1].ravel()
    A = op.stiffness.to_scipy()
    R = A[perm][:, perm]
    # s -> -s maps the operator to its complex conjugate: same spectrum
    assert abs(R - A.conj()).max() <= 1e-12 * abs(A).max()
    assert np.allclose(op.mass[perm], op.mass, rtol=1e-14)


def test_separable_field_free_box():
    h = 0.1
    dom = EdgeDomain(1.0, 0.3, 41, 31)
    op = assemble_operator2d(h, -0.5, FLAT, dom, field_scale=0.0)
    res = solve_eigs2d(op, 3, tol=1e-11, shift=0.0)
    ms, mt = dom.n_s - 1, dom.n_t - 1
    ex = [(2 - 2 * np.cos(m * np.pi / ms)) / dom.ds ** 2 for m in (1, 2, 3)]
    ey = [(2 - 2 * np.cos(m * np.pi / mt)) / dom.dt ** 2 for m in (1, 2, 3)]
    ref = np.sort(h ** 2 * np.add.outer(ex, ey).ravel())[:3]
    assert np.allclose(res.lambdas, ref, rtol=1e-9)
    cont = h ** 2 * (np.pi ** 2 / (2 * dom.S) ** 2 + np.pi ** 2 / (dom.T + dom.t_minus) ** 2)
    assert res.lambdas[0] == pytest.approx(cont, rel=2e-3)


def test_diagonal_problem():
    dom = EdgeDomain(1.0, 1.0, 5, 5)
    d = np.array([9.0, 3.0, 7.0, 1.0, 8.0, 2.0, 6.0, 5.0, 4.0])
    op = Operator2D(SparseHermitian(sp.diags(d)), np.ones(9), dom, 1.0, -0.5, FLAT)
    res = solve_eigs2d(op, 3, tol=1e-12, shift=0.0)
    assert np.allclose(res.lambdas, [1, 2, 3], atol=1e-10)
    assert np.abs(res.eigvecs[0]).max() == pytest.approx(1.0)


def _omega(s, t):
    return 0.05 * np.sin(2 * s) * (1 + t) + 0.02 * s ** 2


def _gauge_change(h, scheme, refine=1.0):
    dom = EdgeDomain.for_h(h, S=1.5, ds_scale=0.25 * refine, dtau=0.2 * refine)
    vals = []
    for g in (None, _omega):
        op = assemble_operator2d(h, -0.5, BUMP, dom, momentum=-0.664, scheme=scheme, gauge=g)
        vals.append(solve_eigs2d(op, 1, tol=1e-10, shift=0.35 * h).lambdas[0])
    return abs(vals[1] - vals[0]) / vals[0]


def test_gauge_invariance_peierls():
    assert _gauge_change(2e-2, "peierls") <= 1e-9


def test_gauge_change_average_scheme_is_discretization_error():
    # the averaged link quotient is gauge covariant only up to second order in the steps
    coarse, fine = _gauge_change(2e-2, "average", 1.0), _gauge_change(2e-2, "average", 0.5)
    assert 3.0 <= coarse / fine <= 5.0


def test_flat_edge_limit(inv05):
    h = 2e-3
    lam = _lambda1(h, -0.5, FLAT, EdgeDomain.for_h(h, S=2.0), inv05)
    assert abs(lam / h - inv05.beta_a) <= 0.02


def test_uniform_field_landau_level():
    h = 5e-3
    dom = EdgeDomain.for_h(h, S=0.5, t_plus=0.25, minus_widths=3)
    op = assemble_operator2d(h, 1.0, FLAT, dom, scheme="peierls")
    lam = solve_eigs2d(op, 1, tol=1e-6, shift=0.5 * h).lambdas[0]
    assert abs(lam / h - 1) <= 0.05


def test_curvature_lowers_ground_state(inv05):
    h = 1e-2
    dom = EdgeDomain.for_h(h, S=4.0)
    assert _lambda1(h, -0.5, BUMP, dom, inv05) < _lambda1(h, -0.5, FLAT, dom, inv05)


def test_solution_ordering_and_phase(inv05):
    h = 2e-2
    op = assemble_operator2d(h, -0.5, BUMP, EdgeDomain.for_h(h), momentum=inv05.zeta_a)
    res = solve_eigs2d(op, 3, shift=0.3 * h)
    assert np.all(np.diff(res.lambdas) >= 0) and res.lambdas[0] > 0
    j, k = res.domain.origin
    u = res.eigvecs[0]
    assert u[j, k].real > 0 and u[j, k].imag == 0
    mass = (1 - res.domain.t[None, :] * BUMP(res.domain.s)[:, None]) * res.domain.ds * res.domain.dt
    assert np.sum(mass * np.abs(u) ** 2) == pytest.approx(1.0, rel=1e-10)
    assert max(res.stats["residuals"]) <= 1e-9


@pytest.mark.slow
def test_grid_self_convergence(inv05):
    lam = [_lambda1(1e-2, -0.5, BUMP, EdgeDomain(4.0, 0.45, n, n), inv05) for n in (241, 481)]
    assert abs(lam[1] - lam[0]) <= 0.01 * lam[1]


@pytest.mark.slow
def test_domain_size_insensitivity(inv05):
    h = 5e-3
    base = _lambda1(h, -0.5, BUMP, EdgeDomain.for_h(h, S=8.0, minus_widths=8), inv05)
    wide_s = _lambda1(h, -0.5, BUMP, EdgeDomain.for_h(h, S=16.0, minus_widths=8), inv05)
    assert abs(wide_s - base) <= 1e-6 * base
    # t > 0 is capped by 1 - t k >= 1/2, so a flatter bump makes room to double it
    half = CurvatureProfile("gaussian_bump", 0.5, -0.25)
    lo, hi = (_lambda1(h, -0.5, half, EdgeDomain.for_h(h, S=8.0, t_plus=tp, minus_widths=8), inv05)
              for tp in (0.5, 1.0))
    assert abs(hi - lo) <= 1e-6 * lo
    # doubling the t < 0 side needs a finer s-grid to stay clear of aliasing
    lo, hi = (_lambda1(h, -0.5, BUMP, EdgeDomain.for_h(h, S=4.0, ds_scale=0.125, minus_widths=mw), inv05)
              for mw in (8, 16))
    assert abs(hi - lo) <= 1e-6 * lo


def test_aliased_mode_is_rejected(inv05):
    # far on the t < 0 side |A| ds / h is large and the averaged scheme
    # supports a spurious low mode away from the edge
    h = 5e-3
    op = assemble_operator2d(h, -0.5, BUMP, EdgeDomain.for_h(h, S=2.0, minus_widths=20),
                             momentum=inv05.zeta_a)
    res = solve_eigs2d(op, 1, shift=0.2 * h)
    assert res.lambdas[0] < 0.35 * h
    assert op.alias_floor < res.lambdas[0]
    with pytest.raises(SolverError):
        check_edge_localized(res)


# -- fitting --------------------------------------------------------------------------

def test_fit_synthetic_exact():
    hs = np.array([2e-2, 1e-2, 5e-3, 2.5e-3])
    lam = 0.5 * hs - 0.1 * hs ** 1.5 + 0.3 * hs ** 1.75
    rep = fit_asymptotics(hs, lam[:, None], 0.5, -0.1, 0.3)
    assert abs(rep.free_fit["c0"] - 0.5) <= 1e-10
    assert abs(rep.free_fit["c1"] + 0.1) <= 1e-10
    assert abs(rep.free_fit["c2"] - 0.3) <= 1e-10
    assert abs(rep.coefficients["third_1"] - 0.3) <= 1e-10
    assert rep.deviations["third_1"] <= 1e-9


def test_fit_two_modes_ladder_and_gap():
    hs = np.array([2e-2, 1e-2, 5e-3])
    E = 0.07
    lam = np.column_stack([0.4 * hs - 0.04 * hs ** 1.5 + (2 * n - 1) * E * hs ** 1.75 for n in (1, 2)])
    rep = fit_asymptotics(hs[::-1], lam[::-1], 0.4, -0.04, E)
    assert rep.coefficients["ladder"] == pytest.approx(3.0, rel=1e-10)
    assert rep.coefficients["gap"] == pytest.approx(2 * E, rel=1e-10)
    assert [r["h"] for r in rep.rows] == sorted(hs, reverse=True)
    assert set(rep.to_json()) == {"rows", "predicted", "coefficients", "deviations", "slopes",
                                  "free_fit"}


def test_fit_needs_three_h():
    with pytest.raises(ValidationError):
        fit_asymptotics([1e-2, 5e-3, 5e-3], [[1.0], [0.5], [0.5]], 0.4, -0.04, 0.07)


def test_predicted_third_coefficient(inv05):
    h = 1e-3
    p1 = predicted_lambda(h, inv05, BUMP, 1)
    base = h * inv05.beta_a + h ** 1.5 * inv05.M3
    assert (p1 - base) / h ** 1.75 == pytest.approx(np.sqrt(-0.5 * inv05.M3 * inv05.c2 / 2))
    assert (predicted_lambda(h, inv05, BUMP, 2) - base) / (p1 - base) == pytest.approx(3.0)


def test_matched_beta_converges_to_beta(inv05):
    h = 5e-3
    err = [matched_fiber_beta(EdgeDomain.for_h(h, dtau=d), h, -0.5, inv05.zeta_a) - inv05.beta_a
           for d in (0.2, 0.1)]
    assert abs(err[0]) <= 2e-3
    assert 3.5 <= err[0] / err[1] <= 4.5


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(0.1, 1.0))
def test_fit_recovers_any_planted_expansion(c, scale):
    hs = scale * np.array([2e-2, 1e-2, 5e-3])
    lam = c[0] * hs + c[1] * hs ** 1.5 + c[2] * hs ** 1.75
    rep = fit_asymptotics(hs, lam, c[0], c[1], 1.0)
    assert np.allclose([rep.free_fit[k] for k in ("c0", "c1", "c2")], c, atol=1e-8)


# -- diagnostics and dumps --------------------------------------------------------------

def test_synthetic_gaussian_localization():
    h = 1e-2
    dom = EdgeDomain(4 * h ** 0.125, 10 * np.sqrt(h), 801, 801)
    S, T = np.meshgrid(dom.s, dom.t, indexing="ij")
    u = np.exp(-T ** 2 / (2 * h)) * np.exp(-S ** 2 / (2 * h ** 0.25)) + 0j
    res = EigenResult2D(h, -0.5, FLAT, dom, np.array([h]), [u])
    # |u|^2 = exp(-t^2/h) has tail mass erfc(c) beyond c sqrt(h); invert for the scale
    for c in (1.0, 2.0, 3.0):
        t_scale = c * np.sqrt(h) / erfcinv(mass_outside(res, t_cut=c * np.sqrt(h)))
        s_scale = c * h ** 0.125 / erfcinv(mass_outside(res, s_cut=c * h ** 0.125))
        assert t_scale == pytest.approx(np.sqrt(h), rel=0.05)
        assert s_scale == pytest.approx(h ** 0.125, rel=0.05)


def test_localization_of_computed_state(inv05):
    h = 2e-2
    op = assemble_operator2d(h, -0.5, BUMP, EdgeDomain.for_h(h), momentum=inv05.zeta_a)
    res = solve_eigs2d(op, 1, shift=0.3 * h)
    d = localization_diagnostics(res, inv05)
    assert d["mass_t_ge_8sqrt_h"] <= 1e-4
    assert d["mass_t_ge_2sqrt_h"] > d["mass_t_ge_4sqrt_h"] > d["mass_t_ge_8sqrt_h"]
    assert d["defect_pi0"] <= d["norm_v"]
    assert d["norm_v"] == pytest.approx(1.0, rel=1e-10)
    assert abs(d["norm_Rnew"] - d["one_minus_4I2"]) <= 0.1 * d["one_minus_4I2"]


def test_dump_round_trip(tmp_path):
    u = (np.arange(12).reshape(3, 4) + 1j * np.arange(12).reshape(3, 4) ** 2) / 7
    path = tmp_path / "u.bin"
    dump_grid(path, u, h=0.01)
    raw = path.read_bytes()
    assert raw[:4] == b"MSTP" and len(raw) == 32 + 8 * 12
    back, meta = load_grid(path)
    assert meta == {"version": 1, "h": 0.01}
    assert np.allclose(back, u, rtol=1e-6)
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValidationError):
        load_grid(tmp_path / "bad.bin")
