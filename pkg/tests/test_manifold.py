from dataclasses import replace

import numpy as np
import pytest

from squeeze_spectra.errors import CutSelectionError, DissipativityError, DomainError
from squeeze_spectra.geometry import SphereGeometry, ThicknessProfile
from squeeze_spectra.manifold import (
    Nonlinearity,
    build_reduced_model,
    chafee_infante,
    choose_cut,
    compare_reduced_fields,
    cutoff,
    graph_point,
    invariance_residual,
    lp_graph_eval,
    prepare_nonlinearity,
    reduced_field,
    reduced_jacobian,
    reduced_trajectory,
    snap_to_cluster_boundary,
    zero_nonlinearity,
)
from squeeze_spectra.spectral import assemble_circle_operator, eigendecompose, from_eigenvalues
from squeeze_spectra.gap import repeated_spectrum

XI = np.array([0.5, 0.3, -0.2])
# u = xi_1 w_1 with w_1 = 1 / sqrt(2 pi): the constant state sqrt(2)
XI_EQ = np.array([np.sqrt(4 * np.pi), 0.0, 0.0])


@pytest.fixture(scope="module")
def setup():
    geom = SphereGeometry(2, 1.0)
    prof = ThicknessProfile.constant(0.0, 1.0)
    op = assemble_circle_operator(prof, geom, 128)
    dec = eigendecompose(op, 64)
    G, dG = chafee_infante(2.0)
    nl = prepare_nonlinearity(G, dG, 1.0, 2.0, dec, op.mass, J=31)
    model = build_reduced_model(dec, op.mass, nl, nu=3, J=31)
    return {"geom": geom, "prof": prof, "op": op, "dec": dec, "nl": nl, "model": model}


@pytest.fixture(scope="module")
def linear_model(setup):
    s = setup
    return build_reduced_model(s["dec"], s["op"].mass, zero_nonlinearity(), nu=3, J=31)


def test_cutoff_ramp():
    x = np.linspace(0, 3, 3001)
    th = cutoff(x)
    assert np.all(th[x <= 1] == 1) and np.all(th[x >= 2] == 0)
    assert np.all(np.diff(th) <= 0)
    # C^1: one-sided slopes vanish at both joints
    h = 1e-6
    for x0 in (1.0, 2.0):
        assert abs(cutoff(x0 + h) - cutoff(x0)) / h < 1e-5
        assert abs(cutoff(x0) - cutoff(x0 - h)) / h < 1e-5


def test_truncation_inside_and_outside_ball():
    G, dG = chafee_infante(2.0)
    nl = Nonlinearity(G, dG, 1.0, 2.0, R=3.0, L=1.0)
    u = np.array([[0.5, -1.0, 2.0]])
    np.testing.assert_array_equal(nl.truncated(u, np.array([3.0])), G(u))
    np.testing.assert_array_equal(nl.truncated(u, np.array([6.0])), 0 * u)
    np.testing.assert_array_equal(nl.nemytskii(u), 2 * u - u**3)


def test_prepare_chafee_infante(setup):
    nl = setup["nl"]
    # G(s)/s = 2 - s^2 >= -1/2 up to |s| = sqrt(2.5); measure of the circle with mu = 1 is 2 pi
    assert nl.energy_radius == pytest.approx(np.sqrt(2.5 * 2 * np.pi), rel=1e-12)
    # Galerkin runs settle on the constant states +-sqrt(2), of norm sqrt(2) sqrt(2 pi)
    assert nl.absorbing_radius == pytest.approx(np.sqrt(4 * np.pi), rel=1e-6)
    assert nl.R == pytest.approx(2 * nl.absorbing_radius)
    # G'(0) = 2 acts on the constant mode, so L >= 2
    assert 2.0 <= nl.L < np.inf
    assert nl.growth_C == pytest.approx(3.0, rel=1e-2)


@pytest.mark.parametrize("G", [lambda u: u**3, lambda u: 0.5 * u, lambda u: -0.1 * u])
def test_prepare_rejects_non_dissipative(setup, G):
    with pytest.raises(DissipativityError):
        prepare_nonlinearity(G, lambda u: 0 * u, 1.0, 2.0, setup["dec"], setup["op"].mass, J=31)


def test_choose_cut_small_lipschitz():
    dec = from_eigenvalues(repeated_spectrum(2, 1.0, 41))
    nl = zero_nonlinearity()
    assert choose_cut(dec, nl) == 1


def test_choose_cut_scan_oracle():
    dec = from_eigenvalues(repeated_spectrum(2, 1.0, 41))
    nl = replace(zero_nonlinearity(), L=0.5)
    # gap 2k+1 against K_gap L (2k + 2): never strict for K_gap = 2
    with pytest.raises(CutSelectionError):
        choose_cut(dec, nl, K_gap=2.0)
    lam = dec.eigenvalues
    brute = next(
        nu
        for nu in range(1, len(lam))
        if lam[nu] != lam[nu - 1] and lam[nu] - lam[nu - 1] > 0.5 * (np.sqrt(lam[nu - 1]) + np.sqrt(lam[nu]) + 1)
    )
    assert choose_cut(dec, nl, K_gap=1.0) == brute == 3


def test_snap_to_cluster_boundary():
    dec = from_eigenvalues(repeated_spectrum(2, 1.0, 11))
    assert snap_to_cluster_boundary(2, dec) == 3
    assert snap_to_cluster_boundary(3, dec) == 3
    with pytest.raises(DomainError):
        snap_to_cluster_boundary(0, dec)


def test_model_defaults(setup):
    m = setup["model"]
    assert (m.nu, m.J) == (3, 31)
    assert m.T == pytest.approx(8 / m.eigenvalues[3])
    h = 2 * np.pi / 128
    p1 = lambda k: 6 / h**2 * (1 - np.cos(k * h)) / (2 + np.cos(k * h))  # noqa: E731
    assert m.gap == pytest.approx(p1(2) - p1(1), rel=1e-10)
    s = setup
    auto_J = build_reduced_model(s["dec"], s["op"].mass, s["nl"], nu=3)
    # max(4 nu, 32) = 32 would split the 16^2 pair; the truncation keeps whole clusters
    assert auto_J.J == 31


def test_zero_nonlinearity_graph_is_slow_subspace(linear_model):
    res = lp_graph_eval(XI, linear_model, zero_nonlinearity())
    np.testing.assert_array_equal(res.fast, 0)
    np.testing.assert_allclose(reduced_field(XI, linear_model, zero_nonlinearity()), -linear_model.eigenvalues[:3] * XI, atol=1e-15)


def test_origin_is_fixed_for_odd_nonlinearity(setup):
    np.testing.assert_array_equal(lp_graph_eval(np.zeros(3), setup["model"], setup["nl"]).fast, 0)
    np.testing.assert_array_equal(reduced_field(np.zeros(3), setup["model"], setup["nl"]), 0)


def test_tangency_and_odd_symmetry(setup):
    m, nl = setup["model"], setup["nl"]
    batch = np.array([XI, -XI])
    pts = graph_point(batch, m, nl)
    np.testing.assert_array_equal(pts[:, :3], batch)
    np.testing.assert_allclose(pts[1, 3:], -pts[0, 3:], atol=1e-14)
    assert np.linalg.norm(pts[0, 3:]) > 1e-4


def test_contraction(setup):
    res = lp_graph_eval(np.array([[1.0, 0.0, 0.0], [1.5, 0.3, 0.2], [0.5, 0.5, -0.5]]), setup["model"], setup["nl"])
    assert res.max_ratio < 0.9
    assert np.all(res.deltas[-1] < res.deltas[0])


def test_contraction_factor_two_at_long_horizon(setup):
    m = replace(setup["model"], T=5.0, steps=1000)
    res = lp_graph_eval(np.array([1.0, 0.5, -0.3]), m, setup["nl"])
    assert np.all(res.deltas[1:] <= res.deltas[:-1] / 2)


def test_horizon_robustness(setup):
    m = setup["model"]
    a = lp_graph_eval(XI, m, setup["nl"]).fast
    b = lp_graph_eval(XI, replace(m, T=2 * m.T, steps=2 * m.steps), setup["nl"]).fast
    assert np.linalg.norm(a - b) <= np.exp(-m.eigenvalues[3] * m.T) * np.linalg.norm(a)


def test_jacobian_at_origin_is_linearisation(setup):
    # Lambda(xi) = O(|xi|^3) for odd G, so dv/dxi(0) = -diag(lam) + G'(0)
    m = setup["model"]
    jac = reduced_jacobian(np.zeros(3), m, setup["nl"])
    np.testing.assert_allclose(jac, np.diag(2.0 - m.eigenvalues[:3]), atol=1e-8)


def test_jacobian_richardson_ratio(setup):
    jacs = [reduced_jacobian(XI, setup["model"], setup["nl"], h) for h in (0.2, 0.1, 0.05)]
    ratio = np.abs(jacs[0] - jacs[1]).max() / np.abs(jacs[1] - jacs[2]).max()
    assert 3.5 < ratio < 4.5


def test_jacobian_matches_fine_differences(setup):
    coarse = reduced_jacobian(XI, setup["model"], setup["nl"], 1e-3)
    fine = reduced_jacobian(XI, setup["model"], setup["nl"], 1e-4)
    np.testing.assert_allclose(coarse, fine, rtol=1e-4, atol=1e-4 * np.abs(fine).max())


def test_constant_equilibrium_lies_on_graph(setup):
    m, nl = setup["model"], setup["nl"]
    np.testing.assert_allclose(lp_graph_eval(XI_EQ, m, nl).fast, 0, atol=1e-12)
    np.testing.assert_allclose(reduced_field(XI_EQ, m, nl), 0, atol=1e-10)


def test_constant_equilibrium_is_stable_with_wider_cut(setup):
    s = setup
    m5 = build_reduced_model(s["dec"], s["op"].mass, s["nl"], nu=5, J=31)
    xi = np.zeros(5)
    xi[0] = XI_EQ[0]
    eig = np.linalg.eigvals(reduced_jacobian(xi, m5, s["nl"], 1e-3))
    # linearisation of the constant state: -(lam_j + 4)
    np.testing.assert_allclose(np.sort(eig.real), np.sort(-(m5.eigenvalues[:5] + 4)), rtol=1e-3)


@pytest.fixture(scope="module")
def reduced_run(setup):
    return reduced_trajectory(setup["model"], setup["nl"], XI, 6.0, 0.25)


def test_reduced_trajectory_reaches_equilibrium(reduced_run):
    t, xs = reduced_run
    assert t[-1] == pytest.approx(6.0)
    np.testing.assert_allclose(xs[-1], XI_EQ, atol=1e-6)


def test_reduced_trajectory_follows_galerkin_flow(setup, reduced_run):
    t, xs = reduced_run
    inv = invariance_residual(setup["model"], setup["nl"], XI, horizon=6.0, samples=25)
    np.testing.assert_allclose(inv.t, t, atol=1e-12)
    # graph error ~ max residual, amplified by the unstable growth of xi_1 before it saturates
    np.testing.assert_allclose(xs, inv.coefficients[:, :3], atol=2e-2)


def test_invariance_trivial_cases(setup, linear_model):
    res = invariance_residual(linear_model, zero_nonlinearity(), XI, horizon=1.0, samples=5)
    np.testing.assert_array_equal(res.residual, 0)
    res = invariance_residual(setup["model"], setup["nl"], np.zeros(3), horizon=1.0, samples=5)
    np.testing.assert_array_equal(res.residual, 0)


def test_invariance_residual_chafee_infante(setup):
    res = invariance_residual(setup["model"], setup["nl"], XI, horizon=10.0)
    assert res.residual[0] < 1e-12
    assert res.residual.max() < 1e-2
    assert res.residual[-1] < 1e-8


def test_compare_linear_case(setup):
    s = setup
    lin = zero_nonlinearity()
    limit = build_reduced_model(s["dec"], s["op"].mass, lin, nu=3, J=31)
    xis = np.array([[0.0, 1.0, 0.0], [0.3, -0.4, 1.2]])
    rows = compare_reduced_fields(s["prof"], s["geom"], lin, 0.1, 3, xis, n_theta=128, n_s=2, limit_model=limit)
    from squeeze_spectra.thin_domain import assemble_thin_operator, thin_spectrum

    lam_eps = thin_spectrum(assemble_thin_operator(s["prof"], s["geom"], 0.1, 128, 2), 31).eigenvalues[:3]
    dl = np.abs(lam_eps - limit.eigenvalues[:3])
    assert rows[0]["field_discrepancy"] == pytest.approx(dl[1], rel=1e-6)
    assert rows[1]["field_discrepancy"] == pytest.approx(np.linalg.norm(dl * xis[1]), rel=1e-6)
    assert rows[1]["field_discrepancy"] <= dl.max() * np.linalg.norm(xis[1]) * (1 + 1e-12)
    assert rows[0]["jacobian_discrepancy"] == pytest.approx(dl.sum(), rel=1e-4)


def test_compare_origin_zero(setup):
    s = setup
    rows = compare_reduced_fields(s["prof"], s["geom"], s["nl"], 0.1, 3, np.zeros((1, 3)), n_theta=128, n_s=2, limit_model=s["model"])
    assert rows[0]["field_discrepancy"] == 0.0
