import itertools
import json
from math import sqrt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.special import eval_legendre

from squeeze_spectra.errors import CertificationError, DomainError
from squeeze_spectra.gap import (
    admissibility_threshold,
    certify,
    compute_c_mu,
    default_delta,
    eta_bound,
    exact_eigenvalue,
    find_nu0,
    gap_interval,
    gap_ratio,
    interval_ratio,
    kato_invertibility,
    multiplicity,
    repeated_ratio_proxy,
    repeated_spectrum,
    root_difference,
    satisfies_width_bound,
    sufficient_condition,
    xi_bound,
)
from squeeze_spectra.geometry import SphereGeometry, ThicknessProfile
from squeeze_spectra.spectral import from_eigenvalues


def harmonic_dimension(nu, n):
    """Null-space dimension of the Laplacian from degree-nu to degree-(nu-2) homogeneous polynomials."""
    monos = [m for m in itertools.product(range(nu + 1), repeat=n) if sum(m) == nu]
    if nu < 2:
        return len(monos)
    targets = {m: i for i, m in enumerate(t for t in itertools.product(range(nu - 1), repeat=n) if sum(t) == nu - 2)}
    lap = np.zeros((len(targets), len(monos)))
    for j, m in enumerate(monos):
        for k in range(n):
            if m[k] >= 2:
                t = list(m)
                t[k] -= 2
                lap[targets[tuple(t)], j] += m[k] * (m[k] - 1)
    return len(monos) - np.linalg.matrix_rank(lap)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_multiplicity_matches_harmonic_polynomial_count(n):
    for nu in range(0, 7):
        assert multiplicity(nu, n) == harmonic_dimension(nu, n)


def test_multiplicity_known_values():
    assert [multiplicity(nu, 3) for nu in range(5)] == [1, 3, 5, 7, 9]
    assert [multiplicity(nu, 2) for nu in range(4)] == [1, 2, 2, 2]


def test_eigenvalues_n3_satisfy_legendre_equation():
    """Zonal harmonics P_nu(cos t) solve -(1/sin)(sin u')' = nu(nu+1) u on S^2(1)."""
    t = np.linspace(0.3, 2.8, 50)
    h = 1e-4
    for nu in range(1, 6):
        u = lambda s: eval_legendre(nu, np.cos(s))  # noqa: E731
        du = lambda s: (u(s + h) - u(s - h)) / (2 * h)  # noqa: E731
        lhs = -((np.sin(t + h) * du(t + h) - np.sin(t - h) * du(t - h)) / (2 * h)) / np.sin(t)
        np.testing.assert_allclose(lhs, exact_eigenvalue(nu, 3, 1.0) * u(t), atol=1e-5)


def test_eigenvalue_scaling_and_errors():
    assert exact_eigenvalue(3, 2, 2.0) == pytest.approx(9 / 4)
    assert exact_eigenvalue(2, 3, 0.5) == pytest.approx(24.0)
    with pytest.raises(DomainError):
        exact_eigenvalue(-1, 2, 1.0)


def test_repeated_spectrum():
    np.testing.assert_allclose(repeated_spectrum(3, 1.0, 9), [0, 2, 2, 2, 6, 6, 6, 6, 6])
    np.testing.assert_allclose(repeated_spectrum(2, 1.0, 6), [0, 1, 1, 4, 4, 9])


@given(st.integers(1, 300), st.sampled_from([2, 3, 4]), st.floats(0.2, 5))
def test_xi_eta_are_boundary_roots(nu, n, r):
    lam = exact_eigenvalue(nu, n, r)
    xi = brentq(lambda x: x - sqrt(lam + x) / (2 * r), 0, lam + 10 / r**2 + 10)
    eta = brentq(lambda x: x - sqrt(lam - x) / (2 * r), 0, lam)
    assert xi_bound(nu, n, r) == pytest.approx(xi, rel=1e-12)
    assert eta_bound(nu, n, r) == pytest.approx(eta, rel=1e-12)


def test_interval_values():
    iv = gap_interval(3, 2, 1.0)
    # xi_3 and eta_4 from the quadratic 4 r^2 x^2 -/+ x - lam = 0
    assert iv.lo == pytest.approx(9 + (1 + sqrt(1 + 16 * 9)) / 8, rel=1e-14)
    assert iv.hi == pytest.approx(16 - (-1 + sqrt(1 + 16 * 16)) / 8, rel=1e-14)
    with pytest.raises(DomainError):
        gap_interval(0, 2, 1.0)


def test_sufficient_condition_on_partition():
    r = 1.0
    for nu in range(1, 51):
        iv = gap_interval(nu, 2, r)
        for lam in np.linspace(iv.lo, iv.hi, 103)[1:-1]:
            dist = min(lam - exact_eigenvalue(nu, 2, r), exact_eigenvalue(nu + 1, 2, r) - lam)
            assert sufficient_condition(lam, dist, r)
        # just outside the lower end the condition fails
        lam = iv.lo - 1e-6
        assert not sufficient_condition(lam, lam - exact_eigenvalue(nu, 2, r), r)


def test_sufficient_condition_needs_large_lambda():
    r = 1.0
    assert not sufficient_condition(admissibility_threshold(r) / 2, 10.0, r)


def test_kato_invertibility_arithmetic():
    # 0.1 * 4 + 0.01 / 0.4 = 0.425 against 0.9 d
    assert kato_invertibility(4.0, 0.5, 0.1, 0.1)
    assert not kato_invertibility(4.0, 0.47, 0.1, 0.1)
    assert default_delta(16.0, 1.0) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        kato_invertibility(1.0, 1.0, 0.0, 1.0)


def test_width_bound_and_nu0():
    for r in (0.5, 1.0, 2.0):
        for n in (2, 3):
            res = find_nu0(n, r)
            assert res.nu0 <= 5
            assert all(satisfies_width_bound(nu, n, r) for nu in range(res.nu0, 201))
            assert res.limit_value == pytest.approx(res.limit_target, rel=0.01)
    assert root_difference(10_000, 2, 1.0) == pytest.approx(0.5, rel=1e-3)


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_gap_ratio_limit(n, r):
    assert gap_ratio(100, n, r) == pytest.approx(2 / r, rel=0.02)
    # xi, eta ~ nu / (2 r^2) eat half the gap 2 nu / r^2; the one-third width bound gives 2 / (3r) from below
    assert interval_ratio(2000, n, r) == pytest.approx(1 / r, rel=0.02)
    nu0 = find_nu0(n, r).nu0
    assert min(interval_ratio(nu, n, r) for nu in range(nu0, 201)) >= 2 / (3 * r)


def test_c_mu_constant_and_exponential():
    geom = SphereGeometry(2, 1.0)
    assert compute_c_mu(ThicknessProfile.constant(0, 0.3), geom).value == 0.0
    prof = ThicknessProfile.from_functions(lambda t: 0 * t, lambda t: np.exp(0.05 * np.sin(t)))
    # mu'/mu = 0.05 cos t
    cm = compute_c_mu(prof, geom)
    assert cm.value == pytest.approx(0.05, rel=1e-10)
    assert cm.admissible
    assert compute_c_mu(prof, SphereGeometry(2, 2.0)).value == pytest.approx(0.025, rel=1e-10)
    wide = ThicknessProfile.from_functions(lambda t: 0 * t, lambda t: np.exp(0.1 * np.sin(t)))
    assert not compute_c_mu(wide, geom).admissible


def test_c_mu_sampled_oracle():
    prof = ThicknessProfile([0.0], [0.3, 0.05, 0.02, 0.0, 0.03])
    th = np.linspace(0, 2 * np.pi, 200_001)
    brute = np.max(np.abs(prof.mu(th, 1) / prof.mu(th)))
    assert compute_c_mu(prof, SphereGeometry(2, 1.0)).value == pytest.approx(brute, rel=1e-9)


def test_certify_constant_profile():
    cert = certify(ThicknessProfile.constant(0.0, 1.0), 2, 1.0)
    d = json.loads(cert.to_json())
    assert d["admissible"] is True and d["c_mu"] == 0.0
    assert d["nu0"] == 1
    assert set(d) >= {"intervals", "ratios", "ratio_bound", "ratio_proxy", "guaranteed"}
    assert d["ratio_proxy"] == pytest.approx(2.0, rel=0.02)


def test_certify_flags_eigenvalue_inside_interval():
    lam = list(repeated_spectrum(2, 1.0, 40))
    iv = gap_interval(5, 2, 1.0)
    spectrum = from_eigenvalues(lam + [0.5 * (iv.lo + iv.hi)])
    with pytest.raises(CertificationError) as info:
        certify(ThicknessProfile.constant(0.0, 1.0), 2, 1.0, spectrum, check_max_nu=10)
    assert info.value.violations[0][0] == 5
    cert = certify(ThicknessProfile.constant(0.0, 1.0), 2, 1.0, spectrum, check_max_nu=10, raise_on_violation=False)
    assert len(cert.exclusion_violations) == 1


def test_certify_inadmissible_profile_is_not_guaranteed():
    prof = ThicknessProfile.from_functions(lambda t: 0 * t, lambda t: np.exp(0.2 * np.sin(t)))
    cert = certify(prof, 2, 1.0)
    assert not cert.admissible and not cert.guaranteed


def test_ratio_proxy_window():
    lam = repeated_spectrum(2, 1.0, 41)
    assert repeated_ratio_proxy(lam, (100, 400)) == pytest.approx(21 / 10)
