"""Spectral gap certification for weighted operators on round spheres.

The unperturbed operator is -Laplace-Beltrami on S^{n-1}(r) with distinct
eigenvalues lam_nu = nu (nu + n - 2) / r^2.  A_mu differs from it by a first
order term whose relative bound is controlled by C_mu = sup |grad mu| / mu;
between lam_nu and lam_{nu+1} this yields resolvent intervals
I_nu = ]lam_nu + xi_nu, lam_{nu+1} - eta_{nu+1}[ free of spectrum of A_mu.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from math import comb, sqrt
from typing import NamedTuple

import numpy as np

from .errors import CertificationError, DomainError, NotFoundError
from .geometry import SphereGeometry, ThicknessProfile
from .spectral import SpectralDecomposition

DEFAULT_HORIZON = 200
DEFAULT_C_MU_SAMPLES = 8192


def exact_eigenvalue(nu: int, n: int, r: float) -> float:
    """nu-th distinct eigenvalue of -Laplace-Beltrami on S^{n-1}(r)."""
    if nu < 0:
        raise DomainError("nu must be nonnegative")
    return nu * (nu + n - 2) / r**2


def multiplicity(nu: int, n: int) -> int:
    """Dimension of the degree-nu spherical harmonics on S^{n-1}."""
    if nu < 0 or n < 2:
        raise DomainError("need nu >= 0 and n >= 2")
    if nu < 2:
        return comb(nu + n - 1, nu)
    return comb(nu + n - 1, nu) - comb(nu + n - 3, nu - 2)


def repeated_spectrum(n: int, r: float, count: int) -> np.ndarray:
    """First ``count`` eigenvalues of the sphere, repeated by multiplicity."""
    if count < 1:
        raise DomainError("count must be >= 1")
    out = []
    nu = 0
    while len(out) < count:
        out.extend([exact_eigenvalue(nu, n, r)] * multiplicity(nu, n))
        nu += 1
    return np.array(out[:count])


class CMu(NamedTuple):
    value: float
    admissible: bool
    threshold: float
    argmax: float


def admissibility_threshold(r: float) -> float:
    return 1.0 / (4.0 * r) ** 2


def compute_c_mu(profile: ThicknessProfile, geom: SphereGeometry, samples: int = DEFAULT_C_MU_SAMPLES) -> CMu:
    """C_mu = sup |grad mu| / mu over the sphere, with its admissibility verdict.

    On S^1(r), |grad mu| = |d mu / d theta| / r.  Dense sampling of the
    Fourier profile is followed by a Newton polish of the best sample.
    """
    threshold = admissibility_threshold(geom.r)
    if profile.is_constant or not np.any(profile.mu_coeffs[1:]):
        return CMu(0.0, True, threshold, 0.0)
    if geom.n != 2:
        raise DomainError("non-constant profiles are supported on the circle only")

    def ratio(t, order=0):
        # derivatives of h = mu'/mu
        m0, m1, m2, m3 = (profile.mu(t, k) for k in range(4))
        if order == 0:
            return m1 / m0
        if order == 1:
            return m2 / m0 - (m1 / m0) ** 2
        return m3 / m0 - 3 * m2 * m1 / m0**2 + 2 * (m1 / m0) ** 3

    theta = 2 * np.pi * np.arange(samples) / samples
    vals = np.abs(ratio(theta))
    t = float(theta[np.argmax(vals)])
    best = float(vals.max())
    for _ in range(3):
        h2 = float(ratio(t, 2))
        if h2 == 0.0:
            break
        t_new = t - float(ratio(t, 1)) / h2
        if abs(t_new - t) > 2 * np.pi / samples:
            break
        t = t_new
    best = max(best, float(abs(ratio(t))))
    value = best / geom.r
    return CMu(value, value <= threshold, threshold, t % (2 * np.pi))


def kato_invertibility(lam: float, dist: float, c_mu: float, delta: float) -> bool:
    """Sufficient condition delta lam + C_mu^2 / (4 delta) < (1 - delta) d for lam I - A_mu invertible."""
    if not (0.0 < delta < 1.0):
        raise DomainError("delta must lie in ]0, 1[")
    if lam <= 0 or dist <= 0:
        raise DomainError("lam and dist must be positive")
    return delta * lam + c_mu**2 / (4.0 * delta) < (1.0 - delta) * dist


def default_delta(lam: float, r: float) -> float:
    """The delta = sqrt(lam) / (8 r) that turns the Kato bound into the two-sided test."""
    return sqrt(lam) / (8.0 * r)


def sufficient_condition(lam: float, dist: float, r: float) -> bool:
    """lam > 1/(4r)^2 and d(lam) > sqrt(lam) / (2r)."""
    return lam > admissibility_threshold(r) and dist > sqrt(lam) / (2.0 * r)


def _root_term(lam_bar: float, r: float) -> float:
    return sqrt(1.0 / (64.0 * r**4) + lam_bar / (4.0 * r**2))


def xi_bound(nu: int, n: int, r: float) -> float:
    return 1.0 / (8.0 * r**2) + _root_term(exact_eigenvalue(nu, n, r), r)


def eta_bound(nu: int, n: int, r: float) -> float:
    return -1.0 / (8.0 * r**2) + _root_term(exact_eigenvalue(nu, n, r), r)


class Interval(NamedTuple):
    nu: int
    lo: float
    hi: float

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float, margin: float = 0.0) -> bool:
        return self.lo + margin < x < self.hi - margin


def gap_interval(nu: int, n: int, r: float) -> Interval | None:
    """I_nu between lam_nu and lam_{nu+1}, or None if empty."""
    if nu < 1:
        raise DomainError("gap intervals start at nu = 1")
    lo = exact_eigenvalue(nu, n, r) + xi_bound(nu, n, r)
    hi = exact_eigenvalue(nu + 1, n, r) - eta_bound(nu + 1, n, r)
    return Interval(nu, lo, hi) if lo < hi else None


def satisfies_width_bound(nu: int, n: int, r: float) -> bool:
    """Width of I_nu is at least one third of lam_{nu+1} - lam_nu."""
    lo = exact_eigenvalue(nu, n, r) + xi_bound(nu, n, r)
    hi = exact_eigenvalue(nu + 1, n, r) - eta_bound(nu + 1, n, r)
    return hi - lo >= (exact_eigenvalue(nu + 1, n, r) - exact_eigenvalue(nu, n, r)) / 3.0


def root_difference(nu: int, n: int, r: float) -> float:
    """Difference of consecutive root terms; tends to 1/(2 r^2) as nu grows."""
    return _root_term(exact_eigenvalue(nu + 1, n, r), r) - _root_term(exact_eigenvalue(nu, n, r), r)


class Nu0(NamedTuple):
    nu0: int
    horizon: int
    limit_value: float
    limit_target: float


def find_nu0(n: int, r: float, horizon: int = DEFAULT_HORIZON) -> Nu0:
    """Smallest nu0 with the one-third width bound for every nu0 <= nu <= horizon."""
    if horizon < 2:
        raise DomainError("horizon must be >= 2")
    nu0 = None
    for nu in range(horizon, 0, -1):
        if satisfies_width_bound(nu, n, r):
            nu0 = nu
        else:
            break
    if nu0 is None:
        raise NotFoundError(f"width bound fails at nu = {horizon}; no nu0 up to the horizon")
    return Nu0(nu0, horizon, root_difference(horizon, n, r), 1.0 / (2.0 * r**2))


def gap_ratio(nu: int, n: int, r: float) -> float:
    """(lam_{nu+1} - lam_nu) / lam_nu^{1/2}; tends to 2/r."""
    return (exact_eigenvalue(nu + 1, n, r) - exact_eigenvalue(nu, n, r)) / sqrt(exact_eigenvalue(nu, n, r))


def interval_ratio(nu: int, n: int, r: float) -> float:
    """Certified gap over the square root of its lower end."""
    lo = exact_eigenvalue(nu, n, r) + xi_bound(nu, n, r)
    hi = exact_eigenvalue(nu + 1, n, r) - eta_bound(nu + 1, n, r)
    return (hi - lo) / sqrt(lo)


def repeated_ratio_proxy(eigenvalues, window) -> float:
    """max of (lam_{j+1} - lam_j) / lam_j^{1/2} over j with lam_j in ``window``.

    A finite stand-in for the limsup over j.
    """
    lam = np.sort(np.asarray(eigenvalues, dtype=float))
    lo, hi = window
    best = -np.inf
    for j in range(len(lam) - 1):
        if lo <= lam[j] <= hi and lam[j] > 0:
            best = max(best, (lam[j + 1] - lam[j]) / sqrt(lam[j]))
    return float(best)


@dataclass
class GapCertificate:
    n: int
    r: float
    c_mu: float
    admissible: bool
    nu0: int
    intervals: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    ratio_bound: float = 0.0
    horizon: int = DEFAULT_HORIZON
    ratio_proxy: float | None = None
    exclusion_checked: bool = False
    exclusion_violations: list = field(default_factory=list)
    guaranteed: bool = True

    def to_json_dict(self) -> dict:
        d = {
            "n": self.n,
            "r": self.r,
            "c_mu": self.c_mu,
            "admissible": self.admissible,
            "nu0": self.nu0,
            "intervals": [[iv.lo, iv.hi] for iv in self.intervals],
            "ratios": list(self.ratios),
            "ratio_bound": self.ratio_bound,
        }
        d["horizon"] = self.horizon
        d["ratio_proxy"] = self.ratio_proxy
        d["exclusion_checked"] = self.exclusion_checked
        d["exclusion_violations"] = [list(v) for v in self.exclusion_violations]
        d["guaranteed"] = self.guaranteed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=False)


def certify(
    profile: ThicknessProfile,
    n: int,
    r: float,
    spectrum: SpectralDecomposition | None = None,
    *,
    horizon: int = DEFAULT_HORIZON,
    check_max_nu: int | None = None,
    tolerances=None,
    raise_on_violation: bool = True,
    c_mu_samples: int = DEFAULT_C_MU_SAMPLES,
) -> GapCertificate:
    """Assemble C_mu, nu0, the intervals I_nu (nu0 <= nu <= horizon) and their ratios.

    With a numerical spectrum of A_mu (circle only), every eigenvalue is
    checked against every certified interval with nu0 <= nu <= ``check_max_nu``;
    ``tolerances`` (scalar or one per eigenvalue) shrinks each interval from
    both sides before the test.  The ratio proxy is then taken from the
    numerical spectrum over the window [lam_{check_max_nu / 2}, lam_{check_max_nu}].
    """
    geom = SphereGeometry(n, r)
    cm = compute_c_mu(profile, geom, c_mu_samples)
    nu0 = find_nu0(n, r, horizon)
    intervals = []
    ratios = []
    for nu in range(nu0.nu0, horizon + 1):
        iv = gap_interval(nu, n, r)
        intervals.append(iv)
        ratios.append(interval_ratio(nu, n, r))
    cert = GapCertificate(
        n=n,
        r=r,
        c_mu=cm.value,
        admissible=cm.admissible,
        nu0=nu0.nu0,
        intervals=intervals,
        ratios=ratios,
        ratio_bound=2.0 / (3.0 * r),
        horizon=horizon,
        guaranteed=cm.admissible,
    )
    tail = range(max(nu0.nu0, horizon // 2), horizon)
    cert.ratio_proxy = max(gap_ratio(nu, n, r) for nu in tail) if len(tail) else None
    if spectrum is None:
        return cert

    if n != 2:
        raise DomainError("numerical spectra are only available on the circle")
    lam = np.asarray(spectrum.eigenvalues)
    tol = np.broadcast_to(np.asarray(0.0 if tolerances is None else tolerances, dtype=float), lam.shape)
    top = horizon if check_max_nu is None else min(check_max_nu, horizon)
    violations = []
    for iv in intervals:
        if iv.nu > top:
            break
        inside = (lam > iv.lo + tol) & (lam < iv.hi - tol)
        for j in np.nonzero(inside)[0]:
            violations.append((int(iv.nu), int(j) + 1, float(lam[j])))
    cert.exclusion_checked = True
    cert.exclusion_violations = violations
    window = (exact_eigenvalue(max(1, top // 2), n, r), exact_eigenvalue(top, n, r))
    cert.ratio_proxy = repeated_ratio_proxy(lam, window)
    if violations and raise_on_violation and cm.admissible:
        raise CertificationError(
            f"{len(violations)} eigenvalue(s) fall inside certified intervals", violations
        )
    return cert
