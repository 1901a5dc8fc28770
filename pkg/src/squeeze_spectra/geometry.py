"""Curved-squeezing geometry around a round sphere S^{n-1}(r) in R^n.

Points are numpy arrays whose last axis has length ``n``; every map is
vectorised over leading axes.  The thickness profile and the shell
quadratures are restricted to the circle (n = 2), where the profile is a
finite Fourier series in the polar angle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import DomainError, InvalidProfileError, NumericError, ShapeError

_MU_CHECK_SAMPLES = 4096


@dataclass(frozen=True)
class SphereGeometry:
    """The sphere S^{n-1}(r) = {x in R^n : |x| = r}."""

    n: int
    r: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise DomainError(f"ambient dimension must be an integer >= 2, got {self.n}")
        if not np.isfinite(self.r) or self.r <= 0:
            raise DomainError(f"radius must be positive, got {self.r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "r", float(self.r))

    @property
    def k(self) -> int:
        """Dimension of the sphere."""
        return self.n - 1


def _points(x, geom: SphereGeometry) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != geom.n:
        raise ShapeError(f"points must have last axis {geom.n}, got shape {x.shape}")
    return x


def _norms(x: np.ndarray) -> np.ndarray:
    rho = np.linalg.norm(x, axis=-1)
    if np.any(rho == 0.0):
        raise DomainError("projection is undefined at the origin")
    return rho


def project(x, geom: SphereGeometry) -> np.ndarray:
    """Tubular projection phi(x) = r x / |x|."""
    x = _points(x, geom)
    rho = _norms(x)
    return geom.r * x / rho[..., None]


def squeeze(x, eps: float, geom: SphereGeometry) -> np.ndarray:
    """Curved squeezing Phi_eps(x) = phi(x) + eps (x - phi(x)), eps in ]0, 1]."""
    if not (0.0 < eps <= 1.0):
        raise DomainError(f"eps must lie in ]0, 1], got {eps}")
    x = _points(x, geom)
    p = project(x, geom)
    return p + eps * (x - p)


def unsqueeze(y, eps: float, geom: SphereGeometry) -> np.ndarray:
    """Inverse of :func:`squeeze`: phi(y) + (y - phi(y)) / eps."""
    if not (0.0 < eps <= 1.0):
        raise DomainError(f"eps must lie in ]0, 1], got {eps}")
    y = _points(y, geom)
    p = project(y, geom)
    return p + (y - p) / eps


def normal_projector(x, geom: SphereGeometry) -> np.ndarray:
    """P(x): orthogonal projector onto the normal line at phi(x)."""
    x = _points(x, geom)
    u = x / _norms(x)[..., None]
    return u[..., :, None] * u[..., None, :]


def tangent_projector(x, geom: SphereGeometry) -> np.ndarray:
    """Q(x) = I - P(x): orthogonal projector onto T_{phi(x)} M."""
    return np.eye(geom.n) - normal_projector(x, geom)


def dphi(x, geom: SphereGeometry) -> np.ndarray:
    """Jacobian of the projection, (r/|x|) Q(x)."""
    x = _points(x, geom)
    return (geom.r / _norms(x))[..., None, None] * tangent_projector(x, geom)


def density_j0(x, geom: SphereGeometry) -> np.ndarray:
    """J_0(x) = |det Dphi(x) restricted to T_{phi(x)} M| = (r/|x|)^{n-1}."""
    x = _points(x, geom)
    return (geom.r / _norms(x)) ** (geom.n - 1)


def s0_matrix(x, geom: SphereGeometry) -> np.ndarray:
    """Limit correction S_0(x) = (|x|/r) Q(x) for the sphere."""
    x = _points(x, geom)
    return (_norms(x) / geom.r)[..., None, None] * tangent_projector(x, geom)


@dataclass(frozen=True)
class TangentFrame:
    """Orthonormal tangent basis and unit normal at a sphere point."""

    base: np.ndarray
    tangents: np.ndarray  # (n-1, n), rows are basis vectors
    normal: np.ndarray


def tangent_frame(p, geom: SphereGeometry) -> TangentFrame:
    p = np.asarray(p, dtype=float)
    if p.shape != (geom.n,):
        raise ShapeError(f"expected a single point of length {geom.n}")
    nu = p / _norms(p)
    if geom.n == 2:
        tangents = np.array([[-nu[1], nu[0]]])
    else:
        # complete nu to an orthonormal basis; the first column is +-nu
        q, _ = np.linalg.qr(np.column_stack([nu, np.eye(geom.n)]))
        tangents = q[:, 1 : geom.n].T.copy()
    return TangentFrame(base=p.copy(), tangents=tangents, normal=nu)


# ---------------------------------------------------------------------------
# thickness profile (n = 2)


def _fourier_eval(coeffs: np.ndarray, theta, order: int = 0) -> np.ndarray:
    """Evaluate a0 + sum_k a_k cos(k t) + b_k sin(k t) or its ``order``-th derivative.

    ``coeffs`` is laid out as [a0, a1, b1, a2, b2, ...].
    """
    theta = np.asarray(theta, dtype=float)
    out = np.zeros_like(theta)
    if order == 0:
        out = out + coeffs[0]
    nmodes = (len(coeffs) - 1) // 2
    for k in range(1, nmodes + 1):
        a, b = coeffs[2 * k - 1], coeffs[2 * k]
        if a == 0.0 and b == 0.0:
            continue
        # d^m/dt^m of (a cos + b sin) rotates by m quarter turns and scales by k^m
        phase = k * theta + order * np.pi / 2
        out = out + k**order * (a * np.cos(phase) + b * np.sin(phase))
    return out


def _as_coeffs(c) -> np.ndarray:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.ndim != 1 or len(c) == 0:
        raise InvalidProfileError("Fourier coefficient list must be a nonempty 1-D sequence")
    if len(c) % 2 == 0:
        c = np.append(c, 0.0)
    if not np.all(np.isfinite(c)):
        raise InvalidProfileError("Fourier coefficients must be finite")
    return c


@dataclass(frozen=True)
class ThicknessProfile:
    """Radial offsets c(theta) < d(theta) defining Omega = {r + c < |x| < r + d}.

    Coefficients are [a0, a1, b1, a2, b2, ...] for the polar angle theta;
    on S^1(r) the arc length is s = r theta.
    """

    c_coeffs: np.ndarray
    d_coeffs: np.ndarray
    mu_min: float = field(init=False)

    def __post_init__(self):
        c = _as_coeffs(self.c_coeffs)
        d = _as_coeffs(self.d_coeffs)
        width = max(len(c), len(d))
        c = np.pad(c, (0, width - len(c)))
        d = np.pad(d, (0, width - len(d)))
        c.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "c_coeffs", c)
        object.__setattr__(self, "d_coeffs", d)
        theta = np.linspace(0.0, 2 * np.pi, _MU_CHECK_SAMPLES, endpoint=False)
        mu = self.mu(theta)
        mu_min = float(mu.min())
        if mu_min <= 0.0:
            bad = float(theta[np.argmin(mu)])
            raise InvalidProfileError(
                f"section measure mu = d - c must be positive; mu({bad:.4f}) = {mu_min:.3g}"
            )
        object.__setattr__(self, "mu_min", mu_min)

    @classmethod
    def constant(cls, c: float, d: float) -> "ThicknessProfile":
        return cls([c], [d])

    @classmethod
    def from_functions(cls, c: Callable, d: Callable, modes: int = 32) -> "ThicknessProfile":
        """Fit band-limited offsets by FFT of samples of ``c`` and ``d``."""
        return cls(fourier_fit(c, modes), fourier_fit(d, modes))

    @property
    def modes(self) -> int:
        return (len(self.mu_coeffs) - 1) // 2

    @property
    def mu_coeffs(self) -> np.ndarray:
        return self.d_coeffs - self.c_coeffs

    @property
    def is_constant(self) -> bool:
        return not np.any(self.mu_coeffs[1:]) and not np.any(self.c_coeffs[1:])

    def c(self, theta, order: int = 0) -> np.ndarray:
        return _fourier_eval(self.c_coeffs, theta, order)

    def d(self, theta, order: int = 0) -> np.ndarray:
        return _fourier_eval(self.d_coeffs, theta, order)

    def mu(self, theta, order: int = 0) -> np.ndarray:
        """Section measure (or its theta-derivative) at polar angle theta."""
        return _fourier_eval(self.mu_coeffs, theta, order)

    def max_abs_offset(self) -> float:
        theta = np.linspace(0.0, 2 * np.pi, _MU_CHECK_SAMPLES, endpoint=False)
        return float(max(np.abs(self.c(theta)).max(), np.abs(self.d(theta)).max()))

    def scaled(self, alpha: float) -> "ThicknessProfile":
        return ThicknessProfile(alpha * self.c_coeffs, alpha * self.d_coeffs)


def fourier_fit(f: Callable, modes: int) -> np.ndarray:
    """Coefficients [a0, a1, b1, ...] of the degree-``modes`` trigonometric interpolant."""
    m = 4 * modes + 4
    theta = 2 * np.pi * np.arange(m) / m
    vals = np.asarray(f(theta), dtype=float) * np.ones(m)
    fh = np.fft.rfft(vals) / m
    out = np.zeros(2 * modes + 1)
    out[0] = fh[0].real
    out[1::2] = 2 * fh[1 : modes + 1].real
    out[2::2] = -2 * fh[1 : modes + 1].imag
    out[np.abs(out) < 1e-17] = 0.0
    return out


def _polar_angle(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.arctan2(p[..., 1], p[..., 0])


def section_measure(profile: ThicknessProfile, p) -> np.ndarray:
    """mu(p) = d(p) - c(p), the length of the radial normal section over p."""
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 2:
        raise ShapeError("thickness profiles are defined on the circle only")
    mu = profile.mu(_polar_angle(p))
    if np.any(mu <= 0.0):
        raise InvalidProfileError("section measure is nonpositive at a requested point")
    return mu


# ---------------------------------------------------------------------------
# shell quadrature and the coarea identity (n = 2)


@dataclass(frozen=True)
class ShellGrid:
    """Tensor quadrature on Omega: periodic trapezoid in theta, Gauss-Legendre across.

    ``t`` runs over [0, 1] and parametrises the radial segment
    rho = r + c(theta) + t mu(theta).
    """

    geom: SphereGeometry
    profile: ThicknessProfile
    theta: np.ndarray
    t: np.ndarray
    w_theta: np.ndarray
    w_t: np.ndarray

    @property
    def shape(self):
        return (len(self.theta), len(self.t))

    def radii(self) -> np.ndarray:
        th = self.theta[:, None]
        return self.geom.r + self.profile.c(th) + self.t[None, :] * self.profile.mu(th)

    def points(self) -> np.ndarray:
        rho = self.radii()
        return np.stack(
            [rho * np.cos(self.theta)[:, None], rho * np.sin(self.theta)[:, None]], axis=-1
        )

    def area_jacobian(self) -> np.ndarray:
        """|det| of d(x, y)/d(theta, t), built from the Cartesian partials."""
        th = self.theta[:, None]
        rho = self.radii()
        rho_th = self.profile.c(th, 1) + self.t[None, :] * self.profile.mu(th, 1)
        mu = self.profile.mu(th) * np.ones_like(rho)
        cos, sin = np.cos(th), np.sin(th)
        jac = np.empty(rho.shape + (2, 2))
        jac[..., 0, 0] = rho_th * cos - rho * sin
        jac[..., 1, 0] = rho_th * sin + rho * cos
        jac[..., 0, 1] = mu * cos
        jac[..., 1, 1] = mu * sin
        return np.abs(np.linalg.det(jac))

    def weights(self) -> np.ndarray:
        return self.w_theta[:, None] * self.w_t[None, :]


def shell_grid(profile: ThicknessProfile, geom: SphereGeometry, n_theta: int, n_cells: int = 2) -> ShellGrid:
    """Uniform angles times ``n_cells`` radial cells of 4-point Gauss-Legendre."""
    if geom.n != 2:
        raise DomainError("shell quadrature is implemented for the circle (n = 2) only")
    if n_theta < 4 or n_cells < 1:
        raise DomainError("need n_theta >= 4 and n_cells >= 1")
    if geom.r + min(profile.c(np.linspace(0, 2 * np.pi, 512)).min(), 0.0) <= 0:
        raise DomainError("shell reaches the origin")
    xg, wg = np.polynomial.legendre.leggauss(4)
    edges = np.linspace(0.0, 1.0, n_cells + 1)
    h = np.diff(edges)
    t = (edges[:-1, None] + 0.5 * h[:, None] * (xg[None, :] + 1)).ravel()
    w_t = (0.5 * h[:, None] * wg[None, :]).ravel()
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    w_theta = np.full(n_theta, 2 * np.pi / n_theta)
    return ShellGrid(geom, profile, theta, t, w_theta, w_t)


class CoareaResult(NamedTuple):
    lhs: float
    rhs: float
    diff: float


def _sample(g: Callable, pts: np.ndarray) -> np.ndarray:
    vals = np.asarray(g(pts), dtype=float) * np.ones(pts.shape[:-1])
    if not np.all(np.isfinite(vals)):
        raise NumericError("integrand produced non-finite samples")
    return vals


def coarea_check(
    g: Callable,
    profile: ThicknessProfile,
    geom: SphereGeometry,
    n_theta: int = 256,
    n_cells: int = 2,
) -> CoareaResult:
    """Both sides of  int_Omega J_0 g dx = int_M (int_{fiber} g dH^1) dH^1.

    ``g`` takes an array of points (..., 2) and returns values of shape (...).
    The left side is a volume quadrature over the mapped (theta, t) square
    with the Cartesian area element; the right side integrates ``g`` along
    each radial fiber in rho and then over the circle in arc length.
    """
    grid = shell_grid(profile, geom, n_theta, n_cells)
    pts = grid.points()
    lhs = float(np.sum(grid.weights() * density_j0(pts, geom) * _sample(g, pts) * grid.area_jacobian()))

    # fibers: rho from r + c to r + d, Gauss-Legendre in rho directly
    theta = grid.theta
    lo = geom.r + profile.c(theta)
    hi = geom.r + profile.d(theta)
    rho = lo[:, None] + grid.t[None, :] * (hi - lo)[:, None]
    base = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    fpts = rho[..., None] * base[:, None, :]
    fiber = (_sample(g, fpts) * grid.w_t[None, :]).sum(axis=1) * (hi - lo)
    rhs = float(np.sum(fiber * geom.r * grid.w_theta))
    return CoareaResult(lhs, rhs, abs(lhs - rhs))


# ---------------------------------------------------------------------------
# lifting circle functions to the shell and the two pairs of forms


def circle_derivative(v: np.ndarray, r: float) -> np.ndarray:
    """Arc-length derivative of periodic samples by FFT."""
    v = np.asarray(v, dtype=float)
    m = len(v)
    k = np.fft.rfftfreq(m, d=1.0 / m)
    vh = np.fft.rfft(v)
    if m % 2 == 0:
        vh[-1] = 0.0
    return np.fft.irfft(1j * k * vh, n=m) / r


@dataclass(frozen=True)
class ShellFunction:
    """Values and Euclidean gradients of a function on a :class:`ShellGrid`."""

    grid: ShellGrid
    values: np.ndarray
    gradient: np.ndarray


def lift(v, profile: ThicknessProfile, geom: SphereGeometry, n_cells: int = 2, grid: ShellGrid | None = None) -> ShellFunction:
    """u = v o phi on the shell, with grad u = Dphi^T grad v(phi(x)).

    ``v`` holds samples at the uniform angles 2 pi i / N of S^1(r); the shell
    grid uses the same angles so that v o phi is exact at the nodes.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ShapeError("v must be a 1-D array of circle samples")
    if grid is None:
        grid = shell_grid(profile, geom, len(v), n_cells)
    elif grid.shape[0] != len(v):
        raise ShapeError(f"grid has {grid.shape[0]} angles but v has {len(v)} samples")
    pts = grid.points()
    # tangential gradient on the circle: v'(s) e_theta at phi(x)
    dv = circle_derivative(v, geom.r)
    e_theta = np.stack([-np.sin(grid.theta), np.cos(grid.theta)], axis=-1)
    grad_v = (dv[:, None] * e_theta)[:, None, :] * np.ones(grid.shape + (1,))
    grad_u = np.einsum("...ji,...j->...i", dphi(pts, geom), grad_v)
    values = np.repeat(v[:, None], grid.shape[1], axis=1)
    return ShellFunction(grid, values, grad_u)


def b0_form(u: ShellFunction, w: ShellFunction | None = None) -> float:
    """b_0(u, w) = int_Omega J_0 u w dx."""
    w = u if w is None else w
    g = u.grid
    pts = g.points()
    return float(np.sum(g.weights() * g.area_jacobian() * density_j0(pts, g.geom) * u.values * w.values))


def a0_form(u: ShellFunction, w: ShellFunction | None = None) -> float:
    """a_0(u, w) = int_Omega J_0 <S_0^T grad u, S_0^T grad w> dx."""
    w = u if w is None else w
    g = u.grid
    pts = g.points()
    s0 = s0_matrix(pts, g.geom)
    su = np.einsum("...ji,...j->...i", s0, u.gradient)
    sw = np.einsum("...ji,...j->...i", s0, w.gradient)
    integrand = density_j0(pts, g.geom) * np.sum(su * sw, axis=-1)
    return float(np.sum(g.weights() * g.area_jacobian() * integrand))


def b_mu_form(v, profile: ThicknessProfile, geom: SphereGeometry, w=None) -> float:
    """b_mu(v, w) = int_{S^1(r)} mu v w ds by the periodic trapezoid rule."""
    v = np.asarray(v, dtype=float)
    w = v if w is None else np.asarray(w, dtype=float)
    theta = 2 * np.pi * np.arange(len(v)) / len(v)
    ds = 2 * np.pi * geom.r / len(v)
    return float(np.sum(profile.mu(theta) * v * w) * ds)


def a_mu_form(v, profile: ThicknessProfile, geom: SphereGeometry, w=None) -> float:
    """a_mu(v, w) = int_{S^1(r)} mu v' w' ds with spectral derivatives."""
    v = np.asarray(v, dtype=float)
    w = v if w is None else np.asarray(w, dtype=float)
    theta = 2 * np.pi * np.arange(len(v)) / len(v)
    ds = 2 * np.pi * geom.r / len(v)
    dv, dw = circle_derivative(v, geom.r), circle_derivative(w, geom.r)
    return float(np.sum(profile.mu(theta) * dv * dw) * ds)
