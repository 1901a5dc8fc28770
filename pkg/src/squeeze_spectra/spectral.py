"""Weighted operator A_mu = -(1/mu) (mu u')' on S^1(r): P1 assembly and spectra."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import DomainError, FactorizationError, InvalidProfileError
from .geometry import SphereGeometry, ThicknessProfile
from .tridiag import generalized_eigh_ql

CLUSTER_RTOL = 1e-8

_GAUSS2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class WeightedOperator:
    """Stiffness K (from a_mu) and mass M (from b_mu) on a uniform periodic grid."""

    n_grid: int
    radius: float
    mu_nodes: np.ndarray
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    profile: ThicknessProfile = field(repr=False)

    @property
    def h(self) -> float:
        """Element length in arc length."""
        return 2 * np.pi * self.radius / self.n_grid

    @property
    def theta(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n_grid) / self.n_grid

    @property
    def arclength(self) -> np.ndarray:
        return self.radius * self.theta


def assemble_circle_operator(profile: ThicknessProfile, geom: SphereGeometry, n_grid: int) -> WeightedOperator:
    """P1 finite elements for (a_mu, b_mu) on the uniform arc-length grid of S^1(r).

    mu is sampled at two Gauss points per element.
    """
    if geom.n != 2:
        raise DomainError("the weighted operator is assembled on the circle (n = 2) only")
    if n_grid < 16:
        raise DomainError(f"need at least 16 grid points, got {n_grid}")
    N = int(n_grid)
    r = geom.r
    dth = 2 * np.pi / N
    h = r * dth
    left = np.arange(N)
    right = (left + 1) % N

    xi = 0.5 * (_GAUSS2 + 1.0)  # Gauss points on [0, 1]
    theta_g = (left[:, None] + xi[None, :]) * dth
    mu_g = profile.mu(theta_g)
    if np.any(mu_g <= 0.0):
        raise InvalidProfileError("mu is nonpositive at a quadrature node")

    # element integrals with weights h/2 at each Gauss point
    w = 0.5 * h
    mu_int = w * mu_g.sum(axis=1)
    phi_l = 1.0 - xi
    phi_r = xi
    m_ll = w * (mu_g * phi_l**2).sum(axis=1)
    m_rr = w * (mu_g * phi_r**2).sum(axis=1)
    m_lr = w * (mu_g * phi_l * phi_r).sum(axis=1)
    k_el = mu_int / h**2

    rows = np.concatenate([left, right, left, right])
    cols = np.concatenate([left, right, right, left])
    kvals = np.concatenate([k_el, k_el, -k_el, -k_el])
    mvals = np.concatenate([m_ll, m_rr, m_lr, m_lr])
    K = sp.csr_matrix((kvals, (rows, cols)), shape=(N, N))
    M = sp.csr_matrix((mvals, (rows, cols)), shape=(N, N))
    return WeightedOperator(N, r, _frozen(profile.mu(left * dth)), K, M, profile)


def cluster_ids(eigenvalues, rtol: float = CLUSTER_RTOL) -> np.ndarray:
    """Label runs of (ascending) eigenvalues whose neighbours agree to ``rtol``."""
    lam = np.asarray(eigenvalues, dtype=float)
    ids = np.zeros(len(lam), dtype=int)
    if len(lam) == 0:
        return ids
    floor = 1e-12 * max(1.0, float(np.abs(lam).max()))
    for j in range(1, len(lam)):
        a, b = lam[j - 1], lam[j]
        same = abs(b - a) <= max(rtol * max(abs(a), abs(b)), floor)
        ids[j] = ids[j - 1] + (0 if same else 1)
    return ids


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so that the first clearly nonzero entry is positive."""
    v = np.array(vectors, dtype=float, copy=True)
    for j in range(v.shape[1]):
        col = v[:, j]
        big = np.abs(col) > 1e-3 * np.abs(col).max()
        i = int(np.argmax(big))
        if col[i] < 0:
            v[:, j] = -col
    return v


@dataclass(frozen=True)
class SpectralDecomposition:
    """Ascending eigenvalues with b-orthonormal eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    clusters: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("eigenvalues", "eigenvectors"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        c = np.array(self.clusters, dtype=int, copy=True)
        c.flags.writeable = False
        object.__setattr__(self, "clusters", c)

    def __len__(self):
        return len(self.eigenvalues)

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.clusters)

    def cluster_boundaries(self) -> np.ndarray:
        """Counts nu such that lambda_nu and lambda_{nu+1} lie in different clusters."""
        return np.nonzero(np.diff(self.clusters))[0] + 1

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["j", "lambda", "cluster_id"])
        for j, (lam, c) in enumerate(zip(self.eigenvalues, self.clusters), start=1):
            w.writerow([j, f"{lam:.17g}", int(c)])
        return buf.getvalue()


def from_eigenvalues(eigenvalues, meta=None) -> SpectralDecomposition:
    """Decomposition carrying eigenvalues only (e.g. closed-form sphere spectra)."""
    lam = np.sort(np.asarray(eigenvalues, dtype=float))
    return SpectralDecomposition(lam, np.zeros((0, len(lam))), cluster_ids(lam), dict(meta or {}))


def solve_generalized(K, M, count: int, backend: str = "lapack"):
    """First ``count`` eigenpairs of K v = lambda M v for dense symmetric K, M."""
    K = np.asarray(K.toarray() if sp.issparse(K) else K, dtype=float)
    M = np.asarray(M.toarray() if sp.issparse(M) else M, dtype=float)
    n = K.shape[0]
    if not 1 <= count <= n:
        raise DomainError(f"count must lie in 1..{n}, got {count}")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("mass matrix is not positive definite") from exc
    if backend == "lapack":
        w, v = scipy.linalg.eigh(K, M, subset_by_index=[0, count - 1])
    elif backend == "ql":
        w, v = generalized_eigh_ql(K, M)
        w, v = w[:count], v[:, :count]
    else:
        raise ValueError(f"unknown eigensolver backend {backend!r}")
    return w, v


def eigendecompose(op: WeightedOperator, count: int, backend: str = "lapack") -> SpectralDecomposition:
    """First ``count`` eigenpairs of the weighted operator, b-orthonormal and sign-fixed."""
    w, v = solve_generalized(op.stiffness, op.mass, count, backend)
    v = fix_signs(v)
    meta = {"kind": "circle", "n_grid": op.n_grid, "radius": op.radius, "backend": backend}
    return SpectralDecomposition(w, v, cluster_ids(w), meta)


def strong_form_apply(u, op: WeightedOperator) -> np.ndarray:
    """Central differences of -(1/mu) (mu u')' in arc length, periodic.

    mu is taken from the profile at half nodes.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (op.n_grid,):
        raise DomainError(f"expected {op.n_grid} samples, got shape {u.shape}")
    dth = 2 * np.pi / op.n_grid
    mu_half = op.profile.mu((np.arange(op.n_grid) + 0.5) * dth)
    flux = mu_half * (np.roll(u, -1) - u) / op.h
    return -(flux - np.roll(flux, 1)) / (op.h * op.mu_nodes)


def self_convergence_error(profile: ThicknessProfile, geom: SphereGeometry, n_grid: int, count: int) -> np.ndarray:
    """Per-eigenvalue error estimate |lam_N - lam_{N/2}| / 3 (P1 eigenvalues converge at h^2)."""
    if n_grid % 2 or n_grid < 32:
        raise DomainError("self-convergence needs an even grid of at least 32 points")
    fine = solve_generalized(*_pair(profile, geom, n_grid), count)[0]
    coarse = solve_generalized(*_pair(profile, geom, n_grid // 2), count)[0]
    return np.abs(fine - coarse) / 3.0


def _pair(profile, geom, n_grid):
    op = assemble_circle_operator(profile, geom, n_grid)
    return op.stiffness, op.mass
