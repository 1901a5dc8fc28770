"""Neumann Laplacian on the thin annular strip Omega_eps around S^1(r).

Omega_eps = {r + eps c(theta) < rho < r + eps d(theta)} is parametrised by the
logical rectangle (theta, t) in [0, 2 pi) x [0, 1] through
rho = r + eps (c(theta) + t mu(theta)).  Bilinear (Q1) elements on the
rectangle, periodic in theta, are pulled back through that map.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, FactorizationError, GeometryError, IntegrationError
from .geometry import SphereGeometry, ThicknessProfile
from .spectral import (
    SpectralDecomposition,
    assemble_circle_operator,
    cluster_ids,
    eigendecompose,
    fix_signs,
    solve_generalized,
)

DENSE_LIMIT = 2500
BLOWUP_NORM = 1e6

_G = 0.5 * (np.array([-1.0, 1.0]) / np.sqrt(3.0) + 1.0)  # Gauss points on [0, 1]


@dataclass(frozen=True)
class ThinDomainOperator:
    eps: float
    n_theta: int
    n_s: int
    radius: float
    profile: ThicknessProfile = field(repr=False)
    stiffness: sp.csr_matrix = field(repr=False)
    mass: sp.csr_matrix = field(repr=False)

    @property
    def size(self) -> int:
        return self.n_theta * (self.n_s + 1)

    def logical_nodes(self):
        """(theta, t) per node; node (i, k) has index i * (n_s + 1) + k."""
        theta = 2 * np.pi * np.arange(self.n_theta) / self.n_theta
        t = np.linspace(0.0, 1.0, self.n_s + 1)
        return np.repeat(theta, self.n_s + 1), np.tile(t, self.n_theta)

    def radii(self) -> np.ndarray:
        theta, t = self.logical_nodes()
        p = self.profile
        return self.radius + self.eps * (p.c(theta) + t * p.mu(theta))

    def transverse_average(self, u) -> np.ndarray:
        """Trapezoid mean over t of a nodal function, one value per angle."""
        u = np.asarray(u).reshape(self.n_theta, self.n_s + 1, *np.shape(u)[1:])
        w = np.full(self.n_s + 1, 1.0 / self.n_s)
        w[[0, -1]] *= 0.5
        return np.tensordot(w, u, axes=([0], [1]))


def _check_bijective(profile: ThicknessProfile, r: float, eps: float):
    if not (0.0 < eps <= 1.0):
        raise DomainError(f"eps must lie in ]0, 1], got {eps}")
    theta = np.linspace(0, 2 * np.pi, 2048, endpoint=False)
    span = np.abs(profile.c(theta)).max() + np.abs(profile.d(theta)).max()
    if eps * span >= r / 2:
        raise GeometryError(
            f"eps (max|c| + max|d|) = {eps * span:.4g} must stay below r/2 = {r / 2:.4g}"
        )


def _q1_local():
    """Reference Q1 shape functions and derivatives at the 2x2 Gauss points.

    Local node order: (0,0), (1,0), (0,1), (1,1) in (theta, t).
    """
    gx, gy = np.meshgrid(_G, _G, indexing="ij")
    gx, gy = gx.ravel(), gy.ravel()
    n = np.stack([(1 - gx) * (1 - gy), gx * (1 - gy), (1 - gx) * gy, gx * gy], axis=1)
    dx = np.stack([-(1 - gy), (1 - gy), -gy, gy], axis=1)
    dy = np.stack([-(1 - gx), -gx, (1 - gx), gx], axis=1)
    return gx, gy, n, dx, dy


def _cell_connectivity(n_theta: int, n_s: int) -> np.ndarray:
    i = np.arange(n_theta)
    k = np.arange(n_s)
    ii, kk = np.meshgrid(i, k, indexing="ij")
    ii, kk = ii.ravel(), kk.ravel()
    ip = (ii + 1) % n_theta
    m = n_s + 1
    return np.stack([ii * m + kk, ip * m + kk, ii * m + kk + 1, ip * m + kk + 1], axis=1)


def _assemble(n_theta, n_s, weights_grad, weights_mass, dtheta, dt):
    """Generic Q1 assembly from per-(cell, gauss) metric data.

    ``weights_grad``: (cells, gauss, 2, 2) symmetric tensor G with
    K_ab = sum w G_ij dN_a/dq_i dN_b/dq_j over logical coordinates q.
    ``weights_mass``: (cells, gauss) scalar density for the mass matrix.
    """
    _, _, n, dx, dy = _q1_local()
    dq = np.stack([dx / dtheta, dy / dt], axis=-1)  # (gauss, 4, 2)
    w_ref = 0.25 * dtheta * dt
    k_loc = np.einsum("cgij,gai,gbj->cab", weights_grad, dq, dq) * w_ref
    m_loc = np.einsum("cg,ga,gb->cab", weights_mass, n, n) * w_ref
    conn = _cell_connectivity(n_theta, n_s)
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    size = n_theta * (n_s + 1)
    K = sp.csr_matrix((k_loc.ravel(), (rows, cols)), shape=(size, size))
    M = sp.csr_matrix((m_loc.ravel(), (rows, cols)), shape=(size, size))
    K = 0.5 * (K + K.T)
    M = 0.5 * (M + M.T)
    return K.tocsr(), M.tocsr()


def assemble_thin_operator(
    profile: ThicknessProfile, geom: SphereGeometry, eps: float, n_theta: int, n_s: int = 8
) -> ThinDomainOperator:
    """Q1 stiffness and mass for int grad u . grad v dx on Omega_eps (natural Neumann)."""
    if geom.n != 2:
        raise DomainError("thin domains are assembled around the circle (n = 2) only")
    if n_theta < 64 or n_s < 2:
        raise DomainError("need n_theta >= 64 and n_s >= 2")
    _check_bijective(profile, geom.r, eps)
    r = geom.r
    dtheta = 2 * np.pi / n_theta
    dt = 1.0 / n_s
    gx, gy, *_ = _q1_local()
    ii, kk = np.meshgrid(np.arange(n_theta), np.arange(n_s), indexing="ij")
    theta = (ii.ravel()[:, None] + gx[None, :]) * dtheta
    t = (kk.ravel()[:, None] + gy[None, :]) * dt

    c, c1 = profile.c(theta), profile.c(theta, 1)
    mu, mu1 = profile.mu(theta), profile.mu(theta, 1)
    rho = r + eps * (c + t * mu)
    rho_th = eps * (c1 + t * mu1)
    rho_t = eps * mu
    # Jacobian of (theta, t) -> x in the orthonormal frame (e_rho, e_theta)
    jac = np.empty(theta.shape + (2, 2))
    jac[..., 0, 0] = rho_th
    jac[..., 0, 1] = rho_t
    jac[..., 1, 0] = rho
    jac[..., 1, 1] = 0.0
    det = np.abs(np.linalg.det(jac))
    if np.any(det <= 0):
        raise GeometryError("degenerate coordinate map")
    jinv = np.linalg.inv(jac)
    metric = np.einsum("...ik,...jk->...ij", jinv, jinv) * det[..., None, None]
    K, M = _assemble(n_theta, n_s, metric, det, dtheta, dt)
    return ThinDomainOperator(float(eps), int(n_theta), int(n_s), r, profile, K, M)


def assemble_annulus_polar(r_in: float, r_out: float, n_theta: int, n_s: int):
    """Reference assembly on the plain annulus directly in polar coordinates (theta, rho).

    Uses grad u = (u_rho, u_theta / rho) and the area element rho drho dtheta.
    Node numbering matches :func:`assemble_thin_operator`.
    """
    dtheta = 2 * np.pi / n_theta
    drho = (r_out - r_in) / n_s
    gx, gy, n, dx, dy = _q1_local()
    ii, kk = np.meshgrid(np.arange(n_theta), np.arange(n_s), indexing="ij")
    rho = r_in + (kk.ravel()[:, None] + gy[None, :]) * drho
    size = n_theta * (n_s + 1)
    conn = _cell_connectivity(n_theta, n_s)
    w = 0.25 * dtheta * drho
    k_loc = np.zeros((conn.shape[0], 4, 4))
    m_loc = np.zeros((conn.shape[0], 4, 4))
    for g in range(4):
        d_theta = dx[g] / dtheta
        d_rho = dy[g] / drho
        rr = rho[:, g][:, None, None]
        k_loc += w * rr * (np.outer(d_rho, d_rho)[None] + np.outer(d_theta, d_theta)[None] / rr**2)
        m_loc += w * rr * np.outer(n[g], n[g])[None]
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    K = sp.csr_matrix((k_loc.ravel(), (rows, cols)), shape=(size, size))
    M = sp.csr_matrix((m_loc.ravel(), (rows, cols)), shape=(size, size))
    return K, M


def thin_spectrum(op: ThinDomainOperator, count: int) -> SpectralDecomposition:
    """Lowest ``count`` eigenpairs of (K_eps, M_eps), M_eps-orthonormal and sign-fixed."""
    if not 1 <= count < op.size:
        raise DomainError(f"count must lie in 1..{op.size - 1}")
    if op.size <= DENSE_LIMIT:
        w, v = solve_generalized(op.stiffness, op.mass, count)
    else:
        # shift-invert about a small negative shift keeps (K - sigma M) definite
        sigma = -1e-3 * abs(op.stiffness.diagonal()).min() / max(op.mass.diagonal().max(), 1e-300)
        sigma = min(sigma, -1e-8)
        try:
            w, v = spla.eigsh(op.stiffness, k=count, M=op.mass.tocsc(), sigma=sigma, which="LM")
        except RuntimeError as exc:
            raise FactorizationError(str(exc)) from exc
        order = np.argsort(w)
        w, v = w[order], v[:, order]
        # re-orthonormalise within clusters against M
        g = v.T @ (op.mass @ v)
        l = np.linalg.cholesky(0.5 * (g + g.T))
        v = np.linalg.solve(l, v.T).T
    v = fix_signs(v)
    meta = {
        "kind": "thin",
        "eps": op.eps,
        "n_theta": op.n_theta,
        "n_s": op.n_s,
        "radius": op.radius,
    }
    return SpectralDecomposition(w, v, cluster_ids(w), meta)


def _relative_error(lam_eps: float, lam_lim: float, floor: float) -> float:
    if abs(lam_lim) <= floor and abs(lam_eps) <= floor:
        return 0.0
    return abs(lam_eps - lam_lim) / max(abs(lam_lim), floor)


def convergence_study(
    profile: ThicknessProfile,
    geom: SphereGeometry,
    eps_list,
    j_max: int = 10,
    n_theta: int = 512,
    n_s: int = 8,
    workers: int = 1,
) -> list[dict]:
    """Relative distance of thin-domain eigenvalues to the limit spectrum, per (eps, j).

    The limit spectrum is the P1 spectrum of A_mu on the same angular grid, so
    angular discretisation error is common to both and the table isolates
    the effect of finite thickness.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise DomainError("eps list must be strictly descending")
    limit = eigendecompose(assemble_circle_operator(profile, geom, n_theta), j_max).eigenvalues
    floor = 1e-9 * max(1.0, float(abs(limit).max()))

    def job(eps):
        op = assemble_thin_operator(profile, geom, eps, n_theta, n_s)
        return thin_spectrum(op, j_max).eigenvalues

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            spectra = list(pool.map(job, eps_list))
    else:
        spectra = [job(e) for e in eps_list]
    rows = []
    for eps, lam in zip(eps_list, spectra):
        for j in range(j_max):
            rows.append(
                {
                    "eps": eps,
                    "j": j + 1,
                    "lambda_eps": float(lam[j]),
                    "lambda_limit": float(limit[j]),
                    "rel_err": _relative_error(lam[j], limit[j], floor),
                }
            )
    return rows


def convergence_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eps", "j", "lambda_eps", "lambda_limit", "rel_err"])
    for row in rows:
        w.writerow(
            [
                f"{row['eps']:.17g}",
                row["j"],
                f"{row['lambda_eps']:.17g}",
                f"{row['lambda_limit']:.17g}",
                f"{row['rel_err']:.17g}",
            ]
        )
    return buf.getvalue()


@dataclass
class Trajectory:
    t: np.ndarray
    norm: np.ndarray
    umin: np.ndarray
    umax: np.ndarray
    energy: np.ndarray
    snapshots: dict = field(default_factory=dict)
    final: np.ndarray | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "norm", "min", "max"])
        for row in zip(self.t, self.norm, self.umin, self.umax):
            w.writerow([f"{x:.17g}" for x in row])
        return buf.getvalue()


def simulate(
    op,
    nonlinearity: Callable | None,
    u0,
    T: float,
    dt: float,
    sample_every: int = 1,
    snapshot_times=(),
) -> Trajectory:
    """Semi-implicit Euler for M u' + K u = M G(u): (M + dt K) u+ = M (u + dt G(u)).

    Works for any operator exposing sparse ``stiffness`` and ``mass``.  The
    mass-weighted norm, min, max and the energy u^T K u are recorded every
    ``sample_every`` steps.
    """
    K, M = op.stiffness, op.mass
    u = np.array(u0, dtype=float, copy=True)
    if u.shape != (K.shape[0],):
        raise DomainError(f"u0 must have {K.shape[0]} entries")
    if dt <= 0 or T <= 0:
        raise DomainError("need T > 0 and dt > 0")
    steps = int(round(T / dt))
    solve = spla.factorized((M + dt * K).tocsc())
    snaps = sorted(float(s) for s in snapshot_times)
    out_t, out_n, out_lo, out_hi, out_e = [], [], [], [], []
    snapshots = {}

    def record(t):
        out_t.append(t)
        out_n.append(float(np.sqrt(u @ (M @ u))))
        out_lo.append(float(u.min()))
        out_hi.append(float(u.max()))
        out_e.append(float(u @ (K @ u)))

    record(0.0)
    for step in range(1, steps + 1):
        rhs = u if nonlinearity is None else u + dt * np.asarray(nonlinearity(u), dtype=float)
        u = solve(M @ rhs)
        t = step * dt
        norm = float(np.sqrt(abs(u @ (M @ u))))
        if not np.isfinite(norm) or norm > BLOWUP_NORM:
            raise IntegrationError(f"norm {norm:.3g} at t = {t:.4g}: blow-up (non-dissipative G or dt too large)")
        if step % sample_every == 0 or step == steps:
            record(t)
        while snaps and t >= snaps[0] - 0.5 * dt:
            snapshots[snaps.pop(0)] = u.copy()
    return Trajectory(
        np.array(out_t), np.array(out_n), np.array(out_lo), np.array(out_hi), np.array(out_e), snapshots, u
    )
