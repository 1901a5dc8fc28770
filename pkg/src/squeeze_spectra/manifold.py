"""Inertial-manifold reduction of u' + A u = G(u) in a truncated eigenbasis.

Everything works in b-orthonormal modal coordinates a in R^J: u = W a with
W the first J eigenvectors.  The slow part is a[:nu], the fast part a[nu:].
The manifold is the graph xi -> Lambda(xi) of the Lyapunov-Perron fixed
point, evaluated pointwise and in batches of xi.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import brentq

from .errors import CutSelectionError, DissipativityError, DomainError, GapViolationError
from .geometry import SphereGeometry, ThicknessProfile
from .spectral import SpectralDecomposition, assemble_circle_operator, eigendecompose
from .thin_domain import assemble_thin_operator, thin_spectrum


def chafee_infante(lam: float):
    """G(u) = lam u - u^3 and its derivative."""
    return (lambda u: lam * u - u**3), (lambda u: lam - 3 * u**2)


NONLINEARITIES = {"chafee_infante": chafee_infante}


def cutoff(x):
    """C^1 ramp: 1 on [0, 1], 0 on [2, inf), cubic Hermite in between."""
    x = np.asarray(x, dtype=float)
    s = np.clip(x - 1.0, 0.0, 1.0)
    return 1.0 - 3.0 * s**2 + 2.0 * s**3


@dataclass(frozen=True)
class Nonlinearity:
    """Scalar G with its Nemytskii operator and the globally Lipschitz truncation g."""

    G: Callable = field(repr=False)
    dG: Callable = field(repr=False)
    delta0: float
    beta: float
    R: float
    L: float
    growth_C: float = float("nan")
    absorbing_radius: float = float("nan")
    energy_radius: float = float("nan")

    def nemytskii(self, u):
        return self.G(np.asarray(u, dtype=float))

    def truncated(self, u, norm):
        """g(u) = cutoff(|u|_b / R) G(u); ``norm`` is |u|_b (one per row of u)."""
        u = np.asarray(u, dtype=float)
        theta = cutoff(np.asarray(norm, dtype=float) / self.R)
        return theta[..., None] * self.G(u) if u.ndim > 1 else theta * self.G(u)


def zero_nonlinearity() -> Nonlinearity:
    """g = 0; the graph collapses to the slow subspace."""
    return Nonlinearity(lambda u: np.zeros_like(u), lambda u: np.zeros_like(u), 1.0, 0.0, np.inf, 0.0)


class _Modal:
    """Galerkin projection of a nodal nonlinearity onto J b-orthonormal modes."""

    def __init__(self, basis, mass):
        self.basis = np.ascontiguousarray(basis)
        self.project = np.ascontiguousarray((mass @ basis).T)

    def __call__(self, G, a, R=np.inf):
        a = np.asarray(a, dtype=float)
        u = a @ self.basis.T
        val = G(u) @ self.project.T
        if np.isfinite(R):
            val = val * cutoff(np.linalg.norm(a, axis=-1) / R)[..., None]
        return val


def _modal_basis(decomp: SpectralDecomposition, J: int):
    if decomp.eigenvectors.shape[0] == 0:
        raise DomainError("decomposition carries no eigenvectors")
    if J > len(decomp):
        raise DomainError(f"need {J} modes, decomposition resolves {len(decomp)}")
    return decomp.eigenvalues[:J], decomp.eigenvectors[:, :J]


def _galerkin_run(lam, modal, G, a0, T, dt):
    """Semi-implicit Euler in modal coordinates; returns the b-norm history."""
    a = np.array(a0, dtype=float, copy=True)
    steps = int(round(T / dt))
    norms = np.empty((steps + 1,) + a.shape[:-1])
    norms[0] = np.linalg.norm(a, axis=-1)
    denom = 1.0 + dt * lam
    for k in range(1, steps + 1):
        a = (a + dt * modal(G, a)) / denom
        norms[k] = np.linalg.norm(a, axis=-1)
        if not np.all(np.isfinite(norms[k])) or norms[k].max() > 1e8:
            raise DissipativityError(f"Galerkin trajectory blew up at t = {k * dt:.3g}")
    return norms


def prepare_nonlinearity(
    G: Callable,
    dG: Callable,
    delta0: float,
    beta: float,
    decomp: SpectralDecomposition,
    mass,
    *,
    J: int | None = None,
    seed: int = 0,
    runs: int = 4,
    horizon: float = 10.0,
    dt: float = 0.005,
    lipschitz_samples: int = 64,
) -> Nonlinearity:
    """Check dissipativity and growth on samples, fix the cutoff radius R, estimate L.

    R is twice the absorbing radius observed on seeded Galerkin runs (never
    below the energy estimate R0 = sup{|s| : G(s)/s >= -delta0/2} |Omega|^{1/2}).
    L is the largest directional derivative of the truncated operator seen on
    random states in the 2.2 R ball.
    """
    if delta0 <= 0:
        raise DomainError("delta0 must be positive")
    s = np.logspace(-3, 6, 4000)
    s = np.concatenate([-s[::-1], s])
    with np.errstate(all="ignore"):
        q = np.asarray(G(s), dtype=float) / s
    holds = q >= -delta0 / 2
    if holds[0] or holds[-1] or not np.all(np.isfinite(q[[0, -1]])):
        worst = 0 if holds[0] else len(s) - 1
        raise DissipativityError(
            f"dissipativity proxy fails: G(s)/s = {q[worst]:.4g} > -delta0/2 = {-delta0 / 2:.4g} at s = {s[worst]:.4g}"
        )
    s_star = 0.0
    for idx in np.nonzero(holds[:-1] != holds[1:])[0]:
        # refine each sign change of G(s)/s + delta0/2 between samples
        a, b = s[idx], s[idx + 1]
        root = brentq(lambda x: float(G(np.array(x))) / x + delta0 / 2, a, b) if a * b > 0 else 0.0
        s_star = max(s_star, abs(root))

    J = len(decomp) if J is None else J
    lam, basis = _modal_basis(decomp, J)
    modal = _Modal(basis, mass)
    measure = float(np.ones(mass.shape[0]) @ (mass @ np.ones(mass.shape[0])))
    r0 = s_star * np.sqrt(measure)

    rng = np.random.default_rng(seed)
    a0 = rng.standard_normal((runs, J))
    a0 *= (2.0 * max(r0, 1.0) / np.linalg.norm(a0, axis=1))[:, None]
    norms = _galerkin_run(np.maximum(lam, 0.0), modal, G, a0, horizon, dt)
    absorbing = float(norms[len(norms) // 2 :].max())
    R = max(2.0 * absorbing, r0)
    if R <= 0:
        raise DomainError("cutoff radius came out zero")

    far = np.array([-10 * R, 10 * R])
    qf = np.asarray(G(far), dtype=float) / far
    if np.any(qf > -delta0 / 2):
        raise DissipativityError(f"G(s)/s = {qf.max():.4g} > -delta0/2 at |s| = 10R = {10 * R:.4g}")

    ss = np.linspace(-10 * R, 10 * R, 4001)
    ratio = np.abs(np.asarray(dG(ss), dtype=float)) / (1.0 + np.abs(ss) ** beta)
    growth_C = float(ratio.max())
    tail = lambda x: float(np.abs(dG(np.array([x, -x]))).max() / (1 + x**beta))  # noqa: E731
    if tail(10 * R) > 1.5 * tail(5 * R) + 1e-12:
        raise DomainError(f"|G'(s)| grows faster than C (1 + |s|^{beta}) on samples")

    nl = Nonlinearity(G, dG, float(delta0), float(beta), float(R), 0.0, growth_C, absorbing, r0)
    L = _estimate_lipschitz(modal, nl, J, rng, lipschitz_samples)
    return replace(nl, L=L)


def _estimate_lipschitz(modal, nl, J, rng, samples):
    dirs = rng.standard_normal((samples, J))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    radii = 2.2 * nl.R * rng.random(samples)
    base = rng.standard_normal((samples, J))
    base *= (radii / np.linalg.norm(base, axis=1))[:, None]
    base[0] = 0.0
    h = 1e-6 * max(1.0, nl.R)
    plus = modal(nl.G, base + h * dirs, nl.R)
    minus = modal(nl.G, base - h * dirs, nl.R)
    return float((np.linalg.norm(plus - minus, axis=1) / (2 * h)).max())


def snap_to_cluster_boundary(nu: int, decomp: SpectralDecomposition) -> int:
    """Move a cut that splits an eigenvalue cluster up to the end of that cluster."""
    if nu < 1 or nu >= len(decomp):
        raise DomainError(f"cut must lie in 1..{len(decomp) - 1}")
    c = decomp.clusters
    while nu < len(decomp) and c[nu] == c[nu - 1]:
        nu += 1
    if nu >= len(decomp):
        raise CutSelectionError("cluster at the cut extends past the resolved spectrum")
    return nu


def choose_cut(decomp: SpectralDecomposition, nl: Nonlinearity, K_gap: float = 2.0) -> int:
    """Smallest nu with lam_{nu+1} - lam_nu > K_gap L (lam_nu^{1/2} + lam_{nu+1}^{1/2} + 1).

    Only cuts between clusters are considered.
    """
    lam = np.maximum(np.asarray(decomp.eigenvalues, dtype=float), 0.0)
    for nu in decomp.cluster_boundaries():
        lo, hi = lam[nu - 1], lam[nu]
        if hi - lo > K_gap * nl.L * (np.sqrt(lo) + np.sqrt(hi) + 1.0):
            return int(nu)
    raise CutSelectionError(
        f"no cut satisfies the gap inequality among {len(lam)} eigenvalues; "
        "compute more eigenpairs or lower K_gap"
    )


@dataclass(frozen=True)
class ReducedModel:
    """Slow/fast splitting and Lyapunov-Perron settings for one operator."""

    nu: int
    eigenvalues: np.ndarray
    basis: np.ndarray = field(repr=False)
    mass: object = field(repr=False)
    T: float
    picard: int = 6
    steps: int = 400
    K_gap: float = 2.0

    @property
    def J(self) -> int:
        return len(self.eigenvalues)

    @property
    def gap(self) -> float:
        return float(self.eigenvalues[self.nu] - self.eigenvalues[self.nu - 1])

    def modal(self) -> _Modal:
        return _Modal(self.basis, self.mass)

    def embed(self, a):
        """Nodal values W a of modal coefficients."""
        return np.asarray(a) @ self.basis.T


def _snap_J(decomp: SpectralDecomposition, J: int) -> int:
    if J >= len(decomp):
        return len(decomp)
    c = decomp.clusters
    while J > 1 and c[J] == c[J - 1]:
        J -= 1
    return J


def build_reduced_model(
    decomp: SpectralDecomposition,
    mass,
    nl: Nonlinearity,
    *,
    nu: int | None = None,
    K_gap: float = 2.0,
    J: int | None = None,
    T: float | None = None,
    picard: int = 6,
    steps: int = 400,
) -> ReducedModel:
    """Pick (or snap) the cut, the fast truncation and the Lyapunov-Perron horizon."""
    nu = choose_cut(decomp, nl, K_gap) if nu is None else snap_to_cluster_boundary(int(nu), decomp)
    if J is None:
        J = _snap_J(decomp, max(4 * nu, 32))
    if J <= nu:
        raise DomainError("fast truncation J must exceed the cut nu")
    lam, basis = _modal_basis(decomp, J)
    if T is None:
        T = 8.0 / lam[nu]
    return ReducedModel(int(nu), np.array(lam), basis, mass, float(T), int(picard), int(steps), float(K_gap))


class LPResult(NamedTuple):
    fast: np.ndarray  # (J - nu,) or (B, J - nu)
    deltas: np.ndarray  # (picard,) or (picard, B): sup_s |w_{m+1}(s) - w_m(s)|
    ratios: np.ndarray  # successive delta ratios

    @property
    def max_ratio(self) -> float:
        r = self.ratios[np.isfinite(self.ratios)]
        return float(r.max()) if r.size else 0.0


def _lp_batch(xi, model: ReducedModel, nl: Nonlinearity):
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    B, nu = xi.shape
    if nu != model.nu:
        raise DomainError(f"xi must have {model.nu} components")
    lam = model.eigenvalues
    lam1, lam2 = lam[:nu], lam[nu:]
    if np.any(lam2 <= 0):
        raise GapViolationError("fast eigenvalues must be positive")
    modal = model.modal()
    n = model.steps
    h = model.T / n
    g = lambda a: modal(nl.G, a, nl.R)  # noqa: E731

    # exponential integrator weights for forcing linear on each step
    e = np.exp(-lam2 * h)
    phi_a = -np.expm1(-lam2 * h) / lam2
    phi_b = 1.0 / lam2 - phi_a / (lam2 * h)

    w = np.zeros((n + 1, B, model.J - nu))
    X = np.empty((n + 1, B, nu))
    deltas = []

    def slow_rhs(x, wf):
        return -lam1 * x + g(np.concatenate([x, wf], axis=-1))[..., :nu]

    for _ in range(model.picard):
        X[n] = xi
        for k in range(n, 0, -1):
            x = X[k]
            wk, wk1 = w[k], w[k - 1]
            wm = 0.5 * (wk + wk1)
            k1 = slow_rhs(x, wk)
            k2 = slow_rhs(x - 0.5 * h * k1, wm)
            k3 = slow_rhs(x - 0.5 * h * k2, wm)
            k4 = slow_rhs(x - h * k3, wk1)
            X[k - 1] = x - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        F = g(np.concatenate([X, w], axis=-1))[..., nu:]
        w_new = np.empty_like(w)
        w_new[0] = 0.0
        for k in range(n):
            w_new[k + 1] = e * w_new[k] + phi_a * F[k] + phi_b * (F[k + 1] - F[k])
        if not np.all(np.isfinite(w_new)):
            raise GapViolationError("Lyapunov-Perron iterate became non-finite")
        deltas.append(np.linalg.norm(w_new - w, axis=-1).max(axis=0))
        w = w_new
    deltas = np.array(deltas)
    # deltas at round-off level carry no contraction information
    floor = 1e-12 * np.maximum(1.0, np.abs(w).max(axis=(0, 2)))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(deltas[:-1] > floor, deltas[1:] / deltas[:-1], 0.0)
    if len(ratios) >= 2 and np.any((ratios[-1] > 1) & (ratios[-2] > 1) & (deltas[-1] > deltas[0])):
        raise GapViolationError(
            f"Picard iterates grow (last ratios {ratios[-2].max():.3g}, {ratios[-1].max():.3g}); "
            "the gap at the cut is too small for this nonlinearity"
        )
    return w[n], deltas, ratios


def lp_graph_eval(xi, model: ReducedModel, nl: Nonlinearity) -> LPResult:
    """Fast coefficients Lambda(xi) of the graph point over ``xi``.

    Iterates w_0 = 0; solve the slow system backward on [-T, 0] from xi with
    the fast part w_m; set w_{m+1}(t) = int_{-T}^t exp(-A_2 (t - s)) P_2 g ds.
    ``xi`` may be a single vector or a batch (B, nu).
    """
    single = np.ndim(xi) == 1
    fast, deltas, ratios = _lp_batch(xi, model, nl)
    if single:
        return LPResult(fast[0], deltas[:, 0], ratios[:, 0])
    return LPResult(fast, deltas, ratios)


def graph_point(xi, model: ReducedModel, nl: Nonlinearity) -> np.ndarray:
    """Full modal coefficients [xi, Lambda(xi)]; the slow block is xi verbatim."""
    xi = np.asarray(xi, dtype=float)
    fast = lp_graph_eval(xi, model, nl).fast
    return np.concatenate([xi, fast], axis=-1)


def reduced_field(xi, model: ReducedModel, nl: Nonlinearity) -> np.ndarray:
    """v(xi) = -A_1 xi + P_1 g(E xi + Lambda(xi))."""
    a = graph_point(xi, model, nl)
    gv = model.modal()(nl.G, a, nl.R)[..., : model.nu]
    return -model.eigenvalues[: model.nu] * np.asarray(xi, dtype=float) + gv


def reduced_jacobian(xi, model: ReducedModel, nl: Nonlinearity, step: float = 1e-4) -> np.ndarray:
    """Central-difference Jacobian dv/dxi (column j = d v / d xi_j), one batched solve."""
    xi = np.asarray(xi, dtype=float)
    nu = model.nu
    pts = np.concatenate([xi + step * np.eye(nu), xi - step * np.eye(nu)])
    v = reduced_field(pts, model, nl)
    return ((v[:nu] - v[nu:]) / (2 * step)).T


class InvarianceResult(NamedTuple):
    t: np.ndarray
    residual: np.ndarray
    coefficients: np.ndarray


def _rk4_galerkin(model, nl, a0, horizon, dt, every):
    lam = model.eigenvalues
    modal = model.modal()
    f = lambda a: -lam * a + modal(nl.G, a, nl.R)  # noqa: E731
    steps = int(round(horizon / dt))
    a = np.array(a0, dtype=float)
    ts, traj = [0.0], [a.copy()]
    for k in range(1, steps + 1):
        k1 = f(a)
        k2 = f(a + 0.5 * dt * k1)
        k3 = f(a + 0.5 * dt * k2)
        k4 = f(a + dt * k3)
        a = a + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if k % every == 0:
            ts.append(k * dt)
            traj.append(a.copy())
    return np.array(ts), np.array(traj)


def invariance_residual(
    model: ReducedModel, nl: Nonlinearity, xi0, horizon: float = 10.0, samples: int = 21, dt: float | None = None
) -> InvarianceResult:
    """Distance of the full J-mode flow from the graph, started on the graph over xi0.

    res(t) = |P_2 u(t) - Lambda(P_1 u(t))|_b at ``samples`` equally spaced times.
    """
    if dt is None:
        dt = min(0.01, 1.0 / float(model.eigenvalues[-1]))
    # shrink dt so that the sample times fall on the step grid
    every = int(np.ceil(horizon / (samples - 1) / dt))
    dt = horizon / ((samples - 1) * every)
    a0 = graph_point(np.asarray(xi0, dtype=float), model, nl)
    t, traj = _rk4_galerkin(model, nl, a0, horizon, dt, every)
    fast = lp_graph_eval(traj[:, : model.nu], model, nl).fast
    res = np.linalg.norm(traj[:, model.nu :] - fast, axis=1)
    return InvarianceResult(t, res, traj)


def reduced_trajectory(model: ReducedModel, nl: Nonlinearity, xi0, horizon: float, dt: float = 0.25):
    """RK4 on xi' = v(xi); returns (t, xi) arrays."""
    steps = int(round(horizon / dt))
    x = np.asarray(xi0, dtype=float)
    ts, xs = [0.0], [x.copy()]
    for k in range(1, steps + 1):
        k1 = reduced_field(x, model, nl)
        k2 = reduced_field(x + 0.5 * dt * k1, model, nl)
        k3 = reduced_field(x + 0.5 * dt * k2, model, nl)
        k4 = reduced_field(x + dt * k3, model, nl)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        ts.append(k * dt)
        xs.append(x.copy())
    return np.array(ts), np.array(xs)


# ---------------------------------------------------------------------------
# eps > 0 versus the limit


def match_thin_basis(thin_op, thin_decomp: SpectralDecomposition, limit_model: ReducedModel):
    """Rescale and rotate thin eigenvectors onto the limit slow/fast basis.

    Thin eigenvectors are M_eps-orthonormal; multiplying by sqrt(eps) makes
    them orthonormal for M_eps / eps, which tends to b_mu.  Within every
    limit cluster an orthogonal Procrustes rotation aligns the transverse
    averages with the limit eigenvectors.  Returns (basis, mass, max angle).
    """
    J = limit_model.J
    eps = thin_op.eps
    basis = np.array(thin_decomp.eigenvectors[:, :J]) * np.sqrt(eps)
    mass = thin_op.mass / eps
    avg = thin_op.transverse_average(basis)
    cross = limit_model.basis.T @ (limit_model.mass @ avg)
    clusters = _limit_clusters(limit_model)
    max_angle = 0.0
    for block in clusters:
        c = cross[np.ix_(block, block)]
        u, s, vt = np.linalg.svd(c)
        q = vt.T @ u.T
        basis[:, block] = basis[:, block] @ q
        norms = np.sqrt(np.einsum("ij,ij->j", avg[:, block], limit_model.mass @ avg[:, block]))
        cosines = np.clip(s / norms.max(), -1.0, 1.0)
        max_angle = max(max_angle, float(np.arccos(cosines.min())))
    return basis, mass, max_angle


def _limit_clusters(model: ReducedModel):
    from .spectral import cluster_ids

    ids = cluster_ids(model.eigenvalues)
    return [np.nonzero(ids == c)[0] for c in np.unique(ids)]


def compare_reduced_fields(
    profile: ThicknessProfile,
    geom: SphereGeometry,
    nl: Nonlinearity,
    eps: float,
    nu: int,
    xis,
    *,
    n_theta: int = 256,
    n_s: int = 4,
    J: int = 31,
    T: float | None = None,
    picard: int = 6,
    steps: int = 400,
    fd_step: float = 1e-4,
    limit_model: ReducedModel | None = None,
) -> list[dict]:
    """|v_eps(xi) - v_0(xi)| and sum_j |d_j v_eps(xi) - d_j v_0(xi)| for each xi."""
    if limit_model is None:
        op0 = assemble_circle_operator(profile, geom, n_theta)
        dec0 = eigendecompose(op0, J)
        limit_model = build_reduced_model(dec0, op0.mass, nl, nu=nu, J=J, T=T, picard=picard, steps=steps)
    thin_op = assemble_thin_operator(profile, geom, eps, n_theta, n_s)
    dec_e = thin_spectrum(thin_op, limit_model.J)
    basis, mass, angle = match_thin_basis(thin_op, dec_e, limit_model)
    thin_model = replace(
        limit_model, eigenvalues=np.array(dec_e.eigenvalues[: limit_model.J]), basis=basis, mass=mass
    )
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    f0, j0 = _fields_and_jacobians(xis, limit_model, nl, fd_step)
    fe, je = _fields_and_jacobians(xis, thin_model, nl, fd_step)
    out = []
    for i, xi in enumerate(xis):
        fd = float(np.linalg.norm(fe[i] - f0[i]))
        jd = float(np.linalg.norm(je[i] - j0[i], axis=0).sum())
        out.append(
            {
                "eps": float(eps),
                "xi": xi.tolist(),
                "field_discrepancy": fd,
                "jacobian_discrepancy": jd,
                "total": fd + jd,
                "max_subspace_angle": angle,
            }
        )
    return out


def _fields_and_jacobians(xis, model, nl, step):
    """v and central-difference dv/dxi at every row of xis, in one batched solve."""
    B, nu = xis.shape
    eye = step * np.eye(nu)
    pts = np.concatenate([xis[:, None, :], xis[:, None, :] + eye, xis[:, None, :] - eye], axis=1)
    v = reduced_field(pts.reshape(-1, nu), model, nl).reshape(B, 2 * nu + 1, nu)
    jac = ((v[:, 1 : nu + 1] - v[:, nu + 1 :]) / (2 * step)).transpose(0, 2, 1)
    return v[:, 0], jac
