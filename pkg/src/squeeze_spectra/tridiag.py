"""Dense symmetric eigensolver: Householder tridiagonalisation + implicit QL.

Used as the self-contained backend of :func:`squeeze_spectra.spectral.eigendecompose`
and as an independent check of the LAPACK path.  Complexity is O(N^3) with
a Python-level loop over rotations, so it is meant for N up to a few hundred.
"""
import numpy as np


def householder_tridiagonalize(a):
    """Reduce symmetric ``a`` to tridiagonal form, ``a = Z T Z^T``.

    Returns (diagonal, offdiagonal, Z) with ``offdiagonal[i] = T[i, i+1]``.
    """
    a = np.array(a, dtype=float, copy=True)
    n = a.shape[0]
    z = np.eye(n)
    for k in range(n - 2):
        x = a[k + 1 :, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        if x[0] > 0:
            alpha = -alpha
        v = x.copy()
        v[0] -= alpha
        vnorm2 = v @ v
        if vnorm2 == 0.0:
            continue
        v /= np.sqrt(vnorm2)
        # two-sided reflection on the trailing block, H = I - 2 v v^T
        sub = a[k + 1 :, k + 1 :]
        p = sub @ v
        kk = v @ p
        q = p - kk * v
        sub -= 2.0 * (np.outer(v, q) + np.outer(q, v))
        a[k + 1 :, k] = 0.0
        a[k, k + 1 :] = 0.0
        a[k + 1, k] = a[k, k + 1] = alpha
        z[:, k + 1 :] -= 2.0 * np.outer(z[:, k + 1 :] @ v, v)
    return np.diag(a).copy(), np.diag(a, 1).copy(), z


def tridiagonal_ql(d, e, z=None, max_sweeps=60):
    """Implicit QL with Wilkinson shifts on the tridiagonal (d, e).

    ``z`` (if given) is updated in place with the accumulated rotations so
    that on exit its columns are the eigenvectors.  Eigenvalues are returned
    unsorted, as in the classical ``tqli``.
    """
    d = np.array(d, dtype=float, copy=True)
    n = len(d)
    e = np.append(np.array(e, dtype=float, copy=True), 0.0)
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= np.finfo(float).eps * dd:
                    break
                m += 1
            if m == l:
                break
            it += 1
            if it > max_sweeps:
                raise np.linalg.LinAlgError("implicit QL did not converge")
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            rr = np.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + np.copysign(rr, g))
            s = c = 1.0
            p = 0.0
            i = m - 1
            underflow = False
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                rr = np.hypot(f, g)
                e[i + 1] = rr
                if rr == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / rr
                c = g / rr
                g = d[i + 1] - p
                rr = (d[i] - g) * s + 2.0 * c * b
                p = s * rr
                d[i + 1] = g + p
                g = c * rr - b
                if z is not None:
                    zi1 = z[:, i + 1].copy()
                    z[:, i + 1] = s * z[:, i] + c * zi1
                    z[:, i] = c * z[:, i] - s * zi1
                i -= 1
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return d


def eigh_ql(a):
    """Ascending eigenvalues and orthonormal eigenvectors of symmetric ``a``."""
    d, e, z = householder_tridiagonalize(a)
    w = tridiagonal_ql(d, e, z)
    order = np.argsort(w, kind="stable")
    return w[order], z[:, order]


def generalized_eigh_ql(k, m):
    """Solve K v = lambda M v through the Cholesky factor of M."""
    chol = np.linalg.cholesky(m)
    linv = np.linalg.inv(chol)
    c = linv @ k @ linv.T
    c = 0.5 * (c + c.T)
    w, y = eigh_ql(c)
    return w, linv.T @ y
