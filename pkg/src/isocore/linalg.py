"""Small dense SVD and the nearest-orthogonal-matrix projection.

The SVD is a cyclic one-sided (Hestenes) Jacobi iteration compiled with
numba. It is sequential and deterministic; results depend only on the input.
"""

from __future__ import annotations

import numba
import numpy as np

from . import autodiff as ad
from .errors import DimensionError, NumericalError

JACOBI_TOL = 1e-12
SIGMA_CLAMP = 1e-8


@numba.njit(cache=True)
def _jacobi_sweeps(wt, vt, tol, cap):
    """Cyclic one-sided Jacobi on the rows of ``wt`` (columns of the input).

    Returns the number of sweeps used, or -1 when ``cap`` is exhausted.
    """
    n, m = wt.shape
    for sweep in range(1, cap + 1):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(m):
                    x = wt[p, i]
                    y = wt[q, i]
                    alpha += x * x
                    beta += y * y
                    gamma += x * y
                if abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                sgn = 1.0 if zeta >= 0.0 else -1.0
                t = sgn / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for i in range(m):
                    x = wt[p, i]
                    y = wt[q, i]
                    wt[p, i] = c * x - s * y
                    wt[q, i] = s * x + c * y
                for i in range(n):
                    x = vt[p, i]
                    y = vt[q, i]
                    vt[p, i] = c * x - s * y
                    vt[q, i] = s * x + c * y
        if not rotated:
            return sweep
    return -1


def _complete_basis(u: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace columns of ``u`` not flagged ``good`` by an orthonormal completion."""
    m, n = u.shape
    basis = [u[:, j] for j in range(n) if good[j]]
    out = u.copy()
    candidates = iter(np.eye(m))
    for j in range(n):
        if good[j]:
            continue
        while True:
            v = next(candidates).copy()
            for _ in range(2):
                for b in basis:
                    v -= (b @ v) * b
            nv = np.linalg.norm(v)
            if nv > 1e-6:
                v /= nv
                break
        basis.append(v)
        out[:, j] = v
    return out


def svd(a, tol: float = JACOBI_TOL, max_sweeps: int | None = None):
    """Thin SVD ``a = U diag(S) V^T`` of a real matrix.

    Returns numpy arrays; singular values are sorted in descending order.
    For an m x n input with m >= n, U is m x n and V is n x n.
    Raises NumericalError if the sweep cap (default 100 n) is exhausted.
    """
    a = np.asarray(a.data if isinstance(a, ad.Tensor) else a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"svd expects a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError("svd input contains non-finite entries", iterations=0)
    m, n = a.shape
    if m < n:
        u, s, v = svd(a.T, tol=tol, max_sweeps=max_sweeps)
        return v, s, u

    wt = np.array(a.T, dtype=np.float64, order="C", copy=True)
    vt = np.eye(n)
    cap = 100 * n if max_sweeps is None else max_sweeps
    if n and _jacobi_sweeps(wt, vt, tol, cap) < 0:
        raise NumericalError(f"Jacobi SVD did not converge within {cap} sweeps", iterations=cap)
    w, v = wt.T, vt.T

    sig = np.sqrt(np.einsum("ij,ij->j", w, w))
    order = np.argsort(-sig, kind="stable")
    sig, w, v = sig[order], w[:, order], v[:, order]
    floor = max(m, n) * np.finfo(np.float64).eps * (sig[0] if n else 0.0)
    good = sig > floor
    u = np.zeros_like(w)
    u[:, good] = w[:, good] / sig[good]
    if not good.all():
        u = _complete_basis(u, good)
    return u, sig, v


def polar_factor(a) -> np.ndarray:
    """Forward-only nearest orthogonal (or orthonormal-column) matrix."""
    u, _, v = svd(a)
    return u @ v.T


def procrustes_project(a) -> ad.Tensor:
    """Nearest matrix with orthonormal columns, ``U V^T``, differentiable.

    Works for square and tall inputs. In the backward pass the denominators
    sigma_i + sigma_j (and sigma_i for the tall-matrix term) are clamped below
    by 1e-8, which biases gradients near rank deficiency instead of failing.
    """
    a = ad.as_tensor(a)
    if a.ndim != 2 or a.shape[0] < a.shape[1]:
        raise DimensionError(f"procrustes_project expects a square or tall matrix, got {a.shape}")
    u, s, v = svd(a.data)
    q = u @ v.T
    square = a.shape[0] == a.shape[1]

    def bw(g):
        gh = u.T @ g @ v
        denom = np.maximum(s[:, None] + s[None, :], SIGMA_CLAMP)
        k = (gh - gh.T) / denom
        grad = u @ k @ v.T
        if not square:
            resid = g - u @ (u.T @ g)
            grad = grad + (resid @ v) / np.maximum(s, SIGMA_CLAMP) @ v.T
        return (grad,)

    return ad.custom("procrustes_project", (a,), q, bw)
