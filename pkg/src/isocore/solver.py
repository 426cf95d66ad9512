"""Estimation of isometric functional maps between eigenbasis coefficients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, DomainError, UsageError
from .linalg import polar_factor, procrustes_project

FUZZY = "fuzzy"
HARD = "hard"


@dataclass(frozen=True)
class EigenvalueMask:
    matrix: Tensor
    mode: str
    tolerance: float | None = None


@dataclass(frozen=True)
class IsometricMap:
    tau_basis: Tensor
    mask_mode: str

    @property
    def k(self) -> int:
        return self.tau_basis.shape[0]


def _values(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def eigenvalue_groups(eigvals, tol: float) -> list[np.ndarray]:
    """Indices grouped by near-equal eigenvalue.

    Eigenvalues are sorted and neighbours closer than ``tol`` are merged, so a
    chain of small gaps forms a single group. Groups come back in ascending
    eigenvalue order, each with its indices ascending.
    """
    lam = _values(eigvals)
    if lam.size == 0:
        return []
    order = np.argsort(lam, kind="stable")
    breaks = np.nonzero(np.diff(lam[order]) >= tol)[0] + 1
    return [np.sort(g) for g in np.split(order, breaks)]


def count_distinct(eigvals, tol: float) -> int:
    return len(eigenvalue_groups(eigvals, tol))


def eigenvalue_mask(eigvals, mode: str = FUZZY, tol: float = 1e-6) -> EigenvalueMask:
    lam = ad.as_tensor(eigvals)
    if lam.ndim != 1:
        raise DimensionError(f"eigenvalues must be a vector, got shape {lam.shape}")
    if np.any(lam.data < 0):
        raise DomainError("eigenvalues must be non-negative")
    k = lam.shape[0]
    if mode == FUZZY:
        col = ad.reshape(lam, (k, 1))
        ones = Tensor(np.ones((1, k)))
        gaps = ad.matmul(col, ones) - ad.matmul(ad.transpose(ones), ad.transpose(col))
        return EigenvalueMask(ad.exp(-ad.abs(gaps)), FUZZY)
    if mode == HARD:
        mat = np.zeros((k, k))
        for g in eigenvalue_groups(lam, tol):
            mat[np.ix_(g, g)] = 1.0
        return EigenvalueMask(Tensor(mat), HARD, tol)
    raise UsageError(f"unknown mask mode {mode!r}")


def _check_pair(ca: Tensor, cb: Tensor, k: int | None = None) -> None:
    if ca.ndim != 2 or ca.shape != cb.shape:
        raise DimensionError(f"coefficient shapes differ: {ca.shape} vs {cb.shape}")
    if k is not None and ca.shape[0] != k:
        raise DimensionError(f"coefficients have {ca.shape[0]} rows, mask is {k} x {k}")


def estimate_map(ca, cb, mask: EigenvalueMask) -> IsometricMap:
    """Masked Procrustes solve for the map sending ``ca`` towards ``cb``."""
    ca, cb = ad.as_tensor(ca), ad.as_tensor(cb)
    _check_pair(ca, cb, mask.matrix.shape[0])
    cross = ad.matmul(cb, ad.transpose(ca))
    return IsometricMap(procrustes_project(ad.mul(mask.matrix, cross)), mask.mode)


def exact_block_solve(ca, cb, eigvals, tol: float = 1e-6) -> IsometricMap:
    """Exact orthogonal, eigenvalue-commuting least-squares solution.

    Solves one Procrustes problem per group of equal eigenvalues and
    assembles the block-diagonal result. Forward only.
    """
    a, b = _values(ca), _values(cb)
    lam = _values(eigvals)
    if a.ndim != 2 or a.shape != b.shape:
        raise DimensionError(f"coefficient shapes differ: {a.shape} vs {b.shape}")
    if lam.shape != (a.shape[0],):
        raise DimensionError(f"{lam.shape[0] if lam.ndim else 0} eigenvalues for {a.shape[0]} coefficient rows")
    k = a.shape[0]
    tau = np.zeros((k, k))
    for g in eigenvalue_groups(lam, tol):
        tau[np.ix_(g, g)] = polar_factor(b[g] @ a[g].T)
    return IsometricMap(Tensor(tau), HARD)


def commutator_residual(tau, eigvals) -> float:
    t = _values(tau.tau_basis if isinstance(tau, IsometricMap) else tau)
    lam = _values(eigvals)
    return float(np.linalg.norm(t * lam[None, :] - lam[:, None] * t))


def orthogonality_residual(tau) -> float:
    t = _values(tau.tau_basis if isinstance(tau, IsometricMap) else tau)
    return float(np.linalg.norm(t.T @ t - np.eye(t.shape[1])))


def invert_map(m: IsometricMap) -> IsometricMap:
    return IsometricMap(ad.transpose(m.tau_basis), m.mask_mode)


def offdiag_fraction(tau) -> float:
    """Share of squared Frobenius mass off the main diagonal."""
    t = _values(tau.tau_basis if isinstance(tau, IsometricMap) else tau)
    total = float(np.sum(t * t))
    if total == 0.0:
        return 0.0
    return 1.0 - float(np.sum(np.diag(t) ** 2)) / total


def off_block_fraction(tau, eigvals, tol: float) -> float:
    """Share of squared Frobenius mass outside the eigenvalue blocks at ``tol``."""
    t = _values(tau.tau_basis if isinstance(tau, IsometricMap) else tau)
    total = float(np.sum(t * t))
    if total == 0.0:
        return 0.0
    inside = 0.0
    for g in eigenvalue_groups(eigvals, tol):
        inside += float(np.sum(t[np.ix_(g, g)] ** 2))
    return 1.0 - inside / total
