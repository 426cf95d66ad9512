"""Learned diagonal mass matrix and spectrally parameterized operator.

The operator is stored as ``Omega = Phi diag(lam) Phi^T M`` with
``Phi^T M Phi = I``. Raw parameters are unconstrained; :func:`realize` maps
them to a valid (mass, basis, eigenvalue) triple on the autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError, DimensionError
from .linalg import procrustes_project


@dataclass
class SpectralOperatorParams:
    raw_mass: Parameter
    raw_basis: Parameter
    raw_eigvals: Parameter

    @property
    def n(self) -> int:
        return self.raw_basis.shape[0]

    @property
    def k(self) -> int:
        return self.raw_basis.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.raw_mass, self.raw_basis, self.raw_eigvals]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    @classmethod
    def from_arrays(cls, raw_mass, raw_basis, raw_eigvals) -> "SpectralOperatorParams":
        raw_mass = np.asarray(raw_mass, dtype=np.float64)
        raw_basis = np.asarray(raw_basis, dtype=np.float64)
        raw_eigvals = np.asarray(raw_eigvals, dtype=np.float64)
        if raw_basis.ndim != 2:
            raise DimensionError(f"raw_basis must be a matrix, got shape {raw_basis.shape}")
        n, k = raw_basis.shape
        if k > n:
            raise ConfigError(f"spectral rank k={k} exceeds grid size n={n}")
        if raw_mass.shape != (n,) or raw_eigvals.shape != (k,):
            raise DimensionError(
                f"inconsistent shapes: mass {raw_mass.shape}, basis {raw_basis.shape}, eigvals {raw_eigvals.shape}"
            )
        for name, arr in (("raw_mass", raw_mass), ("raw_basis", raw_basis), ("raw_eigvals", raw_eigvals)):
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} contains non-finite values")
        return cls(
            Parameter(raw_mass, "raw_mass"),
            Parameter(raw_basis, "raw_basis"),
            Parameter(raw_eigvals, "raw_eigvals"),
        )

    @classmethod
    def initialize(
        cls, n: int, k: int, rng: np.random.Generator, init: str = "random", eig_scale: float = 0.1
    ) -> "SpectralOperatorParams":
        """Fresh parameters.

        ``init="random"`` draws a Gaussian basis; ``init="identity"`` uses the
        first k columns of the identity. Raw eigenvalues are N(0, eig_scale^2)
        in both cases, so the operator starts close to zero with nearly
        degenerate spectrum.
        """
        if k > n:
            raise ConfigError(f"spectral rank k={k} exceeds grid size n={n}")
        if init == "random":
            basis = rng.standard_normal((n, k)) / np.sqrt(n)
        elif init == "identity":
            basis = np.eye(n)[:, :k]
        else:
            raise ConfigError(f"unknown init {init!r}")
        eig = eig_scale * rng.standard_normal(k)
        return cls.from_arrays(np.zeros(n), basis, eig)


@dataclass(frozen=True)
class RealizedOperator:
    mass: Tensor  # (n,) diagonal of M
    basis: Tensor  # (n, k) Phi
    eigvals: Tensor  # (k,)

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def k(self) -> int:
        return self.basis.shape[1]


def realize(params: SpectralOperatorParams) -> RealizedOperator:
    if params.k > params.n:
        raise ConfigError(f"spectral rank k={params.k} exceeds grid size n={params.n}")
    sp = ad.softplus(params.raw_mass)
    mass = sp / ad.mean(sp)
    root = ad.sqrt(mass)
    frame = procrustes_project(ad.scale_rows(params.raw_basis, root))
    basis = ad.scale_rows(frame, 1.0 / root)
    eigvals = ad.square(params.raw_eigvals)
    return RealizedOperator(mass, basis, eigvals)


def _check_rows(f: Tensor, n: int, what: str) -> None:
    if f.ndim != 2 or f.shape[0] != n:
        raise DimensionError(f"{what}: expected {n} rows, got shape {f.shape}")


def project(f, op: RealizedOperator) -> Tensor:
    """Eigenbasis coefficients ``Phi^T M f`` of an (n, d) latent function."""
    f = ad.as_tensor(f)
    _check_rows(f, op.n, "project")
    return ad.matmul(ad.transpose(op.basis), ad.scale_rows(f, op.mass))


def unproject(c, op: RealizedOperator) -> Tensor:
    c = ad.as_tensor(c)
    _check_rows(c, op.k, "unproject")
    return ad.matmul(op.basis, c)


def operator_matrix(op: RealizedOperator) -> np.ndarray:
    """Dense ``Phi diag(lam) Phi^T M``; for inspection only."""
    phi = op.basis.data
    return (phi * op.eigvals.data) @ phi.T * op.mass.data[None, :]


def spatial_map(tau_basis, op: RealizedOperator) -> np.ndarray:
    """Dense ``Phi tau Phi^T M`` for a k x k map; for inspection only."""
    tau = tau_basis.data if isinstance(tau_basis, Tensor) else np.asarray(tau_basis)
    phi = op.basis.data
    return phi @ tau @ phi.T * op.mass.data[None, :]


def apply_full_map(tau_basis, f, op: RealizedOperator) -> Tensor:
    tau_basis = ad.as_tensor(tau_basis)
    if tau_basis.shape != (op.k, op.k):
        raise DimensionError(f"apply_full_map: map shape {tau_basis.shape} does not match k={op.k}")
    return unproject(ad.matmul(tau_basis, project(f, op)), op)
