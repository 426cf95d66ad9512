"""Equivariance, reconstruction and multiplicity objectives.

The multiplicity term is an unsquared Frobenius norm. The data terms take a
``norm`` argument (see :func:`residual_norm`); training defaults to the mean
of squared entries. Decoders are callables taking a latent Tensor and
returning an observation-shaped Tensor; the only codec shipped here is the
identity.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, UsageError
from .solver import EigenvalueMask, IsometricMap, invert_map
from .spectral import RealizedOperator, project, unproject

Codec = Callable[[Tensor], Tensor]


def identity_codec(x: Tensor) -> Tensor:
    return x


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.0
    beta: float = 0.1

    def __post_init__(self):
        if not (self.alpha >= 0 and self.beta >= 0):
            raise ConfigError(f"loss weights must be non-negative, got alpha={self.alpha}, beta={self.beta}")


@dataclass
class LossReport:
    total: float
    equivariance: float
    reconstruction: float
    multiplicity: float
    commutator_residual: float = 0.0
    orthogonality_residual: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def average(reports: list["LossReport"]) -> "LossReport":
        fields = LossReport.__dataclass_fields__
        return LossReport(**{f: float(np.mean([getattr(r, f) for r in reports])) for f in fields})


NORMS = ("frobenius", "squared", "mse")


def residual_norm(r: Tensor, norm: str = "frobenius") -> Tensor:
    """Size of a residual: ``|r|``, ``|r|^2`` or ``|r|^2 / numel``."""
    if norm == "frobenius":
        return ad.frobenius_norm(r)
    if norm == "squared":
        return ad.sum(ad.square(r))
    if norm == "mse":
        return ad.mean(ad.square(r))
    raise ConfigError(f"unknown norm {norm!r}; expected one of {NORMS}")


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ")


def equivariance_loss(tau: IsometricMap, ca, cb, norm: str = "frobenius") -> Tensor:
    ca, cb = ad.as_tensor(ca), ad.as_tensor(cb)
    _same_shape(ca, cb, "equivariance_loss")
    return residual_norm(ad.matmul(tau.tau_basis, ca) - cb, norm)


def _map_and_decode(decoder: Codec, tau_basis: Tensor, latent: Tensor, op: RealizedOperator, keep) -> Tensor:
    coeffs = ad.matmul(tau_basis, project(latent, op))
    if keep is not None:
        coeffs = ad.mul(coeffs, Tensor(keep))
    return decoder(unproject(coeffs, op))


def reconstruction_loss(
    decoder: Codec,
    tau: IsometricMap,
    latents: tuple,
    observations: tuple,
    op: RealizedOperator,
    keep: np.ndarray | None = None,
    norm: str = "frobenius",
) -> Tensor:
    """``|D(tau E(psi)) - T psi| + |D(tau^-1 E(T psi)) - psi|``.

    ``keep`` is an optional k x d 0/1 array from spectral dropout, applied to
    the coefficients right before unprojection.
    """
    za, zb = (ad.as_tensor(z) for z in latents)
    psi, tpsi = (ad.as_tensor(o) for o in observations)
    forward = _map_and_decode(decoder, tau.tau_basis, za, op, keep)
    back = _map_and_decode(decoder, invert_map(tau).tau_basis, zb, op, keep)
    _same_shape(forward, tpsi, "reconstruction_loss")
    _same_shape(back, psi, "reconstruction_loss")
    return residual_norm(forward - tpsi, norm) + residual_norm(back - psi, norm)


def mask_laplacian(mask: EigenvalueMask) -> Tensor:
    p = mask.matrix
    k = p.shape[0]
    degree = ad.reshape(ad.matmul(p, Tensor(np.ones((k, 1)))), (k,))
    return ad.diag(degree) - p


def multiplicity_loss(mask: EigenvalueMask) -> Tensor:
    """Frobenius norm of the graph Laplacian of the eigenvalue mask."""
    return ad.frobenius_norm(mask_laplacian(mask))


def combined_loss(weights: LossWeights, reconstruction, equivariance, multiplicity) -> tuple[Tensor, LossReport]:
    if not isinstance(weights, LossWeights):
        weights = LossWeights(*weights)
    lr, le, lm = (ad.as_tensor(x) for x in (reconstruction, equivariance, multiplicity))
    total = lr + weights.alpha * le + weights.beta * lm
    report = LossReport(
        total=total.item(),
        equivariance=le.item(),
        reconstruction=lr.item(),
        multiplicity=lm.item(),
    )
    return total, report


def triplet_losses(
    tau: IsometricMap,
    sigma: IsometricMap,
    coeffs: tuple,
    latents: tuple,
    observations: tuple,
    op: RealizedOperator,
    decoder: Codec = identity_codec,
    keep: np.ndarray | None = None,
    norm: str = "frobenius",
) -> tuple[Tensor, Tensor]:
    """Cross-applied losses for a composable triple (psi, T psi, T^2 psi).

    ``tau`` is estimated on (psi, T psi) and ``sigma`` on (T psi, T^2 psi);
    each is then scored on the other pair.
    """
    if len(coeffs) < 3 or len(latents) < 3 or len(observations) < 3 or any(
        x is None for x in (*coeffs, *latents, *observations)
    ):
        raise UsageError("triplet losses need three coefficients, latents and observations")
    c0, c1, c2 = (ad.as_tensor(c) for c in coeffs[:3])
    z0, z1, _ = (ad.as_tensor(z) for z in latents[:3])
    _, o1, o2 = (ad.as_tensor(o) for o in observations[:3])
    l_e = equivariance_loss(sigma, c0, c1, norm) + equivariance_loss(tau, c1, c2, norm)
    r1 = _map_and_decode(decoder, sigma.tau_basis, z0, op, keep)
    r2 = _map_and_decode(decoder, tau.tau_basis, z1, op, keep)
    _same_shape(r1, o1, "triplet_losses")
    _same_shape(r2, o2, "triplet_losses")
    l_r = residual_norm(r1 - o1, norm) + residual_norm(r2 - o2, norm)
    return l_e, l_r


def dropout_keep(k: int, d: int, rng: np.random.Generator) -> np.ndarray | None:
    """Row mask for spectral dropout, or None when dropout is not triggered.

    With probability 1/2 a cut index i is drawn uniformly from 2..k (1-based)
    and rows i..k are zeroed.
    """
    if k < 2:
        raise ConfigError(f"spectral dropout needs k >= 2, got k={k}")
    if rng.random() >= 0.5:
        return None
    cut = int(rng.integers(2, k + 1))
    keep = np.zeros((k, d))
    keep[: cut - 1] = 1.0
    return keep


def spectral_dropout(c, rng: np.random.Generator) -> Tensor:
    c = ad.as_tensor(c)
    keep = dropout_keep(c.shape[0], c.shape[1], rng)
    return c if keep is None else ad.mul(c, Tensor(keep))
