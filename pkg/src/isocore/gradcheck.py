"""Central finite-difference checks for every differentiable primitive.

Each case maps a few input arrays to a tensor; the tensor is contracted with a
fixed random weight array so the check compares a full gradient, not a single
entry. Errors are normwise: |g_auto - g_fd| / max(|g_auto|, |g_fd|, floor).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .linalg import procrustes_project
from .losses import LossWeights, equivariance_loss, multiplicity_loss, reconstruction_loss, identity_codec
from .solver import FUZZY, eigenvalue_mask, estimate_map
from .spectral import SpectralOperatorParams, project, realize

STEP = 1e-5
TOLERANCE = 1e-4
FLOOR = 1e-10


@dataclass
class Case:
    name: str
    fn: Callable[..., Tensor]
    inputs: list[np.ndarray]


@dataclass
class CheckResult:
    name: str
    rel_error: float

    @property
    def ok(self) -> bool:
        return self.rel_error <= TOLERANCE


def _away_from_zero(rng, shape, lo=0.3):
    x = rng.uniform(lo, 1.5, shape)
    return x * rng.choice([-1.0, 1.0], shape)


def _composite(raw_mass, raw_basis, raw_eigvals, za, zb):
    params = SpectralOperatorParams(raw_mass, raw_basis, raw_eigvals)
    op = realize(params)
    mask = eigenvalue_mask(op.eigvals, FUZZY)
    ca, cb = project(za, op), project(zb, op)
    tau = estimate_map(ca, cb, mask)
    w = LossWeights(alpha=0.5, beta=0.1)
    l_r = reconstruction_loss(identity_codec, tau, (za, zb), (za, zb), op)
    return l_r + w.alpha * equivariance_loss(tau, ca, cb) + w.beta * multiplicity_loss(mask)


def default_cases(seed: int = 0) -> list[Case]:
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    n, k, d = 6, 4, 3
    eig = np.array([0.3, -0.7, 0.9, 1.3])
    return [
        Case("add", ad.add, [a, b]),
        Case("sub", ad.sub, [a, b]),
        Case("mul", ad.mul, [a, b]),
        Case("div", ad.div, [a, _away_from_zero(rng, (4, 3))]),
        Case("neg", ad.neg, [a]),
        Case("exp", ad.exp, [a]),
        Case("abs", ad.abs, [_away_from_zero(rng, (4, 3))]),
        Case("square", ad.square, [a]),
        Case("sqrt", ad.sqrt, [rng.uniform(0.3, 2.0, (4, 3))]),
        Case("softplus", ad.softplus, [3 * a]),
        Case("matmul", ad.matmul, [a, rng.standard_normal((3, 5))]),
        Case("transpose", ad.transpose, [a]),
        Case("reshape", lambda x: ad.reshape(x, (3, 4)), [a]),
        Case("diag", ad.diag, [rng.standard_normal(5)]),
        Case("scale_rows", ad.scale_rows, [a, rng.standard_normal(4)]),
        Case("sum", ad.sum, [a]),
        Case("mean", ad.mean, [a]),
        Case("frobenius_norm", ad.frobenius_norm, [a]),
        Case("procrustes_project", procrustes_project, [rng.standard_normal((5, 5))]),
        Case("procrustes_project_tall", procrustes_project, [rng.standard_normal((7, 4))]),
        Case(
            "realize",
            lambda m, u, e: ad.matmul(realize(SpectralOperatorParams(m, u, e)).basis, ad.diag(ad.square(e))),
            [0.3 * rng.standard_normal(n), rng.standard_normal((n, k)), eig],
        ),
        Case("fuzzy_mask", lambda e: eigenvalue_mask(e, FUZZY).matrix, [np.array([0.1, 0.5, 1.2, 2.0])]),
        Case(
            "estimate_map",
            lambda ca, cb, e: estimate_map(ca, cb, eigenvalue_mask(e, FUZZY)).tau_basis,
            [rng.standard_normal((k, d)), rng.standard_normal((k, d)), np.array([0.1, 0.5, 1.2, 2.0])],
        ),
        Case(
            "composite_loss",
            _composite,
            [
                0.3 * rng.standard_normal(n),
                rng.standard_normal((n, k)),
                eig,
                rng.standard_normal((n, d)),
                rng.standard_normal((n, d)),
            ],
        ),
    ]


def _scalar(case: Case, arrays: list[np.ndarray], weight: np.ndarray, grad: bool) -> tuple[float, list[Tensor]]:
    xs = [Tensor(x, requires_grad=grad) for x in arrays]
    out = case.fn(*xs)
    loss = ad.sum(ad.mul(out, Tensor(weight))) if out.ndim else out
    if grad:
        ad.backward(loss)
    return loss.item(), xs


def check_case(case: Case, seed: int = 0, step: float = STEP) -> CheckResult:
    arrays = [np.array(x, dtype=np.float64) for x in case.inputs]
    probe = case.fn(*[Tensor(x) for x in arrays])
    weight = np.random.default_rng([seed, 99]).standard_normal(probe.shape)
    _, xs = _scalar(case, arrays, weight, grad=True)
    auto = np.concatenate([(x.grad if x.grad is not None else np.zeros(x.shape)).ravel() for x in xs])

    numeric = []
    for i, x in enumerate(arrays):
        g = np.zeros(x.size)
        for j in range(x.size):
            shifted = [y.copy() for y in arrays]
            shifted[i].flat[j] += step
            hi, _ = _scalar(case, shifted, weight, grad=False)
            shifted[i].flat[j] -= 2 * step
            lo, _ = _scalar(case, shifted, weight, grad=False)
            g[j] = (hi - lo) / (2 * step)
        numeric.append(g)
    numeric = np.concatenate(numeric)
    scale = max(np.linalg.norm(auto), np.linalg.norm(numeric), FLOOR)
    return CheckResult(case.name, float(np.linalg.norm(auto - numeric) / scale))


def run_suite(seed: int = 0, cases: list[Case] | None = None) -> list[CheckResult]:
    return [check_case(c, seed) for c in (default_cases(seed) if cases is None else cases)]


def worst(results: list[CheckResult]) -> CheckResult:
    return max(results, key=lambda r: r.rel_error)
