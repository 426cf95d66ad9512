import numpy as np
import pytest

from isocore.autodiff import Tensor
from isocore.errors import DomainError, DimensionError
from isocore.linalg import polar_factor
from isocore.solver import (
    FUZZY,
    HARD,
    IsometricMap,
    commutator_residual,
    count_distinct,
    eigenvalue_groups,
    eigenvalue_mask,
    estimate_map,
    exact_block_solve,
    invert_map,
    off_block_fraction,
    offdiag_fraction,
    orthogonality_residual,
)


def block_orthogonal(rng, sizes):
    k = sum(sizes)
    q = np.zeros((k, k))
    i = 0
    for s in sizes:
        q[i : i + s, i : i + s] = polar_factor(rng.standard_normal((s, s)))
        i += s
    return q


def eigvals_for(sizes, gap=1.0):
    return np.concatenate([np.full(s, gap * (b + 1)) for b, s in enumerate(sizes)])


def test_mask_examples():
    assert np.array_equal(eigenvalue_mask([1.0, 1.0, 1.0], FUZZY).matrix.data, np.ones((3, 3)))
    p = eigenvalue_mask([0.0, 0.693147], FUZZY).matrix.data
    assert abs(p[0, 1] - 0.5) < 1e-6 and abs(p[1, 0] - 0.5) < 1e-6
    assert np.array_equal(eigenvalue_mask([0.0, 5.0, 10.0], HARD, 1e-6).matrix.data, np.eye(3))


def test_mask_invariants(rng):
    lam = rng.uniform(0, 3, 7)
    p = eigenvalue_mask(lam, FUZZY).matrix.data
    assert np.array_equal(p, p.T)
    assert np.all(np.diag(p) == 1.0)
    assert np.allclose(p, np.exp(-np.abs(lam[:, None] - lam[None, :])), rtol=0, atol=1e-15)
    with pytest.raises(DomainError):
        eigenvalue_mask([-1.0, 2.0])


def test_hard_mask_groups_chains():
    lam = np.array([1.0, 1.0 + 4e-7, 1.0 + 8e-7, 3.0])
    groups = eigenvalue_groups(lam, 5e-7)
    assert [list(g) for g in groups] == [[0, 1, 2], [3]]
    p = eigenvalue_mask(lam, HARD, 5e-7).matrix.data
    assert p[0, 2] == 1.0 and p[0, 3] == 0.0
    assert count_distinct(lam, 5e-7) == 2


def test_identity_recovered_for_equal_coefficients(rng):
    c = rng.standard_normal((5, 8))
    tau = estimate_map(c, c, eigenvalue_mask(np.arange(5.0), HARD))
    assert np.abs(tau.tau_basis.data - np.eye(5)).max() <= 1e-6


def test_block_orthogonal_recovery(rng):
    sizes = [2, 3, 1]
    q = block_orthogonal(rng, sizes)
    ca = rng.standard_normal((6, 9))
    cb = q @ ca
    tau = estimate_map(ca, cb, eigenvalue_mask(eigvals_for(sizes), HARD)).tau_basis.data
    assert np.abs(tau - q).max() <= 1e-5
    assert np.linalg.norm(tau @ ca - cb) <= 1e-5 * np.linalg.norm(cb)


def test_exact_block_solve_cases(rng):
    ca, cb = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
    single = exact_block_solve(ca, cb, np.full(4, 2.0)).tau_basis.data
    assert np.allclose(single, polar_factor(cb @ ca.T))

    distinct = exact_block_solve(ca, cb, [1.0, 2.0, 3.0, 4.0]).tau_basis.data
    assert np.array_equal(distinct, np.diag(np.sign(np.sum(ca * cb, axis=1))))

    pairs = exact_block_solve(ca, cb, [1.0, 1.0, 2.0, 2.0]).tau_basis.data
    expect = np.zeros((4, 4))
    expect[:2, :2] = polar_factor(cb[:2] @ ca[:2].T)
    expect[2:, 2:] = polar_factor(cb[2:] @ ca[2:].T)
    assert np.allclose(pairs, expect, atol=1e-14)


def test_hard_estimate_equals_exact_solve(rng):
    for _ in range(50):
        sizes = list(rng.integers(1, 6, rng.integers(1, 5)))
        lam = eigvals_for(sizes)
        perm = rng.permutation(len(lam))
        lam = lam[perm]
        ca, cb = rng.standard_normal((len(lam), len(lam) + 2)), rng.standard_normal((len(lam), len(lam) + 2))
        est = estimate_map(ca, cb, eigenvalue_mask(lam, HARD)).tau_basis.data
        ref = exact_block_solve(ca, cb, lam).tau_basis.data
        assert np.abs(est - ref).max() <= 1e-8
        pattern = eigenvalue_mask(lam, HARD).matrix.data
        assert np.abs(est[pattern == 0]).max(initial=0.0) <= 1e-10


def test_fuzzy_approaches_hard_when_gaps_grow(rng):
    sizes = [2, 1, 3]
    lam = eigvals_for(sizes)
    ca, cb = rng.standard_normal((6, 8)), rng.standard_normal((6, 8))
    fuzzy = estimate_map(ca, cb, eigenvalue_mask(1e3 * lam, FUZZY)).tau_basis.data
    hard = estimate_map(ca, cb, eigenvalue_mask(lam, HARD)).tau_basis.data
    assert np.abs(fuzzy - hard).max() <= 1e-6


def test_orthogonality_always(rng):
    for k in (4, 16):
        for _ in range(20):
            lam = rng.uniform(0, 2, k) ** 2
            ca, cb = rng.standard_normal((k, 3)), rng.standard_normal((k, 3))
            assert orthogonality_residual(estimate_map(ca, cb, eigenvalue_mask(lam))) <= 1e-6


def test_commutator_residual_cases(rng):
    sizes = [2, 2, 1]
    lam = eigvals_for(sizes)
    assert commutator_residual(block_orthogonal(rng, sizes), lam) <= 1e-10
    assert commutator_residual(np.eye(5), rng.uniform(0, 1, 5)) == 0.0
    dense = polar_factor(rng.standard_normal((5, 5)))
    assert commutator_residual(dense, np.arange(5.0)) > 0


def test_invert_map(rng):
    q = IsometricMap(Tensor(polar_factor(rng.standard_normal((4, 4)))), FUZZY)
    assert np.array_equal(invert_map(invert_map(q)).tau_basis.data, q.tau_basis.data)
    assert np.array_equal(invert_map(IsometricMap(Tensor(np.eye(3)), HARD)).tau_basis.data, np.eye(3))
    assert np.abs(q.tau_basis.data @ invert_map(q).tau_basis.data - np.eye(4)).max() <= 1e-6


def test_shape_checks():
    with pytest.raises(DimensionError):
        estimate_map(np.ones((3, 2)), np.ones((3, 4)), eigenvalue_mask([1.0, 2.0, 3.0]))
    with pytest.raises(DimensionError):
        estimate_map(np.ones((2, 2)), np.ones((2, 2)), eigenvalue_mask([1.0, 2.0, 3.0]))


def test_mass_fractions():
    assert offdiag_fraction(np.eye(3)) == 0.0
    r = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert offdiag_fraction(r) == 1.0
    assert off_block_fraction(r, [1.0, 1.0], 1e-3) == 0.0
    assert off_block_fraction(r, [1.0, 2.0], 1e-3) == 1.0
