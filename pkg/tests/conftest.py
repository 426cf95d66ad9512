import numpy as np
import pytest

from isocore import autodiff as ad
from isocore.autodiff import Tensor


def numeric_grad(fn, arrays, h=1e-5):
    """Central differences of a scalar function of several arrays."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for i, a in enumerate(arrays):
        g = np.zeros_like(a)
        for j in range(a.size):
            up = [x.copy() for x in arrays]
            dn = [x.copy() for x in arrays]
            up[i].flat[j] += h
            dn[i].flat[j] -= h
            g.flat[j] = (fn(*[Tensor(x) for x in up]).item() - fn(*[Tensor(x) for x in dn]).item()) / (2 * h)
        grads.append(g)
    return grads


def auto_grad(fn, arrays):
    xs = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    ad.backward(fn(*xs))
    return [x.grad if x.grad is not None else np.zeros(x.shape) for x in xs]


def rel_err(a, b):
    a = np.concatenate([np.ravel(x) for x in a])
    b = np.concatenate([np.ravel(x) for x in b])
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
