import numpy as np
import pytest

from isocore.autodiff import Parameter
from isocore.errors import NumericalError, UsageError
from isocore.optim import OptimizerState, lr_at, optimizer_step


def test_schedule_values():
    kw = dict(steps=20000, lr_peak=5e-4, lr_final=5e-5, warmup_steps=2000)
    assert lr_at(0, **kw) == 0.0
    assert lr_at(2000, **kw) == 5e-4
    increment = abs(lr_at(19998, **kw) - lr_at(19999, **kw))
    assert abs(lr_at(19999, **kw) - 5e-5) <= max(increment, 1e-15)
    left = 5e-4 * (2000 - 1e-9) / 2000
    assert abs(lr_at(2000, **kw) - lr_at(1999, **kw) - 5e-4 / 2000) < 1e-12
    assert abs(lr_at(2000, **kw) - left) < 1e-12
    with pytest.raises(UsageError):
        lr_at(20000, **kw)


def test_zero_gradient_no_decay_leaves_parameters():
    p = Parameter(np.array([1.0, -2.0]), "p")
    state = OptimizerState.for_params([p])
    optimizer_step([p], state, 1e-2, 0.0, grads={"p": np.zeros(2)})
    assert np.array_equal(p.data, [1.0, -2.0])


def test_weight_decay_closed_form():
    p = Parameter(np.array([1.0, -2.0]), "p")
    e = Parameter(np.array([3.0]), "e")
    state = OptimizerState.for_params([p, e])
    for _ in range(5):
        optimizer_step([p, e], state, 0.1, 0.5, decay_exempt=frozenset({"e"}), grads={"p": np.zeros(2), "e": np.zeros(1)})
    assert np.allclose(p.data, np.array([1.0, -2.0]) * (1 - 0.05) ** 5)
    assert np.array_equal(e.data, [3.0])


def test_constant_gradient_step_size_limit():
    p = Parameter(np.zeros(3), "p")
    state = OptimizerState.for_params([p])
    lr = 1e-3
    prev = p.data.copy()
    for _ in range(500):
        optimizer_step([p], state, lr, 0.0, grads={"p": np.array([2.0, -0.5, 1e-3])})
        step = p.data - prev
        prev = p.data.copy()
        assert np.all(np.abs(step) <= lr / (1 - 1e-8))
    assert np.allclose(np.abs(step), lr, rtol=1e-4)
    assert np.array_equal(np.sign(step), [-1, 1, -1])


def test_nan_gradient_names_parameter():
    p = Parameter(np.zeros(2), "raw_basis")
    with pytest.raises(NumericalError, match="raw_basis"):
        optimizer_step([p], OptimizerState.for_params([p]), 1e-3, 0.0, grads={"raw_basis": np.array([np.nan, 0.0])})
