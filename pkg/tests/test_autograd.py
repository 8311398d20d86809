"""Graph semantics: backward rules, accumulation, error states, determinism."""

import logging

import numpy as np
import pytest

from fcdlif import autodiff as ad
from fcdlif.autodiff import Tensor, parameter
from fcdlif.errors import GraphError


def test_sum_gradient_is_ones():
    x = parameter(np.arange(6.0).reshape(2, 3))
    ad.tensor_sum(x).backward()
    assert np.array_equal(x.grad, np.ones((2, 3), dtype=np.float32))


def test_square_gradient():
    x = parameter(np.array([1.0, -2.0, 3.0]))
    ad.tensor_sum(x * x).backward()
    assert np.allclose(x.grad, 2 * x.data)


def test_gradients_accumulate_over_consumers():
    x = parameter(np.array([2.0]))
    y = ad.add(x, x)  # two consumers of the same leaf
    ad.tensor_sum(y).backward()
    assert x.grad[0] == 2.0


def test_non_scalar_loss_rejected():
    x = parameter(np.ones(3))
    with pytest.raises(GraphError, match="scalar"):
        (x * x).backward()


def test_repeated_backward_rejected():
    x = parameter(np.ones(3))
    loss = ad.tensor_sum(x)
    loss.backward()
    with pytest.raises(GraphError, match="already ran"):
        loss.backward()
    # resetting gradients re-arms the root
    loss.zero_grad()
    x.zero_grad()
    loss.backward()
    assert np.array_equal(x.grad, np.ones(3, dtype=np.float32))


def test_disconnected_parameter_warns_and_stays_zero(caplog):
    x = parameter(np.ones(2), name="used")
    orphan = parameter(np.ones(2), name="orphan")
    loss = ad.tensor_sum(x * 3.0)
    with caplog.at_level(logging.WARNING):
        loss.backward(params=[x, orphan])
    assert "orphan" in caplog.text
    assert np.array_equal(orphan.grad, np.zeros(2, dtype=np.float32))


def test_constants_are_pruned_from_tape():
    x = Tensor(np.ones(3))  # no grad requested
    y = x * 2.0
    assert y._backward_rule is None and not y.requires_grad


def test_no_grad_context_suppresses_tape():
    x = parameter(np.ones(3))
    with ad.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._backward_rule is None


def test_forward_backward_bit_determinism():
    def run():
        rng = np.random.default_rng(123)
        x = parameter(rng.normal(size=(2, 8, 8, 8)).astype(np.float32))
        k = parameter(rng.normal(size=(3, 2, 3, 3, 3)).astype(np.float32))
        out = ad.relu(ad.conv3d(x, k, padding=1))
        loss = ad.tensor_sum(out * out)
        loss.backward()
        return loss.data.copy(), x.grad.copy(), k.grad.copy()

    first, second = run(), run()
    for a, b in zip(first, second):
        assert np.array_equal(a, b)
