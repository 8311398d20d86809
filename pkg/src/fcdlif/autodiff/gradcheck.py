"""Finite-difference gradient checking utilities.

The oracle perturbs stored float32 values entry by entry and re-evaluates the
loss with float64 accumulation, so it is independent of the backward rules it
is used to verify.
"""

from __future__ import annotations

import numpy as np


def finite_difference_grad(loss_fn, tensor, h=1e-3) -> np.ndarray:
    """Central finite differences of ``loss_fn()`` w.r.t. every entry of ``tensor``.

    ``loss_fn`` must recompute the forward pass from the tensor's current
    contents and return a Python float.
    """
    flat = tensor.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(tensor.shape)


def max_relative_error(analytic, reference, floor=1e-8) -> float:
    """Largest entrywise deviation, normalized by the reference gradient scale."""
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    scale = max(float(np.max(np.abs(reference))), floor)
    return float(np.max(np.abs(analytic - reference))) / scale
