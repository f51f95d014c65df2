"""Dense float64 kernels, activations, losses and the seeded generator.

Matrices are plain ``numpy.ndarray`` objects of dtype float64, laid out with
one column per sample (``(features, batch)``). Kernels preserve a wider float
dtype when given one, which the finite-difference checker relies on.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

# Recorded in model files; changing it breaks reproducibility of old runs.
RNG_ALGORITHM = "numpy.PCG64"


class NumericError(FloatingPointError):
    """Raised when a NaN or Inf shows up in a computed quantity."""


def _float(a) -> np.ndarray:
    a = np.asarray(a)
    return a if a.dtype in (np.float64, np.longdouble) else a.astype(np.float64)


def as_matrix(a) -> np.ndarray:
    m = _float(a)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def check_finite(a: np.ndarray, what: str = "value") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite {what} encountered")
    return a


def make_rng(seed) -> np.random.Generator:
    """Generator with a fixed bit generator so streams are platform independent.

    ``seed`` may be an int or a tuple of ints (used to derive independent
    sub-streams, e.g. ``(seed, 1)`` for shuffling).
    """
    return np.random.Generator(np.random.PCG64(seed))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul result")


def sigmoid(z: np.ndarray) -> np.ndarray:
    return expit(z)


def sigmoid_deriv(a: np.ndarray) -> np.ndarray:
    """Derivative of the sigmoid written in terms of its output ``a``."""
    return a * (1.0 - a)


def tanh_act(z: np.ndarray) -> np.ndarray:
    return np.tanh(z)


def tanh_deriv(a: np.ndarray) -> np.ndarray:
    return 1.0 - a * a


ACTIVATIONS = {
    "sigmoid": (sigmoid, sigmoid_deriv),
    "tanh": (tanh_act, tanh_deriv),
}


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over every element of the squared difference."""
    pred, target = _float(pred), _float(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("mse of empty arrays")
    d = pred - target
    return np.mean(d * d)


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Gradient of :func:`mse` with respect to ``pred``."""
    return 2.0 * (pred - target) / pred.size
