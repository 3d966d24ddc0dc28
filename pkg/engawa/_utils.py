from typing import Callable, Mapping, MutableSequence

import numpy as np


def update_dict(d: dict, update_with: Mapping) -> dict:
    for k, v in update_with.items():
        if k in d:
            if isinstance(d[k], Mapping) and isinstance(v, Mapping):
                update_dict(d[k], v)
            elif isinstance(d[k], MutableSequence) and isinstance(v, MutableSequence):
                d[k].extend(v)
            else:
                d[k] = v
        else:
            d[k] = v
    return d


def central_difference_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Gradient of a scalar function of an array by central differences.

    The returned array has the shape of ``x``.
    """
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    for k in range(x.size):
        step = np.zeros(x.size)
        step[k] = h
        step = step.reshape(x.shape)
        flat[k] = (fn(x + step) - fn(x - step)) / (2.0 * h)
    return grad


def central_difference_jacobian(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Jacobian ``J[a, k] = d fn_a / d x_k`` of a vector field of a point by central differences."""
    x = np.asarray(x, dtype=float)
    columns = []
    for k in range(x.shape[-1]):
        step = np.zeros_like(x)
        step[..., k] = h
        columns.append((np.asarray(fn(x + step)) - np.asarray(fn(x - step))) / (2.0 * h))
    return np.stack(columns, axis=-1)


def mean_and_stderr(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 0:
        raise ValueError('Cannot average an empty sample')
    mean = float(np.mean(values))
    if values.size == 1:
        return mean, 0.0
    return mean, float(np.std(values, ddof=1) / np.sqrt(values.size))


def fold_into_interval(z: np.ndarray, a: float, b: float) -> np.ndarray:
    """Mirror ``z`` back into ``[a, b]`` as often as needed (triangle-wave folding)."""
    length = b - a
    u = np.mod(np.asarray(z, dtype=float) - a, 2.0 * length)
    return a + np.where(u > length, 2.0 * length - u, u)


def fold_slope(z: np.ndarray, a: float, b: float) -> np.ndarray:
    """Sign of the derivative of :func:`fold_into_interval` at ``z`` (+1 or -1)."""
    length = b - a
    u = np.mod(np.asarray(z, dtype=float) - a, 2.0 * length)
    return np.where(u > length, -1.0, 1.0)
