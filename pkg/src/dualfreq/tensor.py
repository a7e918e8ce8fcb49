"""Thin helpers over ``numpy.ndarray``.

The package uses plain numpy arrays as its tensor type: C-contiguous
(row-major), ``float32`` for network values. These helpers add the shape
validation the rest of the code relies on and raise :class:`ShapeError`
instead of numpy's broadcasting behaviour.
"""

import numpy as np

from .errors import ShapeError

DTYPE = np.float32

_ELEMENTWISE = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def _check_shape(shape):
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ShapeError(f"invalid shape {shape}: need at least one extent, all >= 1")
    return shape


def zeros(shape, dtype=DTYPE):
    return np.zeros(_check_shape(shape), dtype=dtype)


def as_tensor(values, dtype=DTYPE):
    """Copy ``values`` into a fresh row-major array of ``dtype``."""
    return np.array(values, dtype=dtype, order="C")


def reshape(x, shape):
    shape = _check_shape(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} ({x.size} elements) to {shape}")
    return x.reshape(shape)


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def elementwise(a, b, op):
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {op} needs identical shapes, got {a.shape} and {b.shape}")
    return fn(a, b)
