"""Dense float64 kernels shared by every layer.

Matrices are 2-D ``float64`` arrays (row-major). Vectors are 1-D arrays, or
2-D arrays whose leading axis is a batch of independent vectors; the last axis
is always the one that has to agree with the matrix. Nothing is broadcast
implicitly: a mismatch raises :class:`ShapeError` naming both shapes.
"""

import numpy as np

from .exceptions import ShapeError

DTYPE = np.float64


def as_mat(a, name="matrix"):
    m = np.asarray(a, dtype=DTYPE)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    return m


def as_vec(a, name="vector"):
    v = np.asarray(a, dtype=DTYPE)
    if v.ndim not in (1, 2):
        raise ShapeError(f"{name} must be 1-D (or batched 2-D), got shape {v.shape}")
    return v


def matvec(M, v):
    """Return ``M @ v`` for a vector, or ``M @ v[b]`` for each row of a batch."""
    if M.ndim != 2 or v.ndim not in (1, 2) or M.shape[1] != v.shape[-1]:
        raise ShapeError(f"matvec: matrix {M.shape} incompatible with vector {v.shape}")
    if v.ndim == 1:
        return M @ v
    return v @ M.T


def _floating(v):
    v = np.asarray(v)
    # float64 unless the caller already works in a float type (e.g. longdouble)
    return v if v.dtype.kind == "f" else v.astype(DTYPE)


def sigmoid(v):
    v = _floating(v)
    # exp(-|v|) never overflows; pick the branch that avoids cancellation
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0, e) / (1.0 + e)


def tanh_vec(v):
    return np.tanh(_floating(v))


def hadamard(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    return a * b


def check_shape(a, shape, name):
    if a.shape != tuple(shape):
        raise ShapeError(f"{name}: expected shape {tuple(shape)}, got {a.shape}")
