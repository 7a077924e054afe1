"""Dense float64 tensors and seeded randomness.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order. Randomness comes from numpy's PCG64 bit generator, which is stable
across platforms for a given seed.
"""

import numpy as np


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible."""


def as_tensor(values) -> np.ndarray:
    """Return ``values`` as a contiguous float64 array."""
    return np.ascontiguousarray(values, dtype=np.float64)


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator. ``seed`` may be an int or a sequence of ints."""
    return np.random.Generator(np.random.PCG64(seed))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of a 2-D ``m x k`` and a 2-D ``k x n`` tensor."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def topn_indices(values, n: int, mode: str = "highest") -> np.ndarray:
    """Indices of the ``n`` largest (``highest``) or smallest (``lowest``) values.

    Ties are broken in favour of the lower index. The result is ordered by
    rank, best first.
    """
    v = as_tensor(values).ravel()
    if n < 0 or n > v.size:
        raise ValueError(f"n={n} outside [0, {v.size}]")
    if mode == "highest":
        order = np.argsort(-v, kind="stable")
    elif mode == "lowest":
        order = np.argsort(v, kind="stable")
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return order[:n]
