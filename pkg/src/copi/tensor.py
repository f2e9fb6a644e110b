"""Dense float64 matrix helpers and seeded random streams.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64 in C
(row-major) order.  Batches are stored with one sample per *column*, so a
layer activation over a minibatch of ``N`` samples has shape ``(K, N)``.
"""

from __future__ import annotations

import numpy as np

from copi.errors import ContractError

DTYPE = np.float64


def as_matrix(a) -> np.ndarray:
    """Return ``a`` as a contiguous 2-D float64 array (copying only if needed)."""
    m = np.ascontiguousarray(a, dtype=DTYPE)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ContractError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for ``seed``, optionally split by stream ids.

    Uses Philox so identical ``(seed, stream)`` pairs give identical samples
    on every platform.
    """
    if seed < 0:
        raise ContractError("seed must be non-negative")
    seq = np.random.SeedSequence(seed, spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(seq))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sq_mean(x: np.ndarray) -> np.ndarray:
    """Per-row batch mean of squared entries, as a 1-D vector."""
    if x.ndim != 2 or x.shape[1] < 1:
        raise ContractError(f"expected a (K, N>=1) batch, got shape {x.shape}")
    return np.einsum("in,in->i", x, x) / x.shape[1]


def diag_sq_mean(x: np.ndarray) -> np.ndarray:
    """Diagonal matrix holding the batch mean of ``x_i**2`` for each row."""
    return np.diag(sq_mean(x))


def outer_mean(z: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Batch mean of ``z x^T``; columns are samples.

    For ``outer_mean(x, x)`` the diagonal is filled with the same reduction
    as :func:`diag_sq_mean`, so the two agree bit for bit.
    """
    if z.ndim != 2 or x.ndim != 2:
        raise ContractError("outer_mean expects 2-D batches")
    if z.shape[1] != x.shape[1]:
        raise ContractError(f"batch sizes differ: {z.shape[1]} vs {x.shape[1]}")
    n = x.shape[1]
    if n < 1:
        raise ContractError("empty batch")
    out = (z @ x.T) / n
    if z is x:
        np.fill_diagonal(out, sq_mean(x))
    return out


def uniform(rng: np.random.Generator, rows: int, cols: int, lo: float, hi: float) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ContractError(f"invalid shape ({rows}, {cols})")
    if lo > hi:
        raise ContractError(f"uniform bounds out of order: lo={lo} > hi={hi}")
    if lo == hi:
        # consume the stream anyway so later draws do not depend on this branch
        rng.random((rows, cols))
        return np.full((rows, cols), float(lo))
    return rng.uniform(lo, hi, size=(rows, cols))


def scaled_uniform(rng: np.random.Generator, rows: int, cols: int, fan_in: int) -> np.ndarray:
    """Entries uniform on ``[-sqrt(1/fan_in), sqrt(1/fan_in)]``."""
    if fan_in < 1:
        raise ContractError("fan_in must be positive")
    bound = np.sqrt(1.0 / fan_in)
    return uniform(rng, rows, cols, -bound, bound)


def rand_matrix(rng: np.random.Generator, rows: int, cols: int, dist: str = "scaled-uniform",
                lo: float = 0.0, hi: float = 1.0, fan_in: int | None = None) -> np.ndarray:
    """Draw a random matrix from ``dist`` ('uniform' or 'scaled-uniform')."""
    if dist == "uniform":
        return uniform(rng, rows, cols, lo, hi)
    if dist == "scaled-uniform":
        return scaled_uniform(rng, rows, cols, cols if fan_in is None else fan_in)
    raise ContractError(f"unknown distribution {dist!r}")


def offdiag_norm(x: np.ndarray) -> float:
    """Squared Frobenius norm of ``mean[x x^T] - diag(mean[x^2])``."""
    c = outer_mean(x, x)
    np.fill_diagonal(c, 0.0)
    return float(np.sum(c * c))


def add_outer_(c: np.ndarray, alpha: float, z: np.ndarray, x: np.ndarray) -> np.ndarray:
    """In place ``c += alpha * z x^T`` through a single BLAS call.

    ``c`` must be a C-contiguous float64 matrix; it is updated without a
    temporary of its own size.
    """
    from scipy.linalg import blas

    if c.shape != (z.shape[0], x.shape[0]) or z.shape[1] != x.shape[1]:
        raise ContractError(f"add_outer_: {c.shape} += {z.shape} x {x.shape}^T does not conform")
    if not c.flags.c_contiguous or c.dtype != DTYPE:
        raise ContractError("add_outer_ needs a C-contiguous float64 target")
    # c^T is Fortran-ordered, so dgemm writes straight into c's buffer
    out = blas.dgemm(alpha, x, z, beta=1.0, c=c.T, trans_b=True, overwrite_c=True)
    if not np.shares_memory(out, c):
        c[...] = out.T
    return c
