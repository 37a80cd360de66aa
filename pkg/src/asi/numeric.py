"""Dense float64 kernels: shape-strict matrices, row softmax, and a seeded PRNG.

All arithmetic is 64-bit and uses fixed, single-threaded summation order
(``np.einsum`` rather than BLAS), so identical inputs produce bit-identical
outputs regardless of thread count or BLAS backend. There is no broadcasting
anywhere: every shape mismatch raises :class:`~asi.errors.ShapeError`.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError

__all__ = ["Matrix", "Rng", "matmul", "softmax_rows", "randn_matrix"]


class Matrix:
    """An immutable 2-D block of finite float64 values, row-major.

    The wrapped array is read-only; operations return new matrices. Entries
    are validated to be finite on construction, so any public operation that
    would produce NaN/Inf fails loudly instead of propagating garbage.
    """

    __slots__ = ("_a",)

    def __init__(self, values) -> None:
        a = np.array(values, dtype=np.float64, order="C", copy=True)
        if a.ndim != 2:
            raise ShapeError(f"Matrix requires 2-D data, got {a.ndim}-D")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ShapeError(f"Matrix dimensions must be >= 1, got {a.shape[0]}x{a.shape[1]}")
        if not np.isfinite(a).all():
            raise ValueError("Matrix entries must be finite (no NaN/Inf)")
        a.flags.writeable = False
        self._a = a

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls(np.zeros((rows, cols)))

    @classmethod
    def identity(cls, n: int) -> "Matrix":
        return cls(np.eye(n))

    @classmethod
    def from_flat(cls, rows: int, cols: int, flat) -> "Matrix":
        data = np.asarray(flat, dtype=np.float64)
        if data.ndim != 1 or data.size != rows * cols:
            raise ShapeError(
                f"flat data of length {data.size} cannot fill a {rows}x{cols} matrix"
            )
        return cls(data.reshape(rows, cols))

    @property
    def rows(self) -> int:
        return self._a.shape[0]

    @property
    def cols(self) -> int:
        return self._a.shape[1]

    @property
    def a(self) -> np.ndarray:
        """Read-only 2-D view of the entries."""
        return self._a

    @property
    def data(self) -> np.ndarray:
        """Read-only row-major flat view of the entries."""
        return self._a.reshape(-1)

    def transpose(self) -> "Matrix":
        return Matrix(self._a.T)

    def __repr__(self) -> str:
        # Diagnostics stay small: entries are shown only for tiny matrices.
        if self.rows <= 8 and self.cols <= 8:
            body = np.array2string(self._a, separator=", ")
            return f"Matrix({body})"
        return f"Matrix(<{self.rows}x{self.cols}>)"


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Strict matrix product a @ b.

    Computed with a fixed-order contraction (no BLAS threading), so the
    result is reproducible bit-for-bit across runs and thread counts.
    """
    if a.cols != b.rows:
        raise ShapeError(
            f"matmul: inner dimensions differ for ({a.rows}x{a.cols}) @ ({b.rows}x{b.cols})"
        )
    return Matrix(np.einsum("ik,kj->ij", a.a, b.a))


def softmax_rows(a: Matrix) -> Matrix:
    """Row-wise softmax with per-row max subtraction for overflow safety.

    Every output row sums to 1 (within float64 rounding) and all entries
    lie in (0, 1].
    """
    shifted = a.a - a.a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return Matrix(e / e.sum(axis=1, keepdims=True))


# splitmix64 finalizer constants
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = (1 << 64) - 1
_INV_2_53 = 1.0 / (1 << 53)


def _splitmix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


class Rng:
    """Deterministic counter-based PRNG: splitmix64 stream plus Box-Muller.

    The raw stream is ``z_k = splitmix64(seed + (k+1) * 0x9E3779B97F4A7C15)``
    for k = 0, 1, 2, ... (all arithmetic mod 2**64). Draws consume the stream
    in a fixed layout:

    * one uniform consumes one raw word:  ``u = (z >> 11) * 2**-53`` in [0, 1)
    * one normal consumes two raw words (a, b) and keeps only the cosine
      branch of Box-Muller: ``sqrt(-2 ln u1) * cos(2 pi u2)`` with
      ``u1 = ((a >> 11) + 1) * 2**-53`` in (0, 1] and ``u2 = (b >> 11) * 2**-53``.

    Identical seeds therefore give identical draw sequences everywhere the
    splitmix64 constants and IEEE-754 doubles behave identically. An Rng is
    single-owner state: it must not be shared across threads.
    """

    __slots__ = ("seed", "_counter")

    def __init__(self, seed: int) -> None:
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ValueError(f"seed must be an integer, got {type(seed).__name__}")
        if not 0 <= seed <= _U64_MASK:
            raise ValueError(f"seed must lie in [0, 2**64), got {seed}")
        self.seed = seed
        self._counter = 0

    def _raw(self, count: int) -> np.ndarray:
        start = self._counter
        self._counter += count
        idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            state = np.uint64(self.seed) + idx * _GAMMA
        return _splitmix64(state)

    def uniforms(self, count: int) -> np.ndarray:
        """`count` uniform draws in [0, 1)."""
        return (self._raw(count) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def normals(self, count: int) -> np.ndarray:
        """`count` standard-normal draws (two raw words each)."""
        raw = self._raw(2 * count)
        u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)

    def normal(self) -> float:
        return float(self.normals(1)[0])


def randn_matrix(rng: Rng, rows: int, cols: int) -> Matrix:
    """rows x cols matrix of standard-normal draws, filled in row-major order."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"randn_matrix dimensions must be >= 1, got {rows}x{cols}")
    return Matrix(rng.normals(rows * cols).reshape(rows, cols))
