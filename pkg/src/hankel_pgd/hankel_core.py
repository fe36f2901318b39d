"""Multi-fold Hankel lifting geometry and FFT-based structured products.

A signal of shape ``dims = (N_1, ..., N_d)`` is lifted to a matrix with
``R = prod(n_i)`` rows and ``Cl = prod(N_i - n_i + 1)`` columns whose
``(i, j)`` entry is ``z[i + j]`` (multi-index addition).  Rows and columns of
the lifted matrix, and flat signal vectors, all use numpy's C (row-major)
ordering of their multi-indices.

Conventions
-----------
- ``D`` scales entry ``a`` by ``sqrt(w_a)`` where ``w_a`` is the number of
  lifted entries on the ``a``-th (multi-)skew-diagonal.
- ``G = H D^{-1}`` so that ``G^* G = I``.
- Every FFT path uses a per-axis transform length equal to the next power of
  two >= ``N_i``; linear convolutions of the row and column pencils never
  exceed ``N_i`` samples so no wrap-around occurs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import fft as sfft
from scipy.sparse.linalg import LinearOperator

#: Largest lifted matrix (R * Cl entries) that :meth:`HankelLift.dense` builds.
DENSE_LIMIT = 2**22


class ShapeError(ValueError):
    """Raised for inconsistent dimensions, pencils or operand sizes."""


def skew_weights(N: int, n1: int) -> np.ndarray:
    """Skew-diagonal counts of an ``n1 x (N - n1 + 1)`` matrix.

    >>> skew_weights(5, 3)
    array([1, 2, 3, 2, 1])
    """
    n2 = N - n1 + 1
    a = np.arange(N)
    return np.minimum.reduce([a + 1, np.full(N, n1), np.full(N, n2), N - a])


def _next_pow2(k: int) -> int:
    return 1 << max(0, (k - 1).bit_length())


@dataclass(frozen=True)
class HankelShape:
    """Geometry of a (multi-fold) Hankel lifting.

    Parameters
    ----------
    dims : tuple of int
        Ambient signal lengths ``N_1..N_d``.
    pencil : tuple of int
        Row-split sizes ``n_1..n_d`` with ``1 <= n_i <= N_i``.
    """

    dims: tuple
    pencil: tuple
    weights: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dims = tuple(int(N) for N in self.dims)
        pencil = tuple(int(k) for k in self.pencil)
        if not 1 <= len(dims) <= 3:
            raise ShapeError(f"only d in {{1, 2, 3}} is supported, got d={len(dims)}")
        if len(pencil) != len(dims):
            raise ShapeError(f"pencil {pencil} does not match dims {dims}")
        for N, k in zip(dims, pencil):
            if N < 1:
                raise ShapeError(f"dimension lengths must be >= 1, got {dims}")
            if not 1 <= k <= N:
                raise ShapeError(f"pencil entry {k} outside [1, {N}]")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "pencil", pencil)
        object.__setattr__(
            self, "weights", tuple(skew_weights(N, k) for N, k in zip(dims, pencil))
        )

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return math.prod(self.dims)

    @property
    def col_pencil(self) -> tuple:
        return tuple(N - k + 1 for N, k in zip(self.dims, self.pencil))

    @property
    def rows(self) -> int:
        return math.prod(self.pencil)

    @property
    def cols(self) -> int:
        return math.prod(self.col_pencil)

    @property
    def c_s(self) -> float:
        return max(self.n / self.rows, self.n / self.cols)

    @property
    def fft_shape(self) -> tuple:
        return tuple(_next_pow2(N) for N in self.dims)

    @cached_property
    def joint_weights(self) -> np.ndarray:
        """Product of the per-axis weights, as an array of shape ``dims``."""
        w = np.ones((), dtype=np.int64)
        for wi in self.weights:
            w = np.multiply.outer(w, wi)
        return w

    @cached_property
    def sqrt_weights(self) -> np.ndarray:
        """Flat ``sqrt(w_a)`` in C order."""
        return np.sqrt(self.joint_weights.astype(float)).ravel()


def make_shape(dims: Sequence[int], pencil: Optional[Sequence[int]] = None) -> HankelShape:
    """Build a :class:`HankelShape`, defaulting to the squarest split
    ``n_i = ceil((N_i + 1) / 2)``."""
    dims = tuple(int(N) for N in np.atleast_1d(dims))
    if pencil is None:
        pencil = tuple((N + 2) // 2 for N in dims)
    return HankelShape(dims, tuple(int(k) for k in np.atleast_1d(pencil)))


def _as_flat(shape: HankelShape, z) -> np.ndarray:
    z = np.asarray(z)
    if z.size != shape.n or (z.ndim > 1 and z.shape != shape.dims):
        raise ShapeError(f"expected a vector of length {shape.n}, got shape {z.shape}")
    return z.reshape(-1)


def d_scale(shape: HankelShape, z, direction: str = "forward") -> np.ndarray:
    """Apply ``D`` (``direction="forward"``) or ``D^{-1}`` (``"inverse"``)."""
    z = _as_flat(shape, z)
    if direction == "forward":
        return z * shape.sqrt_weights
    if direction == "inverse":
        return z / shape.sqrt_weights
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def _axes(shape: HankelShape) -> tuple:
    return tuple(range(1, shape.d + 1))


def _stack_columns(B: np.ndarray, grid: tuple) -> np.ndarray:
    # (len, r) -> (r, *grid)
    return B.T.reshape((B.shape[1],) + grid)


def _check_factor(B, rows: int, what: str) -> np.ndarray:
    B = np.asarray(B)
    if B.ndim == 1:
        B = B[:, None]
    if B.ndim != 2 or B.shape[0] != rows:
        raise ShapeError(f"{what} must have {rows} rows, got shape {B.shape}")
    return B


def _correlate(shape, u_hat, B, in_grid, out_grid):
    """``out[i, k] = sum_j u[i + j] * B[j, k]`` via convolution with the
    reversed columns of ``B``."""
    d = shape.d
    axes = _axes(shape)
    Bg = _stack_columns(B, in_grid)[(slice(None),) + (slice(None, None, -1),) * d]
    c = sfft.ifftn(u_hat[None] * sfft.fftn(Bg, s=shape.fft_shape, axes=axes), axes=axes)
    window = tuple(slice(L - 1, L - 1 + o) for L, o in zip(in_grid, out_grid))
    return c[(slice(None),) + window].reshape(B.shape[1], -1).T


def _signal_hat(shape: HankelShape, w) -> np.ndarray:
    u = d_scale(shape, w, "inverse").reshape(shape.dims)
    return sfft.fftn(u, s=shape.fft_shape)


def g_vector_times_factor(shape: HankelShape, w, B, side: str = "left") -> np.ndarray:
    """Multiply the lifting ``G w`` by a factor without forming it.

    ``side="left"`` returns ``(G w) @ B`` for ``B`` of shape ``(Cl, r)``;
    ``side="right"`` returns ``(G w)^* @ B`` for ``B`` of shape ``(R, r)``.
    """
    w_hat = _signal_hat(shape, w)
    if side == "left":
        B = _check_factor(B, shape.cols, "B")
        return _correlate(shape, w_hat, B, shape.col_pencil, shape.pencil)
    if side == "right":
        B = _check_factor(B, shape.rows, "A")
        return _correlate(shape, w_hat, B.conj(), shape.pencil, shape.col_pencil).conj()
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def gstar_factored(shape: HankelShape, ZU, ZV) -> np.ndarray:
    """``G^*(ZU @ ZV^*)`` as a flat length-``n`` vector.

    Each column pair contributes one multi-dimensional linear convolution of
    ``ZU[:, k]`` with ``conj(ZV[:, k])``; the spectra are summed before a
    single inverse transform.
    """
    ZU = _check_factor(ZU, shape.rows, "Z_U")
    ZV = _check_factor(ZV, shape.cols, "Z_V")
    if ZU.shape[1] != ZV.shape[1]:
        raise ShapeError(f"factor ranks differ: {ZU.shape[1]} vs {ZV.shape[1]}")
    axes = _axes(shape)
    P = shape.fft_shape
    spec = (
        sfft.fftn(_stack_columns(ZU, shape.pencil), s=P, axes=axes)
        * sfft.fftn(_stack_columns(ZV.conj(), shape.col_pencil), s=P, axes=axes)
    ).sum(axis=0)
    full = sfft.ifftn(spec)[tuple(slice(0, N) for N in shape.dims)]
    return full.reshape(-1) / shape.sqrt_weights


class HankelLift(LinearOperator):
    """Implicit ``R x Cl`` operator representing ``G z``."""

    def __init__(self, shape: HankelShape, z):
        self.hshape = shape
        self.z = np.asarray(_as_flat(shape, z), dtype=complex)
        self._z_hat = _signal_hat(shape, self.z)
        super().__init__(dtype=np.complex128, shape=(shape.rows, shape.cols))

    def _matmat(self, B):
        s = self.hshape
        return _correlate(s, self._z_hat, np.asarray(B), s.col_pencil, s.pencil)

    def _matvec(self, x):
        return self._matmat(np.asarray(x).reshape(-1, 1))[:, 0]

    def _rmatmat(self, A):
        s = self.hshape
        return _correlate(s, self._z_hat, np.asarray(A).conj(), s.pencil, s.col_pencil).conj()

    def _rmatvec(self, x):
        return self._rmatmat(np.asarray(x).reshape(-1, 1))[:, 0]

    def _adjoint(self):
        return _AdjointLift(self)

    def dense(self, limit: int = DENSE_LIMIT) -> np.ndarray:
        """Materialize the lifted matrix (refused above ``limit`` entries)."""
        s = self.hshape
        if s.rows * s.cols > limit:
            raise ShapeError(f"dense lift of {s.rows}x{s.cols} exceeds limit {limit}")
        u = d_scale(s, self.z, "inverse").reshape(s.dims)
        idx = tuple(
            np.add.outer(np.arange(k), np.arange(L)) for k, L in zip(s.pencil, s.col_pencil)
        )
        # broadcast per-axis (n_i, L_i) index tables to (n_1..n_d, L_1..L_d)
        d = s.d
        grids = []
        for ax, t in enumerate(idx):
            shape_ax = [1] * (2 * d)
            shape_ax[ax] = t.shape[0]
            shape_ax[d + ax] = t.shape[1]
            grids.append(t.reshape(shape_ax))
        return u[tuple(grids)].reshape(s.rows, s.cols)


class _AdjointLift(LinearOperator):
    def __init__(self, lift: HankelLift):
        self._lift = lift
        super().__init__(dtype=lift.dtype, shape=(lift.shape[1], lift.shape[0]))

    def _matmat(self, A):
        return self._lift._rmatmat(A)

    def _matvec(self, x):
        return self._lift._rmatvec(x)

    def _rmatmat(self, B):
        return self._lift._matmat(B)

    def _rmatvec(self, x):
        return self._lift._matvec(x)

    def _adjoint(self):
        return self._lift


def g_apply(shape: HankelShape, z, dense: bool = False):
    """Lift ``z`` to ``G z``.

    Returns an implicit :class:`HankelLift` unless ``dense`` is true, in which
    case the matrix is materialized (subject to :data:`DENSE_LIMIT`).
    """
    lift = HankelLift(shape, z)
    return lift.dense() if dense else lift
