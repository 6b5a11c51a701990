"""Dense complex tensor algebra shared by every other module.

Tensors are plain ``numpy.ndarray`` objects of dtype ``complex128``.  PEPS site
tensors use the fixed axis order ``(physical, up, left, down, right)``; the
helpers here are agnostic to that convention and work on axis positions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from . import backend

CDTYPE = np.complex128


class DimensionError(ValueError):
    """Raised when paired axes of a contraction have different extents."""


class DegenerateMatrixWarning(RuntimeWarning):
    """A matrix had no eigenvalues left after the pseudoinverse cutoff."""


@dataclass(frozen=True)
class PinvSettings:
    """Relative eigenvalue cutoff used for pseudoinverses and condition numbers."""

    relative_cutoff: float = 1e-10

    def __post_init__(self):
        if not self.relative_cutoff >= 0.0:
            raise ValueError("relative_cutoff must be non-negative")


@dataclass
class Factorization:
    """Result of a QR, LQ or SVD split.

    ``factors`` is ``(Q, R)`` for QR, ``(L, Q)`` for LQ and ``(U, S, V)`` for the
    SVD.  The first factor carries the row axes plus a trailing new bond, the
    last factor carries a leading new bond plus the column axes.
    """

    factors: tuple
    discarded_weight: float = 0.0
    rank_kept: int = 0


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=CDTYPE)


def contract(a: np.ndarray, b: np.ndarray, pairs: Sequence[tuple[int, int]]) -> np.ndarray:
    """Sum over the paired axes of ``a`` and ``b``.

    The result carries the unpaired axes of ``a`` followed by those of ``b``,
    each in their original order.
    """
    axes_a = [p[0] for p in pairs]
    axes_b = [p[1] for p in pairs]
    for i, j in pairs:
        if a.shape[i] != b.shape[j]:
            raise DimensionError(
                f"axis {i} of a has extent {a.shape[i]} but axis {j} of b has {b.shape[j]}"
            )
    return np.tensordot(a, b, axes=(axes_a, axes_b))


def _matricize(t: np.ndarray, row_axes: Sequence[int]):
    row_axes = [ax % t.ndim for ax in row_axes]
    if not row_axes or len(row_axes) >= t.ndim:
        raise ValueError("row_axes must be a non-empty proper subset of the axes")
    if len(set(row_axes)) != len(row_axes):
        raise ValueError("row_axes contains duplicates")
    col_axes = [ax for ax in range(t.ndim) if ax not in row_axes]
    row_shape = tuple(t.shape[ax] for ax in row_axes)
    col_shape = tuple(t.shape[ax] for ax in col_axes)
    mat = np.transpose(t, row_axes + col_axes).reshape(
        math.prod(row_shape), math.prod(col_shape)
    )
    return mat, row_shape, col_shape


def qr_split(t: np.ndarray, row_axes: Sequence[int]) -> Factorization:
    """Thin QR of ``t`` matricized as ``row_axes`` x remaining axes.

    Returns ``Q`` with shape ``row_shape + (k,)`` and ``R`` with shape
    ``(k,) + col_shape`` where ``k = min(rows, cols)``.
    """
    mat, row_shape, col_shape = _matricize(t, row_axes)
    q, r = backend.qr(mat)
    k = q.shape[1]
    return Factorization((q.reshape(row_shape + (k,)), r.reshape((k,) + col_shape)), 0.0, k)


def lq_split(t: np.ndarray, row_axes: Sequence[int]) -> Factorization:
    """Thin LQ of ``t``; ``Q`` has orthonormal rows on the column axes."""
    mat, row_shape, col_shape = _matricize(t, row_axes)
    lmat, qmat = backend.lq(mat)
    k = lmat.shape[1]
    return Factorization((lmat.reshape(row_shape + (k,)), qmat.reshape((k,) + col_shape)), 0.0, k)


def _svd(mat: np.ndarray):
    try:
        return scipy.linalg.svd(mat, full_matrices=False, check_finite=False)
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(
            mat, full_matrices=False, check_finite=False, lapack_driver="gesvd"
        )


def svd_truncate(
    t: np.ndarray, row_axes: Sequence[int], max_rank: int, cutoff: float = 0.0
) -> Factorization:
    """Truncated SVD keeping at most ``max_rank`` singular values.

    Values below ``cutoff`` times the largest one are dropped as well.  Ties at
    the cut are resolved by the LAPACK ordering (first ``max_rank`` kept).
    """
    if max_rank < 1:
        raise ValueError("max_rank must be >= 1")
    mat, row_shape, col_shape = _matricize(t, row_axes)
    u, s, vh = _svd(mat)
    keep = min(max_rank, s.size)
    if s.size and cutoff > 0.0:
        keep = min(keep, max(1, int(np.count_nonzero(s > cutoff * s[0]))))
    keep = max(keep, 1) if s.size else 0
    discarded = float(np.sum(s[keep:] ** 2))
    u = u[:, :keep].reshape(row_shape + (keep,))
    vh = vh[:keep].reshape((keep,) + col_shape)
    return Factorization((u, s[:keep].copy(), vh), discarded, keep)


def hermitian_part(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


def hermitian_positive_approximant(m: np.ndarray) -> tuple[np.ndarray, float]:
    """Square root ``X`` of the closest positive semidefinite matrix to ``m``.

    ``m`` is symmetrized, diagonalized, and its negative eigenvalues are set
    to zero, so that ``X @ X.conj().T`` is the positive approximant.  Columns
    belonging to clipped or zero eigenvalues are dropped.  The second return
    value is the magnitude of the sum of the clipped eigenvalues.
    """
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    w, u = scipy.linalg.eigh(hermitian_part(m), check_finite=False)
    clipped = float(abs(np.sum(w[w < 0.0])))
    pos = w > 0.0
    x = u[:, pos] * np.sqrt(w[pos])
    return x, clipped


def _kept_spectrum(m: np.ndarray, s: PinvSettings):
    w, u = scipy.linalg.eigh(hermitian_part(np.asarray(m)), check_finite=False)
    wmax = w[-1] if w.size else 0.0
    if wmax <= 0.0:
        return w[:0], u[:, :0]
    keep = w > s.relative_cutoff * wmax
    keep &= w > 0.0
    return w[keep], u[:, keep]


def pseudo_inverse(m: np.ndarray, s: PinvSettings = PinvSettings()) -> np.ndarray:
    """Pseudoinverse of a hermitian positive semidefinite matrix.

    Only eigenvalues larger than ``s.relative_cutoff`` times the largest one
    are inverted; the rest of the space is mapped to zero.
    """
    w, u = _kept_spectrum(m, s)
    if w.size == 0:
        warnings.warn("pseudoinverse of a matrix with empty kept spectrum", DegenerateMatrixWarning)
        return np.zeros_like(np.asarray(m, dtype=CDTYPE))
    return (u / w) @ u.conj().T


def condition_number(m: np.ndarray, s: PinvSettings = PinvSettings()) -> float:
    """Largest over smallest kept eigenvalue; NaN when nothing survives the cutoff."""
    w, _ = _kept_spectrum(m, s)
    if w.size == 0:
        return math.nan
    return float(w[-1] / w[0])


def pinv_solve(m: np.ndarray, b: np.ndarray, s: PinvSettings = PinvSettings()):
    """Solve ``m x = b`` with the pseudoinverse; returns ``(x, condition_number)``."""
    w, u = _kept_spectrum(m, s)
    if w.size == 0:
        warnings.warn("linear solve with empty kept spectrum", DegenerateMatrixWarning)
        return np.zeros(m.shape[1:] + b.shape[1:], dtype=CDTYPE), math.nan
    x = u @ ((u.conj().T @ b) / (w if b.ndim == 1 else w[:, None]))
    return x, float(w[-1] / w[0])


def regularized_inverse(m: np.ndarray, rel_cutoff: float = 1e-12) -> tuple[np.ndarray, float]:
    """SVD-based inverse of a general square matrix with small singular values dropped.

    Returns the inverse and the condition number of ``m``.
    """
    u, s, vh = _svd(np.asarray(m))
    if s.size == 0 or s[0] == 0.0:
        return np.zeros_like(m.conj().T), math.inf
    keep = s > rel_cutoff * s[0]
    cond = float(s[0] / s[-1]) if s[-1] > 0 else math.inf
    inv = (vh[keep].conj().T / s[keep]) @ u[:, keep].conj().T
    return inv, cond
