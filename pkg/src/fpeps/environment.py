"""Norm-network contraction: boundary MPOs, separable boundaries, row strips.

The lattice is contracted row by row from the top.  Bottom boundaries are
top boundaries of the vertically mirrored state and vertical bonds are
horizontal bonds of the transposed state, so every routine here only deals
with rows absorbed from above and with horizontal neighbours.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels as K
from .peps import Peps, ScalingError
from .tensors import (
    CDTYPE,
    PinvSettings,
    hermitian_positive_approximant,
    lq_split,
    qr_split,
    svd_truncate,
)

log = logging.getLogger(__name__)

_ONE4 = np.ones((1, 1, 1, 1), dtype=CDTYPE)


class DegenerateEnvironmentError(ArithmeticError):
    """An environment collapsed to zero."""


class StagnationWarning(RuntimeWarning):
    """Boundary fit stopped improving before reaching its tolerance."""


@dataclass(frozen=True)
class ContractionSettings:
    D_prime: int = 8
    als_sweeps_max: int = 6
    als_rel_tol: float = 1e-12
    pinv: PinvSettings = PinvSettings()
    compute_residual: bool = False

    def __post_init__(self):
        if self.D_prime < 1:
            raise ValueError("D_prime must be >= 1")
        if self.als_sweeps_max < 1:
            raise ValueError("als_sweeps_max must be >= 1")

    @classmethod
    def for_state(cls, psi: Peps, **kwargs) -> "ContractionSettings":
        """Boundary dimension ``2 D^2``."""
        return cls(D_prime=max(1, 2 * psi.D**2), **kwargs)


@dataclass(frozen=True)
class ClusterSettings:
    delta: int
    inner: ContractionSettings = ContractionSettings()

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("cluster size delta must be >= 0")


@dataclass
class BoundaryMpo:
    """Contraction of all rows above a given row, as an MPO of bond ``<= D'``.

    Tensors have axes ``(left, ket, bra, right)``; ``ket``/``bra`` attach to
    the up legs of the next row.  The represented object is
    ``exp(log_scale)`` times the chain.
    """

    tensors: list[np.ndarray]
    orientation: str = "top"
    row: int = 0
    log_scale: float = 0.0
    residual: float = 0.0
    sweeps: int = 0

    @property
    def bond_dims(self) -> list[int]:
        return [t.shape[3] for t in self.tensors[:-1]]

    def copy(self) -> "BoundaryMpo":
        return BoundaryMpo(
            [t.copy() for t in self.tensors],
            self.orientation,
            self.row,
            self.log_scale,
            self.residual,
            self.sweeps,
        )


@dataclass
class SeparableBoundary:
    """Bond-one boundary; every local factor is a PSD matrix on (ket, bra)."""

    mats: list[np.ndarray]
    orientation: str = "top"
    row: int = 0
    log_scale: float = 0.0

    def as_mpo(self) -> BoundaryMpo:
        return BoundaryMpo(
            [m[None, :, :, None] for m in self.mats], self.orientation, self.row, self.log_scale
        )


def trivial_boundary(cols: int, orientation: str = "top") -> BoundaryMpo:
    return BoundaryMpo([_ONE4.copy() for _ in range(cols)], orientation, 0, 0.0)


def trivial_separable(cols: int, orientation: str = "top") -> SeparableBoundary:
    return SeparableBoundary([np.ones((1, 1), dtype=CDTYPE) for _ in range(cols)], orientation)


def _safe_log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


# -- boundary_step -------------------------------------------------------------


def _bond_caps(tops, ket, bra, D_prime: int) -> tuple[list[int], list[int]]:
    """Exact product bonds and the largest useful fit bonds between columns."""
    n = len(ket)
    exact = [tops[c].shape[3] * ket[c].shape[4] * bra[c].shape[4] for c in range(n - 1)]
    caps = [min(D_prime, e) for e in exact]
    prev = 1
    for c in range(n - 1):
        caps[c] = min(caps[c], prev * ket[c].shape[3] * bra[c].shape[3])
        prev = caps[c]
    nxt = 1
    for c in range(n - 2, -1, -1):
        caps[c] = min(caps[c], nxt * ket[c + 1].shape[3] * bra[c + 1].shape[3])
        nxt = caps[c]
    return exact, caps


def _zip_up(tops, ket, bra, caps):
    n = len(ket)
    env = _ONE4  # (t, lk, lb, chi)
    out = []
    for c in range(n):
        x = K.absorb_core(env, tops[c], ket[c], bra[c])  # chi t' dk rk db rb
        x = x.transpose(0, 2, 4, 1, 3, 5)
        if c == n - 1:
            out.append(x.reshape(x.shape[:3] + (1,)))
            break
        u, s, vh = svd_truncate(x, [0, 1, 2], caps[c]).factors
        out.append(u)
        scale = s[0] if s.size and s[0] > 0 else 1.0
        env = ((s / scale)[:, None, None, None] * vh).transpose(1, 2, 3, 0)
    return out


def _left_canonical(F):
    F = list(F)
    for c in range(len(F) - 1):
        q, r = qr_split(F[c], [0, 1, 2]).factors
        F[c] = q
        F[c + 1] = K.td(r, F[c + 1], ([1], [0]))
    return F


def _guess_fits(guess, caps, ket, bra) -> bool:
    if guess is None or len(guess) != len(ket):
        return False
    n = len(ket)
    for c, g in enumerate(guess):
        left = 1 if c == 0 else caps[c - 1]
        right = 1 if c == n - 1 else caps[c]
        if g.shape != (left, ket[c].shape[3], bra[c].shape[3], right):
            return False
    return True


def _target_norm_sq(tops, ket, bra) -> float:
    env = np.ones((1, 1), dtype=CDTYPE)
    for c in range(len(ket)):
        t = K.exact_column(tops[c], ket[c], bra[c])
        x = np.tensordot(env, t, ([0], [0]))
        env = np.tensordot(x, t.conj(), ([0, 1, 2], [0, 1, 2]))
    return float(env.real.ravel()[0])


def _als_fit(tops, ket, bra, F, s: ContractionSettings):
    """One-site variational fit of ``F`` (left canonical) to the target chain."""
    n = len(ket)
    LE = [None] * (n + 1)
    RE = [None] * (n + 1)
    LE[0] = _ONE4
    RE[n] = _ONE4
    for c in range(n - 1):
        LE[c + 1] = K.absorb_left(LE[c], tops[c], ket[c], bra[c], F[c].conj())

    prev = None
    best = None
    declines = 0
    halves = 0
    center = n - 1
    nsq = 0.0
    for half in range(2 * s.als_sweeps_max):
        halves += 1
        going_left = half % 2 == 0
        order = range(n - 1, -1, -1) if going_left else range(n)
        for i, c in enumerate(order):
            if i > 0 or half == 0:
                F[c] = K.open_bottom(LE[c], tops[c], ket[c], bra[c], RE[c + 1])
            if i == n - 1:
                center = c
                break
            if going_left:
                F[c] = lq_split(F[c], [0]).factors[1]
                RE[c] = K.absorb_right(RE[c + 1], tops[c], ket[c], bra[c], F[c].conj())
            else:
                F[c] = qr_split(F[c], [0, 1, 2]).factors[0]
                LE[c + 1] = K.absorb_left(LE[c], tops[c], ket[c], bra[c], F[c].conj())
        if n == 1:
            center = 0
        nsq = float(np.vdot(F[center], F[center]).real)
        if best is None or nsq >= best[0]:
            best = (nsq, [f.copy() for f in F], center)
        if prev is not None:
            if nsq < prev * (1.0 - 1e-12):
                declines += 1
                if declines >= 2:
                    warnings.warn(
                        "boundary fit norm decreased on two consecutive sweeps; keeping best fit",
                        StagnationWarning,
                    )
                    break
            else:
                declines = 0
            if abs(nsq - prev) <= s.als_rel_tol * max(nsq, 1e-300):
                break
        prev = nsq
    nsq, F, center = best
    return F, center, nsq, halves


def boundary_step(
    b: BoundaryMpo,
    ket_row: Sequence[np.ndarray],
    s: ContractionSettings,
    bra_row: Sequence[np.ndarray] | None = None,
    guess: Sequence[np.ndarray] | None = None,
) -> BoundaryMpo:
    """Absorb one row (ket and bra layer) into a boundary MPO.

    If the exact product has bonds ``<= D'`` it is kept as is.  Otherwise the
    new MPO is fitted by one-site alternating least squares, starting from
    ``guess`` when its shapes fit and from a zip-up SVD otherwise.
    """
    tops = b.tensors
    ket = list(ket_row)
    bra = [t.conj() for t in (ket_row if bra_row is None else bra_row)]
    n = len(ket)
    if len(tops) != n or len(bra) != n:
        raise ValueError("boundary and row lengths differ")
    for c in range(n):
        if tops[c].shape[1] != ket[c].shape[1] or tops[c].shape[2] != bra[c].shape[1]:
            raise ValueError(f"boundary legs do not match row up legs at column {c}")
    exact, caps = _bond_caps(tops, ket, bra, s.D_prime)
    log_scale = b.log_scale

    if all(e <= s.D_prime for e in exact):
        out = []
        for c in range(n):
            t = K.exact_column(tops[c], ket[c], bra[c])
            nrm = float(np.linalg.norm(t))
            if nrm > 0:
                t = t / nrm
            log_scale += _safe_log(nrm)
            out.append(t)
        return BoundaryMpo(out, b.orientation, b.row + 1, log_scale, 0.0, 0)

    if _guess_fits(guess, caps, ket, bra):
        F = _left_canonical([g.astype(CDTYPE, copy=True) for g in guess])
    else:
        F = _left_canonical(_zip_up(tops, ket, bra, caps))
    F, center, nsq, halves = _als_fit(tops, ket, bra, F, s)
    nrm = math.sqrt(max(nsq, 0.0))
    residual = math.nan
    if s.compute_residual:
        tsq = _target_norm_sq(tops, ket, bra)
        residual = (tsq - nsq) / tsq if tsq > 0 else 0.0
        log.debug("boundary fit residual %.3e after %d half sweeps", residual, halves)
    if nrm > 0:
        F[center] = F[center] / nrm
    log_scale += _safe_log(nrm)
    return BoundaryMpo(F, b.orientation, b.row + 1, log_scale, residual, halves)


def close_boundaries(top: BoundaryMpo, bottom: BoundaryMpo) -> tuple[complex, float]:
    """Contract a top and a bottom boundary that face the same row gap.

    Returns ``(mantissa, log_scale)``.
    """
    env = np.ones((1, 1), dtype=CDTYPE)
    lg = top.log_scale + bottom.log_scale
    for a, c in zip(top.tensors, bottom.tensors):
        x = np.tensordot(env, a, ([0], [0]))  # e k b t'
        env = np.tensordot(x, c, ([0, 1, 2], [0, 1, 2]))  # t' e'
        nrm = float(np.linalg.norm(env))
        if nrm > 0:
            env = env / nrm
            lg += math.log(nrm)
    return complex(env.ravel()[0]), lg


def finish_boundary(b: BoundaryMpo) -> tuple[complex, float]:
    """Value of a boundary that has absorbed every row."""
    return close_boundaries(b, trivial_boundary(len(b.tensors)))


# -- separable boundaries --------------------------------------------------------


def _psd_matrix(m: np.ndarray) -> np.ndarray:
    x, _ = hermitian_positive_approximant(m)
    return x @ x.conj().T


def separable_boundary_step(
    sb: SeparableBoundary,
    ket_row: Sequence[np.ndarray],
    sweeps_max: int = 6,
    rel_tol: float = 1e-10,
) -> SeparableBoundary:
    """Absorb one row into a bond-one positive boundary.

    The new local matrices are fitted by alternating least squares with bond
    dimension one; after every local solve the matrix is replaced by its
    positive semidefinite approximant.
    """
    ket = list(ket_row)
    bra = [t.conj() for t in ket]
    m = sb.mats
    n = len(ket)
    F = []
    for t in ket:
        dk = t.shape[3]
        F.append(np.eye(dk, dtype=CDTYPE) / math.sqrt(dk))
    one = np.ones((1, 1), dtype=CDTYPE)
    LE = [one] + [None] * n
    RE = [None] * n + [one]
    for c in range(n - 1):
        LE[c + 1] = _unit(K.sep_left(LE[c], m[c], ket[c], bra[c], F[c].conj()))

    prev = None
    nsq = 0.0
    center = n - 1
    for half in range(2 * sweeps_max):
        going_left = half % 2 == 0
        order = range(n - 1, -1, -1) if going_left else range(n)
        for i, c in enumerate(order):
            if i > 0 or half == 0:
                f = _psd_matrix(K.sep_open(LE[c], m[c], ket[c], bra[c], RE[c + 1]))
                if not np.any(f):
                    raise DegenerateEnvironmentError(
                        f"separable boundary collapsed to zero at column {c} (state locally null)"
                    )
                F[c] = f
            if i == n - 1:
                center = c
                break
            F[c] = F[c] / np.linalg.norm(F[c])
            if going_left:
                RE[c] = _unit(K.sep_right(RE[c + 1], m[c], ket[c], bra[c], F[c].conj()))
            else:
                LE[c + 1] = _unit(K.sep_left(LE[c], m[c], ket[c], bra[c], F[c].conj()))
        nsq = float(np.vdot(F[center], F[center]).real)
        if prev is not None and abs(nsq - prev) <= rel_tol * nsq:
            break
        prev = nsq
    # environments were rescaled to unit norm, so the scale is recomputed exactly
    nrm = math.sqrt(nsq)
    F[center] = F[center] / nrm
    val, lg = _separable_overlap(sb, ket, bra, F)
    return SeparableBoundary(F, sb.orientation, sb.row + 1, lg + _safe_log(abs(val)))


def _unit(e: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(e)
    return e / nrm if nrm > 0 else e


def _separable_overlap(sb, ket, bra, F):
    """<F|T> for the normalized fit, as (mantissa, log)."""
    env = np.ones((1, 1), dtype=CDTYPE)
    lg = sb.log_scale
    for c in range(len(ket)):
        env = K.sep_left(env, sb.mats[c], ket[c], bra[c], F[c].conj())
        nrm = float(np.linalg.norm(env))
        if nrm == 0:
            raise DegenerateEnvironmentError("separable boundary has zero overlap with its target")
        env = env / nrm
        lg += math.log(nrm)
    return complex(env.ravel()[0]), lg


# -- boundary sequences ---------------------------------------------------------------


class BoundaryCache:
    """Previous boundaries keyed by (label, rows absorbed), used as warm starts."""

    def __init__(self):
        self._store: dict = {}

    def get(self, key):
        b = self._store.get(key)
        return None if b is None else b.tensors

    def put(self, key, b: BoundaryMpo):
        self._store[key] = b

    def clear(self):
        self._store.clear()


def top_boundaries(
    psi: Peps,
    s: ContractionSettings,
    upto: int | None = None,
    cache: BoundaryCache | None = None,
    label: str = "top",
) -> list[BoundaryMpo]:
    """``out[r]`` is the boundary of rows ``0..r-1``; ``out[0]`` is trivial."""
    upto = psi.rows if upto is None else upto
    out = [trivial_boundary(psi.cols, label)]
    for r in range(upto):
        guess = cache.get((label, r + 1)) if cache is not None else None
        b = boundary_step(out[-1], psi.row(r), s, guess=guess)
        if cache is not None:
            cache.put((label, r + 1), b)
        out.append(b)
    return out


def bottom_boundaries(
    psi: Peps, s: ContractionSettings, cache: BoundaryCache | None = None, label: str = "bottom"
) -> list[BoundaryMpo]:
    """``out[r]`` is the boundary of rows ``r+1..L-1`` seen from row ``r``."""
    flipped = top_boundaries(psi.flipped(), s, psi.rows - 1, cache, label)
    return [flipped[psi.rows - 1 - r] for r in range(psi.rows)]


def separable_tops(psi: Peps, upto: int | None = None) -> list[SeparableBoundary]:
    upto = psi.rows if upto is None else upto
    out = [trivial_separable(psi.cols)]
    for r in range(upto):
        out.append(separable_boundary_step(out[-1], psi.row(r)))
    return out


def cluster_top(
    psi: Peps, r: int, c: ClusterSettings, seps: Sequence[SeparableBoundary] | None = None
) -> BoundaryMpo:
    """Boundary above row ``r``: separable beyond ``delta`` rows, fitted within."""
    start = max(0, r - c.delta)
    if start == 0:
        b = trivial_boundary(psi.cols)
    else:
        sb = seps[start] if seps is not None else separable_tops(psi, start)[start]
        b = sb.as_mpo()
    for k in range(start, r):
        b = boundary_step(b, psi.row(k), c.inner)
    return b


def cluster_environment(psi: Peps, center_row: int, c: ClusterSettings):
    """(top, bottom) boundaries of ``center_row`` for cluster size ``c.delta``."""
    if c.delta > psi.rows - 1:
        raise ValueError(f"cluster size {c.delta} exceeds L-1 = {psi.rows - 1}")
    if not 0 <= center_row < psi.rows:
        raise ValueError("row out of range")
    top = cluster_top(psi, center_row, c)
    bottom = cluster_top(psi.flipped(), psi.rows - 1 - center_row, c)
    return top, bottom


def row_environments(psi: Peps, s: ContractionSettings, delta: int | None = None):
    """Top and bottom boundaries of every row, full (``delta=None``) or cluster."""
    if delta is None or delta >= psi.rows - 1:
        tops = top_boundaries(psi, s, psi.rows - 1)
        bottoms = bottom_boundaries(psi, s)
        return tops, bottoms
    c = ClusterSettings(delta, s)
    flipped = psi.flipped()
    seps_t = separable_tops(psi, psi.rows - 1)
    seps_b = separable_tops(flipped, psi.rows - 1)
    tops = [cluster_top(psi, r, c, seps_t) for r in range(psi.rows)]
    bottoms = [cluster_top(flipped, psi.rows - 1 - r, c, seps_b) for r in range(psi.rows)]
    return tops, bottoms


def log_norm_squared(psi: Peps, s: ContractionSettings) -> float:
    """``log <psi|psi>`` from a full top-down boundary sweep."""
    b = top_boundaries(psi, s)[-1]
    val, lg = finish_boundary(b)
    if val.real <= 0:
        raise ScalingError(f"contracted norm is not positive ({val})")
    return lg + math.log(val.real)


# -- row strips ---------------------------------------------------------------------------------


@dataclass
class PairEnvironment:
    """Six tensors surrounding a horizontal pair of sites, closing into a ring."""

    left: np.ndarray  # (t, lk, lb, s)
    top_left: np.ndarray  # (t, uk, ub, t')
    top_right: np.ndarray
    right: np.ndarray  # (t'', rk, rb, s'')
    bottom_right: np.ndarray  # (s', dk, db, s'')
    bottom_left: np.ndarray  # (s, dk, db, s')

    def close(self, a_l: np.ndarray, a_r: np.ndarray) -> complex:
        e = K.absorb_left(self.left, self.top_left, a_l, a_l.conj(), self.bottom_left)
        e = K.absorb_left(e, self.top_right, a_r, a_r.conj(), self.bottom_right)
        return complex(np.tensordot(e, self.right, 4))

    def check_ring(self) -> None:
        pairs = [
            (self.left.shape[0], self.top_left.shape[0]),
            (self.top_left.shape[3], self.top_right.shape[0]),
            (self.top_right.shape[3], self.right.shape[0]),
            (self.right.shape[3], self.bottom_right.shape[3]),
            (self.bottom_right.shape[0], self.bottom_left.shape[3]),
            (self.bottom_left.shape[0], self.left.shape[3]),
        ]
        for a, b in pairs:
            if a != b:
                raise ValueError("pair environment ring does not close")


class RowStrip:
    """Exact contraction of one row between its top and bottom boundaries.

    Left and right environments are cached and kept at unit norm; their log
    scales are tracked so that the strip can also return the full norm.
    """

    def __init__(self, top: BoundaryMpo, bottom: BoundaryMpo, ket_row, bra_row=None):
        self.top = top.tensors
        self.bot = bottom.tensors
        self.ket = list(ket_row)
        self.bra = [t.conj() for t in (ket_row if bra_row is None else bra_row)]
        self.n = len(self.ket)
        self.log_base = top.log_scale + bottom.log_scale
        self._left = {0: (_ONE4, 0.0)}
        self._right = {self.n: (_ONE4, 0.0)}

    def set_sites(self, c: int, tensors: Sequence[np.ndarray]) -> None:
        for k, t in enumerate(tensors):
            self.ket[c + k] = t
            self.bra[c + k] = t.conj()
        last = c + len(tensors) - 1
        self._left = {k: v for k, v in self._left.items() if k <= c}
        self._right = {k: v for k, v in self._right.items() if k > last}

    def left(self, c: int):
        """Environment of columns ``< c`` as ``(tensor, log)``."""
        k = max(j for j in self._left if j <= c)
        e, lg = self._left[k]
        while k < c:
            e = K.absorb_left(e, self.top[k], self.ket[k], self.bra[k], self.bot[k])
            nrm = float(np.linalg.norm(e))
            if nrm > 0:
                e = e / nrm
                lg += math.log(nrm)
            k += 1
            self._left[k] = (e, lg)
        return e, lg

    def right(self, c: int):
        """Environment of columns ``>= c`` as ``(tensor, log)``."""
        k = min(j for j in self._right if j >= c)
        e, lg = self._right[k]
        while k > c:
            k -= 1
            e = K.absorb_right(e, self.top[k], self.ket[k], self.bra[k], self.bot[k])
            nrm = float(np.linalg.norm(e))
            if nrm > 0:
                e = e / nrm
                lg += math.log(nrm)
            self._right[k] = (e, lg)
        return e, lg

    def norm(self) -> tuple[complex, float]:
        e, lg = self.right(0)
        return complex(e.ravel()[0]), lg + self.log_base

    def rdm1(self, c: int) -> np.ndarray:
        """Normalized one-site density matrix ``rho[p, p']``."""
        el, _ = self.left(c)
        er, _ = self.right(c + 1)
        h = K.half_left_open(el, self.top[c], self.ket[c], self.bra[c], self.bot[c])
        rho = np.tensordot(h, er, ([0, 2, 4, 5], [0, 1, 2, 3]))
        return _normalize_rho(rho)

    def rdm2(self, c: int) -> np.ndarray:
        """Normalized density matrix of sites ``c, c+1`` as ``rho[p, q, p', q']``."""
        el, _ = self.left(c)
        er, _ = self.right(c + 2)
        hl = K.half_left_open(el, self.top[c], self.ket[c], self.bra[c], self.bot[c])
        hr = K.half_right_open(
            er, self.top[c + 1], self.ket[c + 1], self.bra[c + 1], self.bot[c + 1]
        )
        rho = np.tensordot(hl, hr, ([0, 2, 4, 5], [0, 2, 4, 5]))  # p p' q q'
        d1, d2 = rho.shape[0], rho.shape[2]
        rho = rho.transpose(0, 2, 1, 3)
        return _normalize_rho(rho.reshape(d1 * d2, d1 * d2)).reshape(d1, d2, d1, d2)

    def pair_environment(self, c: int) -> PairEnvironment:
        el, _ = self.left(c)
        er, _ = self.right(c + 2)
        return PairEnvironment(
            el, self.top[c], self.top[c + 1], er, self.bot[c + 1], self.bot[c]
        )

    def site_environment(self, c: int) -> np.ndarray:
        """Single-site norm tensor with axes ``(uk, lk, dk, rk, ub, lb, db, rb)``."""
        el, _ = self.left(c)
        er, _ = self.right(c + 1)
        x = np.tensordot(el, self.top[c], ([0], [0]))  # lk lb s uk ub t'
        x = np.tensordot(x, self.bot[c], ([2], [0]))  # lk lb uk ub t' dk db s'
        x = np.tensordot(x, er, ([4, 7], [0, 3]))  # lk lb uk ub dk db rk rb
        return x.transpose(2, 0, 4, 6, 3, 1, 5, 7)

    def product_value(self, ops: dict[int, np.ndarray]) -> tuple[complex, float]:
        """Strip contracted with operators inserted on the ket layer."""
        e, lg = _ONE4, self.log_base
        for c in range(self.n):
            ket = self.ket[c]
            if c in ops:
                ket = np.tensordot(ops[c], ket, ([1], [0]))
            e = K.absorb_left(e, self.top[c], ket, self.bra[c], self.bot[c])
            nrm = float(np.linalg.norm(e))
            if nrm > 0:
                e = e / nrm
                lg += math.log(nrm)
        return complex(e.ravel()[0]), lg


def _normalize_rho(rho: np.ndarray) -> np.ndarray:
    tr = np.trace(rho)
    if tr == 0:
        raise DegenerateEnvironmentError("reduced density matrix has zero trace")
    return rho / tr


def pair_environment(psi: Peps, bond, s: ContractionSettings, delta: int | None = None):
    """Environment of the horizontal bond ``((r, c), (r, c + 1))``."""
    (r, c), (r2, c2) = bond
    if r2 != r or c2 != c + 1:
        raise ValueError("pair_environment expects a horizontal bond left to right")
    tops, bottoms = _envs_for_row(psi, r, s, delta)
    return RowStrip(tops, bottoms, psi.row(r)).pair_environment(c)


def single_site_environment(psi: Peps, site, s: ContractionSettings, delta=None) -> np.ndarray:
    r, c = site
    top, bottom = _envs_for_row(psi, r, s, delta)
    return RowStrip(top, bottom, psi.row(r)).site_environment(c)


def _envs_for_row(psi, r, s, delta):
    if delta is None or delta >= psi.rows - 1:
        top = top_boundaries(psi, s, r)[-1]
        bottom = top_boundaries(psi.flipped(), s, psi.rows - 1 - r)[-1]
        return top, bottom
    return cluster_environment(psi, r, ClusterSettings(delta, s))


# -- expectation values ---------------------------------------------------------------


def _expect(op: np.ndarray, rho: np.ndarray):
    val = np.trace(op @ rho)
    if np.allclose(op, op.conj().T):
        return float(val.real)
    return complex(val)


def expect_local(psi: Peps, site, op, s: ContractionSettings | None = None, delta=None):
    """``<psi|op|psi> / <psi|psi>``; ``delta`` selects the cluster method."""
    s = s or ContractionSettings.for_state(psi)
    r, c = site
    top, bottom = _envs_for_row(psi, r, s, delta)
    rho = RowStrip(top, bottom, psi.row(r)).rdm1(c)
    return _expect(np.asarray(op), rho)


def _ratio(num: tuple[complex, float], den: tuple[complex, float]) -> complex:
    if num[0] == 0:
        return 0.0
    return num[0] / den[0] * math.exp(num[1] - den[1])


def _row_product(psi, r, ops_by_col, s, delta):
    top, bottom = _envs_for_row(psi, r, s, delta)
    strip = RowStrip(top, bottom, psi.row(r))
    return _ratio(strip.product_value(ops_by_col), strip.norm())


def expect_product(psi: Peps, ops: dict, s: ContractionSettings | None = None, delta=None):
    """Expectation value of a product of single-site operators at arbitrary sites."""
    s = s or ContractionSettings.for_state(psi)
    rows = sorted({r for r, _ in ops})
    cols = sorted({c for _, c in ops})
    if len(rows) == 1:
        return _row_product(psi, rows[0], {c: o for (_, c), o in ops.items()}, s, delta)
    if len(cols) == 1:
        return _row_product(psi.transposed(), cols[0], {r: o for (r, _), o in ops.items()}, s, delta)
    rmin, rmax = rows[0], rows[-1]
    if delta is None or delta >= psi.rows - 1:
        top = top_boundaries(psi, s, rmin)[-1]
        bottom = top_boundaries(psi.flipped(), s, psi.rows - 1 - rmax)[-1]
    else:
        c = ClusterSettings(delta, s)
        top = cluster_top(psi, rmin, c)
        bottom = cluster_top(psi.flipped(), psi.rows - 1 - rmax, c)
    b_op, b_plain = top, top
    for r in range(rmin, rmax + 1):
        row = psi.row(r)
        ket = [
            np.tensordot(ops[(r, c)], t, ([1], [0])) if (r, c) in ops else t
            for c, t in enumerate(row)
        ]
        b_op = boundary_step(b_op, ket, s, bra_row=row)
        b_plain = boundary_step(b_plain, row, s)
    return _ratio(close_boundaries(b_op, bottom), close_boundaries(b_plain, bottom))


def _classify(a, b) -> str:
    if a[0] == b[0]:
        return "horizontal"
    if a[1] == b[1]:
        return "vertical"
    if abs(a[0] - b[0]) == abs(a[1] - b[1]):
        return "diagonal"
    raise ValueError(f"sites {a} and {b} are not on a common row, column or diagonal")


def expect_two_point(
    psi: Peps,
    site_a,
    site_b,
    op_a,
    op_b,
    s: ContractionSettings | None = None,
    connected: bool = False,
    delta=None,
):
    """``<A_a B_b>``, or ``<A_a B_b> - <A_a><B_b>`` when ``connected``."""
    s = s or ContractionSettings.for_state(psi)
    site_a, site_b = tuple(site_a), tuple(site_b)
    op_a, op_b = np.asarray(op_a), np.asarray(op_b)
    if site_a == site_b:
        val = expect_local(psi, site_a, op_a @ op_b, s, delta)
    else:
        _classify(site_a, site_b)
        val = expect_product(psi, {site_a: op_a, site_b: op_b}, s, delta)
    if connected:
        val = val - expect_local(psi, site_a, op_a, s, delta) * expect_local(
            psi, site_b, op_b, s, delta
        )
    herm = np.allclose(op_a, op_a.conj().T) and np.allclose(op_b, op_b.conj().T)
    return float(np.real(val)) if herm else complex(val)


def correlation_sites(L: int, x: int, direction: str):
    """Two sites at distance ``x`` placed symmetrically about the lattice centre."""
    start = (L - 1 - x) // 2
    mid = L // 2
    if direction == "horizontal":
        return (mid, start), (mid, start + x)
    if direction == "vertical":
        return (start, mid), (start + x, mid)
    if direction == "diagonal":
        return (start, start), (start + x, start + x)
    raise ValueError(f"unknown direction {direction!r}")


def correlation_function(
    psi: Peps,
    op,
    xs: Sequence[int],
    direction: str = "vertical",
    s: ContractionSettings | None = None,
    connected: bool = True,
    delta=None,
) -> np.ndarray:
    """``G(x)`` for each distance in ``xs``."""
    out = []
    for x in xs:
        a, b = correlation_sites(psi.rows, x, direction)
        out.append(expect_two_point(psi, a, b, op, op, s, connected, delta))
    return np.asarray(out)


@dataclass
class Measurements:
    """Reduced density matrices of every site and nearest-neighbour bond."""

    rdm1: dict = field(default_factory=dict)
    rdm2_h: dict = field(default_factory=dict)
    rdm2_v: dict = field(default_factory=dict)
    log_norm: float = 0.0


def measure(psi: Peps, s: ContractionSettings, delta: int | None = None) -> Measurements:
    """All one-site and nearest-neighbour two-site density matrices."""
    out = Measurements()
    tops, bottoms = row_environments(psi, s, delta)
    for r in range(psi.rows):
        strip = RowStrip(tops[r], bottoms[r], psi.row(r))
        if r == 0:
            val, lg = strip.norm()
            out.log_norm = lg + _safe_log(val.real)
        for c in range(psi.cols):
            out.rdm1[(r, c)] = strip.rdm1(c)
        for c in range(psi.cols - 1):
            out.rdm2_h[(r, c)] = strip.rdm2(c)
    pt = psi.transposed()
    tops, bottoms = row_environments(pt, s, delta)
    for c in range(pt.rows):
        strip = RowStrip(tops[c], bottoms[c], pt.row(c))
        for r in range(pt.cols - 1):
            out.rdm2_v[(r, c)] = strip.rdm2(r)
    return out
