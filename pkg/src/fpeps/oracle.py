"""Brute-force references on small lattices (at most 16 sites).

Dense state vectors use row-major site order, the first site being the most
significant index; ``vector.reshape((d,) * N)`` gives one axis per site.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse.linalg as spla

from .models import ModelSpec, bond_hamiltonians
from .peps import Peps
from .tensors import CDTYPE

MAX_SITES = 16


class OracleSizeError(ValueError):
    """Lattice too large for the dense references."""


def _check_size(n: int) -> None:
    if n > MAX_SITES:
        raise OracleSizeError(f"{n} sites exceed the dense limit of {MAX_SITES}")


def peps_to_dense(psi: Peps) -> np.ndarray:
    """Amplitude vector of a PEPS by exact row-by-row contraction."""
    _check_size(psi.n_sites)
    acc = None  # axes: physical legs so far, then down legs of the last row
    for r in range(psi.rows):
        row = psi.tensors[r][0]  # p u l d r
        row = row[:, :, 0, :, :]  # p u d r
        for c in range(1, psi.cols):
            t = psi.tensors[r][c]
            row = np.tensordot(row, t, ([row.ndim - 1], [2]))
            # (p.., u.., d.., p, u, d, r) -> regroup
            k = c
            ps = list(range(k))
            us = list(range(k, 2 * k))
            ds = list(range(2 * k, 3 * k))
            n = 3 * k
            row = row.transpose(ps + [n] + us + [n + 1] + ds + [n + 2] + [n + 3])
        row = row[..., 0]  # p.. u.. d..
        cols = psi.cols
        if acc is None:
            acc = row.reshape(row.shape[: cols] + row.shape[2 * cols :])
        else:
            nphys = acc.ndim - cols
            acc = np.tensordot(
                acc, row, (list(range(nphys, nphys + cols)), list(range(cols, 2 * cols)))
            )
    return acc.reshape(-1).astype(CDTYPE)


def product_dense(vectors) -> np.ndarray:
    out = np.ones(1, dtype=CDTYPE)
    for v in vectors:
        out = np.kron(out, v)
    return out


class DenseHamiltonian:
    """Matrix-free sum of bond terms acting on dense state vectors."""

    def __init__(self, m: ModelSpec, rows: int, cols: int | None = None):
        cols = rows if cols is None else cols
        _check_size(rows * cols)
        self.rows, self.cols, self.d = rows, cols, m.d
        self.n = rows * cols
        self.dim = self.d**self.n
        self.terms = []
        for (a, b), h in bond_hamiltonians(m, rows, cols).items():
            i, j = a[0] * cols + a[1], b[0] * cols + b[1]
            self.terms.append((i, j, h.reshape(self.d, self.d, self.d, self.d)))

    def apply_term(self, psi: np.ndarray, i: int, j: int, op4: np.ndarray) -> np.ndarray:
        x = np.tensordot(op4, psi, ([2, 3], [i, j]))
        return np.moveaxis(x, [0, 1], [i, j])

    def matvec(self, v: np.ndarray) -> np.ndarray:
        psi = np.asarray(v, dtype=CDTYPE).reshape((self.d,) * self.n)
        out = np.zeros_like(psi)
        for i, j, h in self.terms:
            out += self.apply_term(psi, i, j, h)
        return out.reshape(v.shape)

    def trace(self) -> float:
        rest = self.d ** (self.n - 2)
        return float(sum(np.einsum("abab->", h).real for _, _, h in self.terms) * rest)

    def operator(self) -> spla.LinearOperator:
        return spla.LinearOperator(
            (self.dim, self.dim), matvec=self.matvec, rmatvec=self.matvec, dtype=CDTYPE
        )

    def energy(self, v: np.ndarray) -> float:
        return float(np.vdot(v, self.matvec(v)).real / np.vdot(v, v).real)


def exact_ground_state(m: ModelSpec, rows: int, cols: int | None = None, tol: float = 1e-12):
    """Lowest eigenvalue (total energy) and eigenvector via Lanczos."""
    h = DenseHamiltonian(m, rows, cols)
    if h.dim <= 64:
        dense = np.column_stack([h.matvec(e) for e in np.eye(h.dim, dtype=CDTYPE)])
        w, v = np.linalg.eigh(dense)
        e0, vec = float(w[0]), v[:, 0]
    else:
        rng = np.random.default_rng(1234)
        v0 = rng.standard_normal(h.dim).astype(CDTYPE)
        w, v = spla.eigsh(h.operator(), k=1, which="SA", v0=v0, tol=tol)
        e0, vec = float(w[0]), v[:, 0]
    vec = vec / np.linalg.norm(vec)
    resid = np.linalg.norm(h.matvec(vec) - e0 * vec)
    if resid > 1e-8:
        raise ArithmeticError(f"eigensolver residual {resid:.2e} above 1e-8")
    return e0, vec


def dense_evolve(
    state: np.ndarray, m: ModelSpec, tau: float, steps: int, rows: int, cols: int | None = None
) -> np.ndarray:
    """``exp(-tau * steps * H) |state>`` with a Krylov-type exponential action."""
    h = DenseHamiltonian(m, rows, cols)
    t = tau * steps
    op = spla.LinearOperator(
        (h.dim, h.dim),
        matvec=lambda v: -t * h.matvec(v),
        rmatvec=lambda v: -t * h.matvec(v),
        dtype=CDTYPE,
    )
    return spla.expm_multiply(op, np.asarray(state, dtype=CDTYPE), traceA=-t * h.trace())


def dense_trotter_step(
    state: np.ndarray, gates: list, rows: int, cols: int | None = None, d: int = 2
) -> np.ndarray:
    """Apply two-site gates ``[((a, b), 4x4 matrix), ...]`` in order to a dense state."""
    cols = rows if cols is None else cols
    n = rows * cols
    psi = np.asarray(state, dtype=CDTYPE).reshape((d,) * n)
    for (a, b), g in gates:
        i, j = a[0] * cols + a[1], b[0] * cols + b[1]
        x = np.tensordot(g.reshape(d, d, d, d), psi, ([2, 3], [i, j]))
        psi = np.moveaxis(x, [0, 1], [i, j])
    return psi.reshape(-1)


def dense_expect_local(vec: np.ndarray, site_index: int, op: np.ndarray, n: int, d: int = 2):
    psi = vec.reshape((d,) * n)
    x = np.moveaxis(np.tensordot(op, psi, ([1], [site_index])), 0, site_index)
    return complex(np.vdot(psi, x) / np.vdot(psi, psi))


def dense_expect_product(vec: np.ndarray, ops: dict, n: int, d: int = 2):
    """``ops`` maps flat site index to a ``d x d`` operator."""
    psi = vec.reshape((d,) * n)
    x = psi
    for i, op in ops.items():
        x = np.moveaxis(np.tensordot(op, x, ([1], [i])), 0, i)
    return complex(np.vdot(psi, x) / np.vdot(psi, psi))


def dense_norm_sq(vec: np.ndarray) -> float:
    return float(np.vdot(vec, vec).real)


def log_dense_norm_sq(vec: np.ndarray) -> float:
    return math.log(dense_norm_sq(vec))
