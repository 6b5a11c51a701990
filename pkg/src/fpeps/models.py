"""Spin-1/2 lattice models on open square lattices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensors import CDTYPE

SX = np.array([[0, 1], [1, 0]], dtype=CDTYPE)
SY = np.array([[0, -1j], [1j, 0]], dtype=CDTYPE)
SZ = np.array([[1, 0], [0, -1]], dtype=CDTYPE)
ID2 = np.eye(2, dtype=CDTYPE)

KINDS = ("heisenberg", "ising")


@dataclass(frozen=True)
class ModelSpec:
    """``heisenberg``: J S.S + B_Z (-1)^(r+c) S^Z;  ``ising``: -ZZ - B X (Pauli matrices)."""

    kind: str
    J: float = 1.0
    B: float = 0.0
    B_Z: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")

    @property
    def d(self) -> int:
        return 2

    def with_staggered_field(self, b_z: float) -> "ModelSpec":
        return ModelSpec(self.kind, self.J, self.B, b_z)


def bonds(rows: int, cols: int):
    """Nearest-neighbour bonds as ``((r, c), (r2, c2))``, horizontal ones first."""
    out = [((r, c), (r, c + 1)) for r in range(rows) for c in range(cols - 1)]
    out += [((r, c), (r + 1, c)) for r in range(rows - 1) for c in range(cols)]
    return out


def coordination(rows: int, cols: int, r: int, c: int) -> int:
    return (r > 0) + (r < rows - 1) + (c > 0) + (c < cols - 1)


def bond_coupling(m: ModelSpec) -> np.ndarray:
    if m.kind == "heisenberg":
        return 0.25 * m.J * sum(np.kron(s, s) for s in (SX, SY, SZ))
    return -np.kron(SZ, SZ)


def site_term(m: ModelSpec, r: int, c: int) -> np.ndarray:
    if m.kind == "heisenberg":
        return m.B_Z * (-1) ** (r + c) * 0.5 * SZ
    return -m.B * SX


def bond_hamiltonians(m: ModelSpec, rows: int, cols: int | None = None) -> dict:
    """Bond Hamiltonians with the single-site terms folded in.

    Each site term is shared between the bonds of that site with weight
    ``1 / coordination``, so summing all bond terms gives the full Hamiltonian.
    """
    cols = rows if cols is None else cols
    out = {}
    hc = bond_coupling(m)
    for a, b in bonds(rows, cols):
        ha = site_term(m, *a) / coordination(rows, cols, *a)
        hb = site_term(m, *b) / coordination(rows, cols, *b)
        out[(a, b)] = hc + np.kron(ha, ID2) + np.kron(ID2, hb)
    return out
