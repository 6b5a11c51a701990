"""Finite PEPS container: construction, bond embedding, normalization, checkpoints.

Site tensors have axes ``(physical, up, left, down, right)``.  Bonds pointing
out of the lattice have extent 1.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensors import CDTYPE

P, UP, LEFT, DOWN, RIGHT = range(5)

MAGIC = b"PEPS"
FORMAT_VERSION = 1


class ScalingError(ArithmeticError):
    """The norm of a state is zero or not representable."""


class CheckpointError(IOError):
    """Malformed or incompatible checkpoint file."""


@dataclass
class Peps:
    """Open-boundary PEPS on a ``rows x cols`` grid."""

    tensors: list[list[np.ndarray]]

    @property
    def rows(self) -> int:
        return len(self.tensors)

    @property
    def cols(self) -> int:
        return len(self.tensors[0])

    @property
    def L(self) -> int:
        return self.rows

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    @property
    def n_sites(self) -> int:
        return self.rows * self.cols

    @property
    def d(self) -> int:
        return self.tensors[0][0].shape[P]

    @property
    def D(self) -> int:
        return max(max(t.shape[1:]) for row in self.tensors for t in row)

    def __getitem__(self, site):
        r, c = site
        return self.tensors[r][c]

    def __setitem__(self, site, value):
        r, c = site
        self.tensors[r][c] = value

    def sites(self):
        for r in range(self.rows):
            for c in range(self.cols):
                yield r, c

    def copy(self) -> "Peps":
        return Peps([[t.copy() for t in row] for row in self.tensors])

    def row(self, r: int) -> list[np.ndarray]:
        return self.tensors[r]

    def transposed(self) -> "Peps":
        """Mirror on the main diagonal; vertical bonds become horizontal."""
        return Peps(
            [
                [self.tensors[r][c].transpose(0, 2, 1, 4, 3) for r in range(self.rows)]
                for c in range(self.cols)
            ]
        )

    def flipped(self) -> "Peps":
        """Mirror top to bottom."""
        return Peps([[t.transpose(0, 3, 2, 1, 4) for t in row] for row in reversed(self.tensors)])

    def validate(self) -> None:
        """Check physical extents, neighbour bond agreement and open boundaries."""
        d = self.d
        for r, c in self.sites():
            t = self.tensors[r][c]
            if t.ndim != 5:
                raise ValueError(f"site {(r, c)} has rank {t.ndim}, expected 5")
            if t.shape[P] != d:
                raise ValueError(f"site {(r, c)} has physical extent {t.shape[P]}")
            if r == 0 and t.shape[UP] != 1:
                raise ValueError(f"site {(r, c)} has an open up bond")
            if c == 0 and t.shape[LEFT] != 1:
                raise ValueError(f"site {(r, c)} has an open left bond")
            if r == self.rows - 1 and t.shape[DOWN] != 1:
                raise ValueError(f"site {(r, c)} has an open down bond")
            if c == self.cols - 1 and t.shape[RIGHT] != 1:
                raise ValueError(f"site {(r, c)} has an open right bond")
            if c + 1 < self.cols and t.shape[RIGHT] != self.tensors[r][c + 1].shape[LEFT]:
                raise ValueError(f"horizontal bond mismatch at {(r, c)}")
            if r + 1 < self.rows and t.shape[DOWN] != self.tensors[r + 1][c].shape[UP]:
                raise ValueError(f"vertical bond mismatch at {(r, c)}")


def bond_extents(rows: int, cols: int, r: int, c: int, D: int) -> tuple[int, int, int, int]:
    return (
        1 if r == 0 else D,
        1 if c == 0 else D,
        1 if r == rows - 1 else D,
        1 if c == cols - 1 else D,
    )


def _site_vectors(base, rows: int, cols: int, d: int) -> np.ndarray:
    base = np.asarray(base, dtype=CDTYPE)
    if base.shape == (d,):
        base = np.broadcast_to(base, (rows, cols, d))
    if base.shape != (rows, cols, d):
        raise ValueError("base_local_state must have shape (d,) or (rows, cols, d)")
    norms = np.linalg.norm(base, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("base local states must be nonzero")
    return base / norms


def _add_noise(t: np.ndarray, amplitude: float, rng: np.random.Generator, zeros_only: bool):
    if amplitude == 0.0:
        return t
    noise = rng.uniform(-amplitude, amplitude, size=t.shape)
    if zeros_only:
        noise = np.where(t == 0, noise, 0.0)
    return t + noise


def init_separable_with_noise(
    L: int,
    d: int,
    D: int,
    base_local_state,
    noise_amplitude: float = 1e-6,
    seed: int = 0,
    cols: int | None = None,
    noise_everywhere: bool = False,
) -> Peps:
    """Product state embedded in a bond-``D`` PEPS, zero entries replaced by noise.

    ``base_local_state`` is one ``d``-vector for all sites or an array of shape
    ``(L, cols, d)``.  Noise is i.i.d. uniform in ``[-a, a]``; by default only
    the zero entries are filled.
    """
    if D < 1:
        raise ValueError("bond dimension D must be >= 1")
    if noise_amplitude < 0:
        raise ValueError("noise_amplitude must be >= 0")
    rows, cols = L, (L if cols is None else cols)
    vecs = _site_vectors(base_local_state, rows, cols, d)
    rng = np.random.default_rng(seed)
    tensors = []
    for r in range(rows):
        row = []
        for c in range(cols):
            t = np.zeros((d,) + bond_extents(rows, cols, r, c, D), dtype=CDTYPE)
            t[:, 0, 0, 0, 0] = vecs[r, c]
            row.append(_add_noise(t, noise_amplitude, rng, not noise_everywhere))
        tensors.append(row)
    return Peps(tensors)


def neel_states(rows: int, cols: int | None = None) -> np.ndarray:
    """Per-site local vectors of the Neel state, up on even sublattice."""
    cols = rows if cols is None else cols
    out = np.zeros((rows, cols, 2), dtype=CDTYPE)
    for r in range(rows):
        for c in range(cols):
            out[r, c, (r + c) % 2] = 1.0
    return out


def random_peps(
    rows: int, cols: int, d: int, D: int, seed: int = 0, complex_entries: bool = True
) -> Peps:
    rng = np.random.default_rng(seed)
    tensors = []
    for r in range(rows):
        row = []
        for c in range(cols):
            shape = (d,) + bond_extents(rows, cols, r, c, D)
            t = rng.standard_normal(shape)
            if complex_entries:
                t = t + 1j * rng.standard_normal(shape)
            row.append(np.asarray(t, dtype=CDTYPE))
        tensors.append(row)
    return Peps(tensors)


def embed(psi: Peps, D: int, noise_amplitude: float = 1e-6, seed: int = 0) -> Peps:
    """Zero-pad every interior bond to extent ``D`` and fill the new zeros with noise."""
    rng = np.random.default_rng(seed)
    out = []
    for r in range(psi.rows):
        row = []
        for c in range(psi.cols):
            t = psi.tensors[r][c]
            ext = bond_extents(psi.rows, psi.cols, r, c, D)
            if any(e < s for e, s in zip(ext, t.shape[1:])):
                raise ValueError("embed cannot shrink bonds")
            new = np.zeros((t.shape[0],) + ext, dtype=CDTYPE)
            new[tuple(slice(0, s) for s in t.shape)] = t
            pad_mask = np.ones(new.shape, dtype=bool)
            pad_mask[tuple(slice(0, s) for s in t.shape)] = False
            noise = rng.uniform(-noise_amplitude, noise_amplitude, size=new.shape)
            row.append(new + np.where(pad_mask, noise, 0.0))
        out.append(row)
    return Peps(out)


def insert_gauge(psi: Peps, site: tuple[int, int], direction: str, m: np.ndarray) -> Peps:
    """Insert ``m`` and its inverse on the bond leaving ``site`` to the right or down."""
    out = psi.copy()
    r, c = site
    minv = np.linalg.inv(m)
    if direction == "right":
        out[r, c] = np.einsum("puldr,rs->pulds", out[r, c], m)
        out[r, c + 1] = np.einsum("sl,puldr->pusdr", minv, out[r, c + 1])
    elif direction == "down":
        out[r, c] = np.einsum("puldr,ds->pulsr", out[r, c], m)
        out[r + 1, c] = np.einsum("su,puldr->psldr", minv, out[r + 1, c])
    else:
        raise ValueError("direction must be 'right' or 'down'")
    return out


def max_abs_elements(psi: Peps) -> np.ndarray:
    return np.array([[np.max(np.abs(t)) for t in row] for row in psi.tensors])


def normalize(psi: Peps, contraction=None) -> Peps:
    """Scale tensors so that <psi|psi> = 1 and all share the same largest |element|."""
    from .environment import ContractionSettings, log_norm_squared

    contraction = contraction or ContractionSettings.for_state(psi)
    out = psi.copy()
    for r, c in out.sites():
        m = np.max(np.abs(out[r, c]))
        if not np.isfinite(m) or m == 0.0:
            raise ScalingError(f"site {(r, c)} is zero or not finite (max |element| = {m})")
        out[r, c] = out[r, c] / m
    log_nsq = log_norm_squared(out, contraction)
    if not np.isfinite(log_nsq):
        raise ScalingError(f"norm of the state is not representable (log <psi|psi> = {log_nsq})")
    factor = math.exp(-log_nsq / (2 * out.n_sites))
    for r, c in out.sites():
        out[r, c] = out[r, c] * factor
    return out


# -- checkpoints --------------------------------------------------------------


def save(psi: Peps, path, metadata: dict | None = None) -> None:
    """Write the versioned binary checkpoint and an optional ``.meta`` sidecar."""
    path = Path(path)
    if psi.rows != psi.cols:
        raise ValueError("checkpoints store square lattices only")
    chunks = [MAGIC, struct.pack("<III", FORMAT_VERSION, psi.rows, psi.d)]
    for r, c in psi.sites():
        t = np.ascontiguousarray(psi[r, c], dtype="<c16")
        chunks.append(struct.pack("<5I", *t.shape))
        chunks.append(t.tobytes(order="C"))
    path.write_bytes(b"".join(chunks))
    if metadata is not None:
        lines = [f"{k}={v}" for k, v in metadata.items()]
        Path(str(path) + ".meta").write_text("\n".join(lines) + "\n")


def load(path) -> Peps:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    version, L, d = struct.unpack_from("<III", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    offset = 16
    tensors = []
    for r in range(L):
        row = []
        for c in range(L):
            if offset + 20 > len(data):
                raise CheckpointError(f"{path}: truncated at site {(r, c)}")
            shape = struct.unpack_from("<5I", data, offset)
            offset += 20
            if shape[0] != d:
                raise CheckpointError(f"{path}: site {(r, c)} has physical extent {shape[0]}")
            nbytes = 16 * math.prod(shape)
            if offset + nbytes > len(data):
                raise CheckpointError(f"{path}: truncated at site {(r, c)}")
            t = np.frombuffer(data, dtype="<c16", count=math.prod(shape), offset=offset)
            row.append(t.reshape(shape).astype(CDTYPE))
            offset += nbytes
        tensors.append(row)
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    psi = Peps(tensors)
    try:
        psi.validate()
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return psi


def read_metadata(path) -> dict[str, str]:
    meta = Path(str(path) + ".meta")
    if not meta.exists():
        return {}
    out = {}
    for line in meta.read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def checkpoint_size(shapes: Sequence[tuple[int, ...]]) -> int:
    """Expected file size for the given per-site shapes."""
    return 16 + sum(20 + 16 * math.prod(s) for s in shapes)
