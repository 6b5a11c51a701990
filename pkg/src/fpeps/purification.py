"""Positive boundary contraction with purification MPOs.

A purification chain ``F`` has site tensors with axes
``(left, ket, purification, right)``.  It represents the positive operator
``rho_F = Tr_w |F><F|`` on the ket legs, i.e. an MPO of bond ``D''^2``.
Fitting ``rho_F`` to a target ``rho_Z`` (itself a purification) minimizes

    c(F) = Tr rho_Z^2 - 2 Tr(rho_Z rho_F) + Tr rho_F^2,

which is quartic in each site tensor.  The three traces are four-layer
networks; layers 1 and 3 carry a tensor, layers 2 and 4 its conjugate
("slots").  Complex parameters follow the Wirtinger convention: the
gradient is ``g = dc/d conj(F)`` and a first-order change is
``dc = 2 Re <g, dF>``.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg

from .environment import (
    BoundaryMpo,
    ContractionSettings,
    bottom_boundaries,
    boundary_step,
    close_boundaries,
    log_norm_squared,
    trivial_boundary,
)
from .peps import Peps
from .tensors import CDTYPE, PinvSettings, pinv_solve, qr_split, lq_split, svd_truncate

SOLVERS = ("linearized", "conjugate_gradient", "newton")


@dataclass(frozen=True)
class SolverSettings:
    kind: str = "newton"
    alpha_init: float = 0.01
    alpha_decay: float = 0.8
    max_iters: int = 20
    grad_tol: float = 1e-10
    hessian_pinv: PinvSettings = PinvSettings(1e-10)

    def __post_init__(self):
        if self.kind not in SOLVERS:
            raise ValueError(f"unknown solver {self.kind!r}")
        if not 0 < self.alpha_init <= 1:
            raise ValueError("alpha_init must lie in (0, 1]")
        if not 0 < self.alpha_decay < 1:
            raise ValueError("alpha_decay must lie in (0, 1)")


@dataclass
class PurificationMpo:
    tensors: list[np.ndarray]
    log_scale: float = 0.0  # log of the factor multiplying rho

    @property
    def D2(self) -> int:
        return max([1] + [t.shape[3] for t in self.tensors[:-1]])

    @property
    def d_purif(self) -> int:
        return max(t.shape[2] for t in self.tensors)


@dataclass
class FitReport:
    cost: float = math.nan
    target_sq: float = math.nan
    sweeps: int = 0
    converged: bool = False
    site_trajectories: list = field(default_factory=list)  # accepted costs per site update

    @property
    def relative_error(self) -> float:
        return math.sqrt(max(self.cost, 0.0) / self.target_sq)

    @property
    def monotone(self) -> bool:
        return all(
            all(b <= a + 1e-12 * max(1.0, abs(a)) for a, b in zip(t, t[1:]))
            for t in self.site_trajectories
        )


# -- einsum with cached contraction paths ------------------------------------------------------


@lru_cache(maxsize=512)
def _path(expr: str, shapes: tuple):
    ops = [np.empty(s, dtype=np.int8) for s in shapes]
    return np.einsum_path(expr, *ops, optimize="greedy")[0]


def _ein(expr: str, *ops):
    return np.einsum(expr, *ops, optimize=_path(expr, tuple(o.shape for o in ops)))


# -- four-layer networks -----------------------------------------------------------------------------

_ONE = np.ones((1, 1, 1, 1), dtype=CDTYPE)


def _transfer_left(e, l1, l2, l3, l4):
    return _ein("abcd,aKWe,bLWf,cLXg,dKXh->efgh", e, l1, l2.conj(), l3, l4.conj())


def _transfer_right(e, l1, l2, l3, l4):
    return _ein("efgh,aKWe,bLWf,cLXg,dKXh->abcd", e, l1, l2.conj(), l3, l4.conj())


def four_layer_trace(c1, c2, c3, c4) -> complex:
    """``Tr(rho_12 rho_34)`` with ``rho_12 = Tr_w |c1><c2|`` chains."""
    e = _ONE
    for t in zip(c1, c2, c3, c4):
        e = _transfer_left(e, *t)
    return complex(e.ravel()[0])


def rho_dense(chain) -> np.ndarray:
    """Dense operator ``rho[k, b]`` of a short purification chain."""
    x = np.ones((1, 1, 1, 1), dtype=CDTYPE)  # (k.., b.., v, v*) grouped as (K, B, v, v*)
    for t in chain:
        y = _ein("KBab,akwe,blwf->KkBlef", x, t, t.conj())
        s = y.shape
        x = y.reshape(s[0] * s[1], s[2] * s[3], s[4], s[5])
    return x[:, :, 0, 0]


def chain_norm_sq(chain) -> float:
    """``Tr rho`` of a purification chain (its norm as an MPS)."""
    e = np.ones((1, 1), dtype=CDTYPE)
    for t in chain:
        e = _ein("ab,akwe,bkwf->ef", e, t, t.conj())
    return float(e.real.ravel()[0])


class LocalProblem:
    """The cost as a function of one site tensor of ``F``, other sites fixed."""

    def __init__(self, e4l, e4r, exl, exr, z, zz: float):
        self.e4l, self.e4r = e4l, e4r
        self.exl, self.exr = exl, exr
        self.z = z
        self.zz = zz
        # the cross term is quadratic in F; its kernel is fixed by z and the environments
        self.sx = _ein("abcd,aKWe,bLWf,efgh->dKhcLg", exl, z, z.conj(), exr)

    def g4(self, x1, x3, x4):
        """Quartic network with slot 2 open; ``x4`` is conjugated."""
        return _ein("abcd,aKWe,cLXg,dKXh,efgh->bLWf", self.e4l, x1, x3, x4.conj(), self.e4r)

    def gx(self, x3):
        """Cross network with slot 4 open."""
        return _ein("dKhcLg,cLXg->dKXh", self.sx, x3)

    def cost(self, f) -> float:
        q = np.vdot(f, self.g4(f, f, f)).real
        x = np.vdot(f, self.gx(f)).real
        return float(self.zz - 2 * x + q)

    def gradient(self, f) -> np.ndarray:
        return 2 * self.g4(f, f, f) - 2 * self.gx(f)

    def hessian_blocks(self, f):
        """``A = d g / dF`` and ``B = d g / d conj(F)`` as matrices on flattened tensors."""
        n = f.size
        sh = f.shape
        fc = f.conj()
        s1 = _ein("abcd,cLXg,dKXh,efgh->bLfaKe", self.e4l, f, fc, self.e4r)
        idW = np.eye(sh[2])
        a1 = np.einsum("bLfaKe,WV->bLWfaKVe", s1, idW)
        s3 = _ein("abcd,aKWe,dKXh,efgh->bWfcXg", self.e4l, f, fc, self.e4r)
        idL = np.eye(sh[1])
        a3 = np.einsum("bWfcXg,LM->bLWfcMXg", s3, idL)
        ax = np.einsum("dKhcLg,XY->dKXhcLYg", self.sx, np.eye(sh[2]))
        A = 2 * (a1 + a3 - ax).reshape(n, n)
        B = 2 * _ein("abcd,aKWe,cLXg,efgh->bLWfdKXh", self.e4l, f, f, self.e4r).reshape(n, n)
        A = 0.5 * (A + A.conj().T)
        B = 0.5 * (B + B.T)
        return A, B

    def augmented_hessian(self, f) -> np.ndarray:
        A, B = self.hessian_blocks(f)
        return np.block([[A, B], [B.conj(), A.conj()]])

    def hessian_action(self, f, delta) -> np.ndarray:
        """Change of the gradient along ``delta`` to first order."""
        A, B = self.hessian_blocks(f)
        return (A @ delta.ravel() + B @ delta.conj().ravel()).reshape(f.shape)

    def linearized_matrix(self, b):
        """``N`` of the surrogate with slots 2 and 3 fixed to ``conj(b)`` and ``b``."""
        core = _ein("abcd,bLWf,cLXg,efgh->dXhaWe", self.e4l, b.conj(), b, self.e4r)
        k = b.shape[1]
        n = np.einsum("dXhaWe,KJ->dKXhaJWe", core, np.eye(k))
        return n.reshape(b.size, b.size)


# -- local solvers ------------------------------------------------------------------------------------


def solve_surrogate(prob: LocalProblem, b: np.ndarray, pinv: PinvSettings = PinvSettings()):
    """Exact minimizer of the quadratic surrogate: ``N f = gx(b)``."""
    n = prob.linearized_matrix(b)
    rhs = prob.gx(b).ravel()
    x, _ = pinv_solve(n, rhs, pinv)
    return x.reshape(b.shape)


def solve_linearized(prob: LocalProblem, f0: np.ndarray, s: SolverSettings):
    f, c = f0, prob.cost(f0)
    traj = [c]
    alpha = s.alpha_init
    for _ in range(s.max_iters):
        sol = solve_surrogate(prob, f, s.hessian_pinv)
        trial = (1 - alpha) * f + alpha * sol
        ct = prob.cost(trial)
        if ct <= c:
            if c - ct <= s.grad_tol * max(prob.zz, 1e-300):
                f, c = trial, ct
                traj.append(c)
                break
            f, c = trial, ct
            traj.append(c)
        else:
            alpha *= s.alpha_decay
    return f, traj


def _armijo(prob, f, c, g, d, t0):
    slope = 2 * np.vdot(g, d).real
    t = t0
    for _ in range(40):
        trial = f + t * d
        ct = prob.cost(trial)
        if ct <= c + 1e-4 * t * slope:
            return trial, ct, t
        t *= 0.5
    return None, c, 0.0


def solve_cg(prob: LocalProblem, f0: np.ndarray, s: SolverSettings):
    """Polak-Ribiere nonlinear CG with Armijo backtracking."""
    f, c = f0, prob.cost(f0)
    traj = [c]
    g = prob.gradient(f)
    d = -g
    t = 1.0
    for _ in range(s.max_iters):
        gn = np.linalg.norm(g)
        if gn <= s.grad_tol * max(1.0, math.sqrt(prob.zz)):
            break
        if np.vdot(g, d).real >= 0:
            d = -g
        trial, ct, t_used = _armijo(prob, f, c, g, d, min(1.0, 2 * t))
        if trial is None:
            d = -g
            trial, ct, t_used = _armijo(prob, f, c, g, d, 1.0)
            if trial is None:
                break
        t = t_used
        f, c = trial, ct
        traj.append(c)
        g_new = prob.gradient(f)
        beta = max(0.0, np.vdot(g_new, g_new - g).real / np.vdot(g, g).real)
        d = -g_new + beta * d
        g = g_new
    return f, traj


def newton_step(prob: LocalProblem, f: np.ndarray, pinv: PinvSettings):
    """Newton direction using only the positive part of the augmented Hessian."""
    g = prob.gradient(f).ravel()
    h = prob.augmented_hessian(f)
    w, u = scipy.linalg.eigh(h, check_finite=False)
    keep = w > pinv.relative_cutoff * max(w.max(), 0.0)
    if not np.any(keep):
        return np.zeros_like(f)
    rhs = -np.concatenate([g, g.conj()])
    z = u[:, keep] @ ((u[:, keep].conj().T @ rhs) / w[keep])
    return z[: f.size].reshape(f.shape)


def solve_newton(prob: LocalProblem, f0: np.ndarray, s: SolverSettings):
    f, c = f0, prob.cost(f0)
    traj = [c]
    for _ in range(s.max_iters):
        g = prob.gradient(f)
        if np.linalg.norm(g) <= s.grad_tol * max(1.0, math.sqrt(prob.zz)):
            break
        d = newton_step(prob, f, s.hessian_pinv)
        t, accepted = 1.0, False
        for _ in range(30):
            trial = f + t * d
            ct = prob.cost(trial)
            if ct <= c:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        done = c - ct <= s.grad_tol * max(prob.zz, 1e-300)
        f, c = trial, ct
        traj.append(c)
        if done:
            break
    return f, traj


_SOLVE = {"linearized": solve_linearized, "conjugate_gradient": solve_cg, "newton": solve_newton}


# -- chain fitting ----------------------------------------------------------------------------------


def target_chain(b: PurificationMpo, row) -> list[np.ndarray]:
    """Purification of ``b`` times one PEPS row, legs grouped: ``(v l, d, w p, v r)``."""
    out = []
    for t, a in zip(b.tensors, row):
        x = _ein("vkwe,pkldr->vldwper", t, a)
        s = x.shape
        out.append(x.reshape(s[0] * s[1], s[2], s[3] * s[4], s[5] * s[6]))
    return out


def _normalize_chain(chain):
    """Scale a chain so that ``Tr rho = 1``; returns the log of the removed factor of rho."""
    chain = list(chain)
    tr = chain_norm_sq(chain)
    if not tr > 0:
        raise ArithmeticError("purification chain has zero norm")
    f = tr ** (-0.5 / len(chain))
    return [t * f for t in chain], math.log(tr)


def compress_init(z, D2: int, dp: int, seed: int = 0):
    """SVD-compress the bonds of ``z`` to ``D2`` and keep ``dp`` purification states per site."""
    n = len(z)
    f = [t.copy() for t in z]
    for c in range(n - 1):
        q, r = qr_split(f[c], [0, 1, 2]).factors
        f[c] = q
        f[c + 1] = np.tensordot(r, f[c + 1], ([1], [0]))
    for c in range(n - 1, 0, -1):
        u, s, vh = svd_truncate(f[c], [0], D2).factors
        f[c] = vh
        f[c - 1] = np.tensordot(f[c - 1], u * s, ([3], [0]))
    rng = np.random.default_rng(seed)
    for c in range(n):
        t = f[c]
        u, s, vh = svd_truncate(t, [0, 1, 3], dp).factors  # (v k e, w) -> keep dp
        t = np.moveaxis(u * s, 3, 2)  # v k w' e
        if t.shape[2] < dp:
            pad = np.zeros(t.shape[:2] + (dp - t.shape[2],) + t.shape[3:], dtype=CDTYPE)
            pad += 1e-3 * np.max(np.abs(t)) * rng.uniform(-1, 1, pad.shape)
            t = np.concatenate([t, pad], axis=2)
        f[c] = t
    return f


def fit_purification(z, f0, solver: SolverSettings, sweeps_max: int = 6, tol: float = 1e-10):
    """Minimize ``|rho_z - rho_f|^2`` by sweeping local solves over ``f``."""
    n = len(z)
    f = [t.astype(CDTYPE, copy=True) for t in f0]
    zz = four_layer_trace(z, z, z, z).real
    report = FitReport(target_sq=zz)
    # right-canonical start, centre at site 0
    for c in range(n - 1, 0, -1):
        lm, q = lq_split(f[c], [0]).factors
        f[c] = q
        f[c - 1] = np.tensordot(f[c - 1], lm, ([3], [0]))

    def right_envs():
        e4 = [None] * (n + 1)
        ex = [None] * (n + 1)
        e4[n] = ex[n] = _ONE
        for c in range(n - 1, 0, -1):
            e4[c] = _transfer_right(e4[c + 1], f[c], f[c], f[c], f[c])
            ex[c] = _transfer_right(ex[c + 1], z[c], z[c], f[c], f[c])
        return e4, ex

    e4r, exr = right_envs()
    e4l = [_ONE] + [None] * n
    exl = [_ONE] + [None] * n
    solve = _SOLVE[solver.kind]
    prev = None
    cost = math.nan
    for sweep in range(sweeps_max):
        order = list(range(n)) if sweep % 2 == 0 else list(range(n - 1, -1, -1))
        for i, c in enumerate(order):
            prob = LocalProblem(e4l[c], e4r[c + 1], exl[c], exr[c + 1], z[c], zz)
            f[c], traj = solve(prob, f[c], solver)
            report.site_trajectories.append(traj)
            cost = traj[-1]
            if i == n - 1:
                break
            if sweep % 2 == 0:
                q, r = qr_split(f[c], [0, 1, 2]).factors
                f[c] = q
                f[c + 1] = np.tensordot(r, f[c + 1], ([1], [0]))
                e4l[c + 1] = _transfer_left(e4l[c], f[c], f[c], f[c], f[c])
                exl[c + 1] = _transfer_left(exl[c], z[c], z[c], f[c], f[c])
            else:
                lm, q = lq_split(f[c], [0]).factors
                f[c] = q
                f[c - 1] = np.tensordot(f[c - 1], lm, ([3], [0]))
                e4r[c] = _transfer_right(e4r[c + 1], f[c], f[c], f[c], f[c])
                exr[c] = _transfer_right(exr[c + 1], z[c], z[c], f[c], f[c])
        report.sweeps = sweep + 1
        if prev is not None and abs(prev - cost) <= tol * zz:
            report.converged = True
            break
        prev = cost
    report.cost = cost
    return f, report


def purification_step(
    b: PurificationMpo,
    peps_row,
    D2: int,
    dp: int,
    solver: SolverSettings = SolverSettings(),
    sweeps_max: int = 6,
    init=None,
    seed: int = 0,
):
    """Absorb a row into a purification boundary; returns ``(new boundary, FitReport)``."""
    D = max(t.shape[3] for t in peps_row)
    if dp > D * D2 * D2:
        raise ValueError(f"purification dimension {dp} exceeds D * D''^2 = {D * D2 * D2}")
    z, lg = _normalize_chain(target_chain(b, peps_row))
    f0 = init if init is not None else compress_init(z, D2, dp, seed)
    f, rep = fit_purification(z, f0, solver, sweeps_max)
    f, lf = _normalize_chain(f)
    return PurificationMpo(f, b.log_scale + lg + lf), rep


def trivial_purification(cols: int) -> PurificationMpo:
    return PurificationMpo([_ONE.copy() for _ in range(cols)])


def exact_purification(rows) -> PurificationMpo:
    """Purification of the exact boundary of the given PEPS rows (no truncation)."""
    b = trivial_purification(len(rows[0]))
    for row in rows:
        z, lg = _normalize_chain(target_chain(b, row))
        b = PurificationMpo(z, b.log_scale + lg)
    return b


# -- norm benchmark -------------------------------------------------------------------------------


def purification_log_norm(
    psi: Peps, D2: int, dp: int, solver: SolverSettings = SolverSettings(), sweeps_max: int = 4
):
    """``log <psi|psi>`` with purification boundaries; last row contracted exactly."""
    b = trivial_purification(psi.cols)
    sweeps = 0
    cost = 0.0
    for r in range(psi.rows - 1):
        b, rep = purification_step(b, psi.row(r), D2, dp, solver, sweeps_max, seed=r)
        sweeps += rep.sweeps
        cost += rep.cost
    z = target_chain(b, psi.row(psi.rows - 1))
    return b.log_scale + math.log(chain_norm_sq(z)), sweeps, cost


NORM_COLUMNS = ["method", "D", "D2", "d_purif", "sweeps", "cost", "relative_norm_error", "wall_time_s"]


def relative_norm_error(
    psi: Peps,
    D2: int,
    dp: int,
    solver: SolverSettings = SolverSettings(),
    exact_log_norm: float | None = None,
    exact_D_prime: int = 64,
) -> list[dict]:
    """Norm error of the purification and general boundary pipelines against a reference."""
    if exact_log_norm is None:
        exact_log_norm = log_norm_squared(psi, ContractionSettings(D_prime=exact_D_prime))
    rows = []
    t0 = time.perf_counter()
    lp, sweeps, cost = purification_log_norm(psi, D2, dp, solver)
    rows.append(
        dict(
            method=f"purification-{solver.kind}",
            D=psi.D,
            D2=D2,
            d_purif=dp,
            sweeps=sweeps,
            cost=cost,
            relative_norm_error=abs(math.expm1(lp - exact_log_norm)),
            wall_time_s=time.perf_counter() - t0,
        )
    )
    t0 = time.perf_counter()
    lg = log_norm_squared(psi, ContractionSettings(D_prime=D2 * D2))
    rows.append(
        dict(
            method="boundary-mpo",
            D=psi.D,
            D2=D2,
            d_purif=0,
            sweeps=0,
            cost=math.nan,
            relative_norm_error=abs(math.expm1(lg - exact_log_norm)),
            wall_time_s=time.perf_counter() - t0,
        )
    )
    return rows


def as_boundary(b: PurificationMpo, row: int = 0) -> BoundaryMpo:
    """The represented positive MPO as a general boundary MPO (bond ``D''^2``)."""
    out = []
    for t in b.tensors:
        x = _ein("akwe,blwf->abklef", t, t.conj())
        s = x.shape
        out.append(x.reshape(s[0] * s[1], s[2], s[3], s[4] * s[5]))
    return BoundaryMpo(out, "top", row, b.log_scale)


def pad_chain(f, shapes, amplitude: float = 1.0, seed: int = 0):
    """Embed ``f`` into larger ``shapes``; new entries are uniform noise.

    The noise is scaled by ``amplitude`` times the largest existing entry, so
    ``amplitude=0`` reproduces the represented operator exactly.
    """
    rng = np.random.default_rng(seed)
    out = []
    for t, shape in zip(f, shapes):
        if any(a > b for a, b in zip(t.shape, shape)):
            raise ValueError(f"cannot embed {t.shape} into {shape}")
        scale = amplitude * np.max(np.abs(t))
        x = (scale * rng.uniform(-1, 1, shape)).astype(CDTYPE)
        x[tuple(slice(0, n) for n in t.shape)] = t
        out.append(x)
    return out


def embed_purification(f, dp: int, seed: int = 0, amplitude: float = 1.0):
    """Grow the purification leg to ``dp`` (see ``pad_chain``)."""
    if any(t.shape[2] > dp for t in f):
        raise ValueError("cannot shrink the purification leg")
    return pad_chain(f, [t.shape[:2] + (dp,) + t.shape[3:] for t in f], amplitude, seed)


def best_fit(z, starts, solver: SolverSettings, sweeps_max: int = 12):
    """Optimize from every start and keep the lowest final cost."""
    best = None
    for f0 in starts:
        f, rep = fit_purification(z, f0, solver, sweeps_max)
        if best is None or rep.cost < best[1].cost:
            best = (f, rep)
    return best


@dataclass
class TwoRowStudy:
    """Errors of replacing the exact two-row edge boundary by fitted ones.

    Keys of the dictionaries are ``(D'', d')``; the general boundary MPO uses
    ``D' = D''^2`` and is keyed by ``D''``.
    """

    fit_error: dict
    norm_error: dict
    general_fit_error: dict
    general_norm_error: dict
    reports: dict
    wall_time: dict = field(default_factory=dict)
    general_cost: dict = field(default_factory=dict)
    general_wall_time: dict = field(default_factory=dict)


def two_row_study(
    psi: Peps,
    D2s,
    dps,
    solver: SolverSettings = SolverSettings(),
    sweeps_max: int = 12,
    rest_D_prime: int = 64,
    seed: int = 0,
) -> TwoRowStudy:
    """Fit the exact boundary of rows 0 and 1 and close it against the rest of the lattice.

    Each ``(D'', d')`` cell starts from an SVD compression of the target and
    from the solutions of the neighbouring smaller cells embedded with noise;
    the best result is kept, and zero-padded neighbours guarantee that errors
    never grow along either axis.
    """
    first = exact_purification([psi.row(0)])
    z, lz = _normalize_chain(target_chain(first, psi.row(1)))
    bottom = bottom_boundaries(psi, ContractionSettings(D_prime=rest_D_prime))[1]
    lscale = first.log_scale + lz

    def log_norm(top: BoundaryMpo) -> float:
        val, lg = close_boundaries(top, bottom)
        return lg + math.log(abs(val.real))

    ref = log_norm(as_boundary(PurificationMpo(z, lscale)))
    st = TwoRowStudy({}, {}, {}, {}, {})
    sols = {}
    D2s, dps = sorted(D2s), sorted(dps)
    for i, D2 in enumerate(D2s):
        for j, dp in enumerate(dps):
            t0 = time.perf_counter()
            direct = compress_init(z, D2, dp, seed)
            shapes = [t.shape for t in direct]
            starts = [direct]
            fallbacks = []
            for key in ((D2s[i - 1], dp) if i else None, (D2, dps[j - 1]) if j else None):
                if key is None:
                    continue
                starts.append(pad_chain(sols[key], shapes, 1.0, seed + 7 * i + j))
                fallbacks.append(pad_chain(sols[key], shapes, 0.0))
            f, rep = best_fit(z, starts, solver, sweeps_max)
            for fb in fallbacks:
                g, rg = fit_purification(z, fb, solver, 1)
                if rg.cost < rep.cost:
                    f, rep = g, rg
            sols[(D2, dp)] = f
            st.fit_error[(D2, dp)] = rep.relative_error
            st.norm_error[(D2, dp)] = abs(math.expm1(log_norm(as_boundary(PurificationMpo(f, lscale))) - ref))
            st.reports[(D2, dp)] = rep
            st.wall_time[(D2, dp)] = time.perf_counter() - t0
        t0 = time.perf_counter()
        s = ContractionSettings(D_prime=D2 * D2, compute_residual=True, als_sweeps_max=20)
        b0 = boundary_step(trivial_boundary(psi.cols), psi.row(0), ContractionSettings(D_prime=10**6))
        b1 = boundary_step(b0, psi.row(1), s)
        st.general_fit_error[D2] = math.sqrt(max(b1.residual, 0.0))
        st.general_norm_error[D2] = abs(math.expm1(log_norm(b1) - ref))
        st.general_cost[D2] = b1.residual
        st.general_wall_time[D2] = time.perf_counter() - t0
    return st


def write_rows(rows: list[dict], path, columns=NORM_COLUMNS, extra: dict | None = None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns + (list(extra) if extra else []))
        for r in rows:
            w.writerow([r.get(c, "") for c in columns] + (list(extra.values()) if extra else []))
