"""Two-site gate updates: reduced-tensor ALS with gauge fixing, full-tensor ALS, simple update.

Conventions for the reduced pair of a horizontal bond::

    A_L[p,u,l,d,m] = sum_k Q_L[u,l,d,k] a_L[k,p,m]
    A_R[q,u,m,d,r] = sum_k a_R[m,q,k] Q_R[k,u,d,r]

The environment of the reduced pair is a matrix over ``(kL, kR)``; its
positive square root ``X`` (shape ``(kL, kR, s)``) turns the cost function
into ``sum |X^dagger (theta - theta_target)|^2``, with ``theta`` the pair
contracted over the internal bond.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import kernels as K
from .environment import DegenerateEnvironmentError, PairEnvironment
from .tensors import (
    CDTYPE,
    PinvSettings,
    hermitian_positive_approximant,
    lq_split,
    pinv_solve,
    qr_split,
    regularized_inverse,
    svd_truncate,
)

log = logging.getLogger(__name__)

td = np.tensordot


class IllConditionedGaugeWarning(RuntimeWarning):
    """A gauge matrix had to be inverted with regularization."""


class UpdateAborted(ArithmeticError):
    """The ALS cost increased twice in one pair update."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


GAUGE_CUTOFF = 1e-10
NO_GAUGE_CUTOFF = 1e-8
# cost increases below this fraction of the target norm are rounding noise
NOISE_FLOOR = 1e-12


@dataclass(frozen=True)
class UpdateSettings:
    D: int
    gauge: str = "global"  # global | local | none
    svd_init: bool | None = None  # default: on when gauge fixing is used
    max_sweeps: int = 10
    eps_tol: float = 1e-8
    pinv_cutoff: float | None = None
    gauge_inverse_cutoff: float = 1e-12

    def __post_init__(self):
        if self.gauge not in ("global", "local", "none"):
            raise ValueError(f"unknown gauge mode {self.gauge!r}")
        if self.D < 1:
            raise ValueError("D must be >= 1")

    @property
    def use_svd_init(self) -> bool:
        return self.gauge != "none" if self.svd_init is None else self.svd_init

    @property
    def pinv(self) -> PinvSettings:
        if self.pinv_cutoff is not None:
            return PinvSettings(self.pinv_cutoff)
        return PinvSettings(GAUGE_CUTOFF if self.gauge != "none" else NO_GAUGE_CUTOFF)


@dataclass
class ReducedPair:
    Q_L: np.ndarray  # (u, l, d, kL)
    a_L: np.ndarray  # (kL, p, m)
    a_R: np.ndarray  # (m, q, kR)
    Q_R: np.ndarray  # (kR, u, d, r)


@dataclass
class GaugeSet:
    R: np.ndarray
    R_inv: np.ndarray
    L: np.ndarray
    L_inv: np.ndarray
    X: np.ndarray
    cond_R: float = 1.0
    cond_L: float = 1.0


@dataclass
class UpdateReport:
    costs: list = field(default_factory=list)  # d_init, d after init, d(1), d(2), ...
    eps: list = field(default_factory=list)
    conds: list = field(default_factory=list)
    discarded_weight: float = 0.0
    sweeps: int = 0
    clipped_weight: float = 0.0
    asymmetry: float = 0.0
    aborted: bool = False
    method: str = "reduced"
    gauge: str = "global"

    @property
    def d_init(self) -> float:
        return self.costs[0]

    @property
    def init_drop(self) -> float:
        return self.costs[0] - self.costs[1]


# -- reduction -----------------------------------------------------------------------------------


def reduce_pair(A_L: np.ndarray, A_R: np.ndarray) -> ReducedPair:
    """Split off the parts of a horizontal pair that the gate does not touch."""
    if A_L.shape[4] != A_R.shape[2]:
        raise ValueError("A_L right bond and A_R left bond differ")
    Q_L, a_L = qr_split(A_L, [1, 2, 3]).factors
    a_R, Q_R = lq_split(A_R, [2, 0]).factors
    return ReducedPair(Q_L, a_L, a_R, Q_R)


def recombine(pair: ReducedPair) -> tuple[np.ndarray, np.ndarray]:
    A_L = td(pair.Q_L, pair.a_L, ([3], [0])).transpose(3, 0, 1, 2, 4)
    A_R = td(pair.a_R, pair.Q_R, ([2], [0])).transpose(1, 2, 0, 3, 4)
    return A_L, A_R


def reduced_environment(env: PairEnvironment, Q_L: np.ndarray, Q_R: np.ndarray) -> np.ndarray:
    """Norm matrix of the reduced pair, rows = bra ``(kL', kR')``, columns = ket ``(kL, kR)``."""
    x = td(env.left, env.top_left, ([0], [0]))  # lk lb s uk ub t'
    x = td(x, Q_L, ([0, 3], [1, 0]))  # lb s ub t' dk kL
    x = td(x, Q_L.conj(), ([0, 2], [1, 0]))  # s t' dk kL db kL'
    hl = td(x, env.bottom_left, ([0, 2, 4], [0, 1, 2]))  # t' kL kL' s'
    y = td(env.right, env.top_right, ([0], [3]))  # rk rb s'' t' uk ub
    y = td(y, Q_R, ([0, 4], [3, 1]))  # rb s'' t' ub kR dk
    y = td(y, Q_R.conj(), ([0, 3], [3, 1]))  # s'' t' kR dk kR' db
    hr = td(y, env.bottom_right, ([0, 3, 5], [3, 1, 2]))  # t' kR kR' s'
    n = td(hl, hr, ([0, 3], [0, 3]))  # kL kL' kR kR'
    kl, kr = n.shape[0], n.shape[2]
    return n.transpose(1, 3, 0, 2).reshape(kl * kr, kl * kr)


def positive_root(n: np.ndarray, kl: int, kr: int):
    """``X`` of shape ``(kL, kR, s)`` with ``X X^dagger`` the positive part of ``n``."""
    x, clipped = hermitian_positive_approximant(n)
    if x.shape[1] == 0:
        raise DegenerateEnvironmentError("reduced environment has no positive eigenvalues")
    return x.reshape(kl, kr, x.shape[1]), clipped


# -- gauge fixing ------------------------------------------------------------------------------


def _square_r(mat: np.ndarray) -> np.ndarray:
    r = scipy.linalg.qr(mat, mode="r", check_finite=False)[0]
    k = mat.shape[1]
    r = r[:k]
    if r.shape[0] < k:
        r = np.vstack([r, np.zeros((k - r.shape[0], k), dtype=r.dtype)])
    return r


def _invert(m: np.ndarray, cutoff: float, what: str):
    inv, cond = regularized_inverse(m, cutoff)
    if not cond < 1.0 / cutoff:
        warnings.warn(
            f"gauge matrix {what} has condition number {cond:.2e}; using regularized inverse",
            IllConditionedGaugeWarning,
        )
    return inv, cond


def gauge_fix(Xt: np.ndarray, inverse_cutoff: float = 1e-12) -> GaugeSet:
    """QR on the left index and LQ on the right index of ``Xt``, computed independently."""
    kl, kr, s = Xt.shape
    R = _square_r(Xt.transpose(1, 2, 0).reshape(kr * s, kl))  # Xt = Q R on kL
    Lh = _square_r(Xt.transpose(0, 2, 1).reshape(kl * s, kr).conj())  # Xt = L Q on kR
    L = Lh.conj().T
    R_inv, cond_r = _invert(R, inverse_cutoff, "R")
    L_inv, cond_l = _invert(L, inverse_cutoff, "L")
    X = np.einsum("abs,ai,jb->ijs", Xt, R_inv, L_inv)
    return GaugeSet(R, R_inv, L, L_inv, X, cond_r, cond_l)


def local_gauge(a_L, a_R, Xt, inverse_cutoff: float = 1e-12) -> GaugeSet:
    """Gauge from the single-tensor norm matrices of ``a_L`` and ``a_R``."""
    kl, kr, s = Xt.shape
    nl = _norm_matrix_left(Xt, a_R)  # (i m) x (i m)
    m = a_L.shape[2]
    nl = np.einsum("imjm->ij", nl.reshape(kl, m, kl, m))
    nr = _norm_matrix_right(Xt, a_L)  # (m j) x (m j)
    nr = np.einsum("mimj->ij", nr.reshape(m, kr, m, kr))
    xl, _ = hermitian_positive_approximant(nl)
    xr, _ = hermitian_positive_approximant(nr)
    R = _square_r(xl.T) if xl.size else np.eye(kl, dtype=CDTYPE)
    L = _square_r(xr.conj().T).conj().T if xr.size else np.eye(kr, dtype=CDTYPE)
    R_inv, cond_r = _invert(R, inverse_cutoff, "R")
    L_inv, cond_l = _invert(L, inverse_cutoff, "L")
    X = np.einsum("abs,ai,jb->ijs", Xt, R_inv, L_inv)
    return GaugeSet(R, R_inv, L, L_inv, X, cond_r, cond_l)


def apply_gauge(a_L, a_R, g: GaugeSet):
    """Reduced tensors in the gauged frame."""
    aL = td(g.R.conj(), a_L, ([1], [0]))
    aR = td(a_R, g.L.conj(), ([2], [0]))
    return aL, aR


def remove_gauge(aL, aR, g: GaugeSet):
    a_L = td(g.R_inv.conj(), aL, ([1], [0]))
    a_R = td(aR, g.L_inv.conj(), ([2], [0]))
    return a_L, a_R


# -- cost function and local solves ------------------------------------------------------------


def pair_theta(a_L, a_R) -> np.ndarray:
    """``theta[i, p, q, j]``."""
    return td(a_L, a_R, ([2], [0]))


def apply_gate(gate: np.ndarray, theta: np.ndarray) -> np.ndarray:
    d1, d2 = theta.shape[1], theta.shape[2]
    g = gate.reshape(d1, d2, d1, d2)
    return td(g, theta, ([2, 3], [1, 2])).transpose(2, 0, 1, 3)


def projected(X: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """``X^dagger theta`` as ``(s, p, q)``."""
    return td(X.conj(), theta, ([0, 1], [0, 3]))


def cost(X, a_L, a_R, y_target) -> float:
    diff = projected(X, pair_theta(a_L, a_R)) - y_target
    return float(np.vdot(diff, diff).real)


def _norm_matrix_left(X, a_R):
    """``n = W^dagger W`` for the left tensor, ``W[(s q), (i m)]``."""
    w = np.einsum("ijs,mqj->sqim", X.conj(), a_R)
    s, q, i, m = w.shape
    w = w.reshape(s * q, i * m)
    return w.conj().T @ w


def _norm_matrix_right(X, a_L):
    v = np.einsum("ijs,ipm->spmj", X.conj(), a_L)
    s, p, m, j = v.shape
    v = v.reshape(s * p, m * j)
    return v.conj().T @ v


def solve_left(X, a_R, y_target, pinv: PinvSettings):
    w = np.einsum("ijs,mqj->sqim", X.conj(), a_R)
    s, q, i, m = w.shape
    w = w.reshape(s * q, i * m)
    n = w.conj().T @ w
    rhs = w.conj().T @ y_target.transpose(0, 2, 1).reshape(s * q, -1)  # (i m) x p
    x, cond = pinv_solve(n, rhs, pinv)
    return x.reshape(i, m, -1).transpose(0, 2, 1), cond


def solve_right(X, a_L, y_target, pinv: PinvSettings):
    v = np.einsum("ijs,ipm->spmj", X.conj(), a_L)
    s, p, m, j = v.shape
    v = v.reshape(s * p, m * j)
    n = v.conj().T @ v
    rhs = v.conj().T @ y_target.reshape(s * p, -1)  # (m j) x q
    x, cond = pinv_solve(n, rhs, pinv)
    return x.reshape(m, j, -1).transpose(0, 2, 1), cond


def svd_init(a_L, a_R, gate, D: int):
    """Truncated SVD of the gate applied to the pair; returns ``(a_L, a_R, discarded)``."""
    theta = apply_gate(gate, pair_theta(a_L, a_R))
    f = svd_truncate(theta, [0, 1], D)
    u, s, vh = f.factors
    sq = np.sqrt(s)
    return u * sq, sq[:, None, None] * vh, f.discarded_weight


def final_form(a_L, a_R, D: int | None = None):
    """Rebalance the internal bond: ``U sqrt(S)`` and ``sqrt(S) V``."""
    D = a_L.shape[2] if D is None else D
    f = svd_truncate(pair_theta(a_L, a_R), [0, 1], D)
    u, s, vh = f.factors
    sq = np.sqrt(s)
    return u * sq, sq[:, None, None] * vh


def _qr_internal(a_L, a_R):
    q, r = qr_split(a_L, [0, 1]).factors
    return q, td(r, a_R, ([1], [0]))


def _lq_internal(a_L, a_R):
    lm, q = lq_split(a_R, [0]).factors
    return td(a_L, lm, ([2], [0])), q


def als_optimize_pair(X, a_L, a_R, y_target, settings: UpdateSettings, report: UpdateReport):
    """Alternating least squares on the reduced pair in the frame of ``X``."""
    pinv = settings.pinv
    d_prev = cost(X, a_L, a_R, y_target)
    d_init = report.costs[0] if report.costs else d_prev
    scale = d_init if d_init > 0 else 1.0
    noise = NOISE_FLOOR * float(np.vdot(y_target, y_target).real)
    failures = 0
    for u in range(settings.max_sweeps):
        for side in ("left", "right"):
            if side == "left":
                a_L, a_R = _lq_internal(a_L, a_R)
                new, cond = solve_left(X, a_R, y_target, pinv)
                trial = (new, a_R)
            else:
                a_L, a_R = _qr_internal(a_L, a_R)
                new, cond = solve_right(X, a_L, y_target, pinv)
                trial = (a_L, new)
            report.conds.append(cond)
            c_new = cost(X, *trial, y_target)
            if c_new > d_prev + noise:
                failures += 1
                log.debug("ALS cost increased %.3e -> %.3e; tightening cutoff", d_prev, c_new)
                if failures >= 2:
                    report.aborted = True
                    return a_L, a_R
                pinv = PinvSettings(min(1e-2, pinv.relative_cutoff * 100))
                continue
            a_L, a_R = trial
            d_prev = c_new
        report.costs.append(d_prev)
        report.sweeps = u + 1
        eps = abs(report.costs[-1] - report.costs[-2]) / scale
        report.eps.append(eps)
        if eps < settings.eps_tol:
            break
    return a_L, a_R


# -- the reduced-tensor update -------------------------------------------------------------------


def update_pair(
    A_L: np.ndarray,
    A_R: np.ndarray,
    gate: np.ndarray,
    env: PairEnvironment,
    settings: UpdateSettings,
):
    """Apply ``gate`` to a horizontal pair; returns ``(A_L', A_R', report)``."""
    report = UpdateReport(gauge=settings.gauge)
    pair = reduce_pair(A_L, A_R)
    n = reduced_environment(env, pair.Q_L, pair.Q_R)
    nn = np.linalg.norm(n)
    report.asymmetry = float(np.linalg.norm(n - n.conj().T) / nn) if nn > 0 else 0.0
    kl, kr = pair.a_L.shape[0], pair.a_R.shape[2]
    Xt, clipped = positive_root(n, kl, kr)
    report.clipped_weight = clipped / nn if nn > 0 else 0.0

    if settings.gauge == "global":
        g = gauge_fix(Xt, settings.gauge_inverse_cutoff)
    elif settings.gauge == "local":
        g = local_gauge(pair.a_L, pair.a_R, Xt, settings.gauge_inverse_cutoff)
    else:
        g = None
    if g is not None and not max(g.cond_R, g.cond_L) < 1.0 / settings.gauge_inverse_cutoff:
        # a singular gauge cannot be undone on write-back; stay in the plain frame
        g = None
        report.gauge = "fallback"
    if g is not None:
        X = g.X
        aL, aR = apply_gauge(pair.a_L, pair.a_R, g)
    else:
        X, aL, aR = Xt, pair.a_L, pair.a_R

    y_target = projected(X, apply_gate(gate, pair_theta(aL, aR)))
    report.costs.append(cost(X, aL, aR, y_target))
    if settings.use_svd_init:
        aL, aR, report.discarded_weight = svd_init(aL, aR, gate, settings.D)
    elif aL.shape[2] > settings.D:
        aL, aR = final_form(aL, aR, settings.D)
    report.costs.append(cost(X, aL, aR, y_target))
    aL, aR = als_optimize_pair(X, aL, aR, y_target, settings, report)
    aL, aR = final_form(aL, aR, settings.D)
    if g is not None:
        aL, aR = remove_gauge(aL, aR, g)
    new_L, new_R = recombine(ReducedPair(pair.Q_L, aL, aR, pair.Q_R))
    return new_L, new_R, report


def write_back(pair: ReducedPair, gauges: GaugeSet | None, aL, aR):
    """Undo the gauge on optimized reduced tensors and rebuild the site tensors."""
    if gauges is not None:
        aL, aR = remove_gauge(aL, aR, gauges)
    return recombine(ReducedPair(pair.Q_L, aL, aR, pair.Q_R))


def pair_cost(env: PairEnvironment, A_L, A_R, B_L, B_R) -> float:
    """``| |A> - |B> |^2`` in the pair environment, for two pairs of site tensors."""
    return float(
        (
            _overlap(env, A_L, A_R, A_L, A_R)
            + _overlap(env, B_L, B_R, B_L, B_R)
            - 2 * _overlap(env, A_L, A_R, B_L, B_R).real
        ).real
    )


def _overlap(env, kL, kR, bL, bR) -> complex:
    """``<b|k>`` in the environment."""
    e = K.absorb_left(env.left, env.top_left, kL, bL.conj(), env.bottom_left)
    e = K.absorb_left(e, env.top_right, kR, bR.conj(), env.bottom_right)
    return complex(np.tensordot(e, env.right, 4))


def gate_pair(A_L, A_R, gate):
    """Exact gated pair with the internal bond enlarged by the gate's operator rank."""
    d = A_L.shape[0]
    g = gate.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d * d, d * d)
    u, s, vh = np.linalg.svd(g)
    keep = s > 1e-14 * s[0]
    u, s, vh = u[:, keep], s[keep], vh[keep]
    g1 = (u * np.sqrt(s)).reshape(d, d, -1)  # p p' k
    g2 = (np.sqrt(s)[:, None] * vh).reshape(-1, d, d)  # k q q'
    gl = np.einsum("xyk,yuldm->xuldmk", g1, A_L)
    gl = gl.reshape(gl.shape[:4] + (-1,))
    gr = np.einsum("kxy,yumdr->xumkdr", g2, A_R)
    sh = gr.shape
    gr = gr.reshape(sh[0], sh[1], sh[2] * sh[3], sh[4], sh[5])
    return gl, gr


# -- simple update ---------------------------------------------------------------------------------


def _sqrt_psd(m: np.ndarray, cutoff: float):
    w, u = scipy.linalg.eigh(0.5 * (m + m.conj().T), check_finite=False)
    w = np.clip(w, 0.0, None)
    sq = np.sqrt(w)
    top = sq.max() if sq.size else 0.0
    inv = np.where(sq > cutoff * top, 1.0 / np.where(sq > 0, sq, 1.0), 0.0)
    return u * sq, (u * inv).conj().T


def simple_update(A_L, A_R, gate, env: PairEnvironment, D: int, cutoff: float = 1e-12):
    """Update in a separable environment by absorbing the square roots of its six factors."""
    for t in (env.left, env.right, env.top_left, env.top_right, env.bottom_left, env.bottom_right):
        if t.shape[0] != 1 or t.shape[3] != 1:
            raise ValueError("simple_update needs a separable (bond-one) environment")
    mats = {
        "l": env.left[0, :, :, 0],
        "ul": env.top_left[0, :, :, 0],
        "dl": env.bottom_left[0, :, :, 0],
        "r": env.right[0, :, :, 0],
        "ur": env.top_right[0, :, :, 0],
        "dr": env.bottom_right[0, :, :, 0],
    }
    Y, Yi = {}, {}
    for k, m in mats.items():
        Y[k], Yi[k] = _sqrt_psd(m, cutoff)
    bl = np.einsum("puldr,ua,lb,dc->pabcr", A_L, Y["ul"], Y["l"], Y["dl"])
    br = np.einsum("puldr,ua,dc,rb->palcb", A_R, Y["ur"], Y["dr"], Y["r"])
    pair = reduce_pair(bl, br)
    aL, aR, discarded = svd_init(pair.a_L, pair.a_R, gate, D)
    new_l, new_r = recombine(ReducedPair(pair.Q_L, aL, aR, pair.Q_R))
    new_l = np.einsum("pabcr,au,bl,cd->puldr", new_l, Yi["ul"], Yi["l"], Yi["dl"])
    new_r = np.einsum("palcb,au,cd,br->puldr", new_r, Yi["ur"], Yi["dr"], Yi["r"])
    return new_l, new_r, discarded


# -- full-tensor update ---------------------------------------------------------------------------


def _gauge_env_leg(t: np.ndarray, axes: tuple[int, int], minv: np.ndarray) -> np.ndarray:
    """Absorb ``minv`` into the ket axis and ``conj(minv)`` into the bra axis of ``t``."""
    k, b = axes
    t = np.moveaxis(td(t, minv, ([k], [0])), -1, k)
    return np.moveaxis(td(t, minv.conj(), ([b], [0])), -1, b)


def full_norm_left(env: PairEnvironment, A_R: np.ndarray, B_R: np.ndarray | None = None):
    """Environment of ``A_L`` with ``A_R`` (ket) and ``B_R`` (bra) in place.

    Returns a matrix with rows = bra ``(u, l, d, m)`` and columns = ket.
    """
    B_R = A_R if B_R is None else B_R
    hr = K.absorb_right(env.right, env.top_right, A_R, B_R.conj(), env.bottom_right)
    x = td(env.left, env.top_left, ([0], [0]))  # lk lb s uk ub t'
    x = td(x, env.bottom_left, ([2], [0]))  # lk lb uk ub t' dk db s'
    x = td(x, hr, ([4, 7], [0, 3]))  # lk lb uk ub dk db mk mb
    sh = x.shape
    n = sh[2] * sh[0] * sh[4] * sh[6]
    return x.transpose(3, 1, 5, 7, 2, 0, 4, 6).reshape(n, n)


def full_norm_right(env: PairEnvironment, A_L: np.ndarray, B_L: np.ndarray | None = None):
    """Environment of ``A_R``; rows = bra ``(u, m, d, r)``, columns = ket."""
    B_L = A_L if B_L is None else B_L
    hl = K.absorb_left(env.left, env.top_left, A_L, B_L.conj(), env.bottom_left)
    x = td(hl, env.top_right, ([0], [0]))  # mk mb s uk ub t''
    x = td(x, env.bottom_right, ([2], [0]))  # mk mb uk ub t'' dk db s''
    x = td(x, env.right, ([4, 7], [0, 3]))  # mk mb uk ub dk db rk rb
    sh = x.shape
    n = sh[2] * sh[0] * sh[4] * sh[6]
    return x.transpose(3, 1, 5, 7, 2, 0, 4, 6).reshape(n, n)


def _rhs_left(env, GL, GR, A_R):
    """Linear term for ``A_L``: ``b[p, u, l, d, m]`` from the gated pair ``(GL, GR)``."""
    hr = K.absorb_right(env.right, env.top_right, GR, A_R.conj(), env.bottom_right)  # t' mk mb s'
    x = td(env.left, env.top_left, ([0], [0]))  # lk lb s uk ub t'
    x = td(x, GL, ([0, 3], [2, 1]))  # lb s ub t' p dk mk
    x = td(x, env.bottom_left, ([1, 5], [0, 1]))  # lb ub t' p mk db s'
    x = td(x, hr, ([2, 4, 6], [0, 1, 3]))  # lb ub p db mb
    return x.transpose(2, 1, 0, 3, 4)


def _rhs_right(env, GL, GR, A_L):
    hl = K.absorb_left(env.left, env.top_left, GL, A_L.conj(), env.bottom_left)  # t' mk mb s'
    x = td(env.right, env.top_right, ([0], [3]))  # rk rb s'' t' uk ub
    x = td(x, GR, ([0, 4], [4, 1]))  # rb s'' t' ub q mk dk
    x = td(x, env.bottom_right, ([1, 6], [3, 1]))  # rb t' ub q mk s' db
    x = td(x, hl, ([1, 4, 5], [0, 1, 3]))  # rb ub q db mb
    return x.transpose(2, 1, 4, 3, 0)


def _full_solve(n, rhs, pinv):
    d = rhs.shape[0]
    b = rhs.reshape(d, -1).T
    x, cond = pinv_solve(n, b, pinv)
    return x.T.reshape(rhs.shape), cond


def _leg_gauge(Xt: np.ndarray, axis: int, cutoff: float):
    """``R`` from the QR of ``Xt`` matricized as (all other axes) x ``axis``."""
    moved = np.moveaxis(Xt, axis, -1)
    R = _square_r(moved.reshape(-1, moved.shape[-1]))
    R_inv, cond = _invert(R, cutoff, f"R[{axis}]")
    return R, R_inv, cond


def full_tensor_update(
    A_L: np.ndarray,
    A_R: np.ndarray,
    gate: np.ndarray,
    env: PairEnvironment,
    settings: UpdateSettings,
):
    """Gate update optimizing the full site tensors, with outer-leg gauge fixing."""
    report = UpdateReport(method="full", gauge=settings.gauge)
    pinv = settings.pinv
    gauge = settings.gauge != "none"
    AL, AR = A_L, A_R
    env_g = env
    gauges = None
    if gauge:
        nl = full_norm_left(env, A_R)
        nr = full_norm_right(env, A_L)
        xl, _ = hermitian_positive_approximant(nl)
        xr, _ = hermitian_positive_approximant(nr)
        if xl.shape[1] == 0 or xr.shape[1] == 0:
            raise DegenerateEnvironmentError("single-site environment has no positive part")
        shl = A_L.shape[1:]  # u l d m
        shr = A_R.shape[1:]  # u m d r
        xl = xl.reshape(shl + (-1,))
        xr = xr.reshape(shr + (-1,))
        gl = {ax: _leg_gauge(xl, ax, settings.gauge_inverse_cutoff) for ax in (0, 1, 2)}
        gr = {ax: _leg_gauge(xr, ax, settings.gauge_inverse_cutoff) for ax in (0, 2, 3)}
        worst = max(g[2] for g in (*gl.values(), *gr.values()))
        gauge = worst < 1.0 / settings.gauge_inverse_cutoff
        if not gauge:
            report.gauge = "fallback"
    if gauge:
        gauges = (gl, gr)
        # site tensors in the gauged frame: leg -> conj(R) leg
        for ax, (R, _, _) in gl.items():
            AL = np.moveaxis(td(R.conj(), AL, ([1], [ax + 1])), 0, ax + 1)
        for ax, (R, _, _) in gr.items():
            AR = np.moveaxis(td(R.conj(), AR, ([1], [ax + 1])), 0, ax + 1)
        minv = lambda g, ax: g[ax][1].conj()  # noqa: E731
        env_g = PairEnvironment(
            _gauge_env_leg(env.left, (1, 2), minv(gl, 1)),
            _gauge_env_leg(env.top_left, (1, 2), minv(gl, 0)),
            _gauge_env_leg(env.top_right, (1, 2), minv(gr, 0)),
            _gauge_env_leg(env.right, (1, 2), minv(gr, 3)),
            _gauge_env_leg(env.bottom_right, (1, 2), minv(gr, 2)),
            _gauge_env_leg(env.bottom_left, (1, 2), minv(gl, 2)),
        )

    GL, GR = gate_pair(AL, AR, gate)
    target_sq = _overlap(env_g, GL, GR, GL, GR).real

    def cost_of(a, b):
        val = (
            _overlap(env_g, a, b, a, b).real
            - 2 * _overlap(env_g, GL, GR, a, b).real
            + target_sq
        )
        return float(val)

    report.costs.append(cost_of(AL, AR))
    # initialization through the reduced tensors
    pair = reduce_pair(AL, AR)
    if settings.use_svd_init:
        aL, aR, report.discarded_weight = svd_init(pair.a_L, pair.a_R, gate, settings.D)
    else:
        aL, aR = pair.a_L, pair.a_R
        if aL.shape[2] > settings.D:
            aL, aR = final_form(aL, aR, settings.D)
    AL, AR = recombine(ReducedPair(pair.Q_L, aL, aR, pair.Q_R))
    d_prev = cost_of(AL, AR)
    report.costs.append(d_prev)
    scale = report.costs[0] if report.costs[0] > 0 else 1.0
    failures = 0
    for u in range(settings.max_sweeps):
        for side in ("left", "right"):
            if side == "left":
                lm, q = lq_split(AR, [2]).factors
                AL, AR = td(AL, lm, ([4], [0])), np.moveaxis(q, 0, 2)
                n = full_norm_left(env_g, AR)
                rhs = _rhs_left(env_g, GL, GR, AR)
                new, cond = _full_solve(n, rhs, pinv)
                trial = (new, AR)
            else:
                q, r = qr_split(AL, [0, 1, 2, 3]).factors
                AL_q, AR_r = q, np.moveaxis(td(r, AR, ([1], [2])), 0, 2)
                n = full_norm_right(env_g, AL_q)
                rhs = _rhs_right(env_g, GL, GR, AL_q)
                new, cond = _full_solve(n, rhs, pinv)
                trial = (AL_q, new)
                AL, AR = AL_q, AR_r
            report.conds.append(cond)
            c_new = cost_of(*trial)
            if c_new > d_prev + NOISE_FLOOR * target_sq:
                failures += 1
                if failures >= 2:
                    report.aborted = True
                    break
                pinv = PinvSettings(min(1e-2, pinv.relative_cutoff * 100))
                continue
            AL, AR = trial
            d_prev = c_new
        if report.aborted:
            break
        report.costs.append(d_prev)
        report.sweeps = u + 1
        eps = abs(report.costs[-1] - report.costs[-2]) / scale
        report.eps.append(eps)
        if eps < settings.eps_tol:
            break
    # final form on the internal bond
    pair = reduce_pair(AL, AR)
    aL, aR = final_form(pair.a_L, pair.a_R, settings.D)
    AL, AR = recombine(ReducedPair(pair.Q_L, aL, aR, pair.Q_R))
    if gauges is not None:
        gl, gr = gauges
        for ax, (_, R_inv, _) in gl.items():
            AL = np.moveaxis(td(R_inv.conj(), AL, ([1], [ax + 1])), 0, ax + 1)
        for ax, (_, R_inv, _) in gr.items():
            AR = np.moveaxis(td(R_inv.conj(), AR, ([1], [ax + 1])), 0, ax + 1)
    return AL, AR, report
