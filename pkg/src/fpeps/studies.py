"""Replication studies built on the core modules.

Each function returns plain records (lists of dicts or small dataclasses)
that the command-line front end writes as CSV.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import peps as P
from .environment import (
    BoundaryCache,
    ContractionSettings,
    RowStrip,
    boundary_step,
    correlation_function,
    expect_local,
    top_boundaries,
    trivial_boundary,
)
from .evolution import EvolveSettings, build_gates, evolve
from .models import SX, SZ, ModelSpec
from .update import UpdateSettings, full_tensor_update, update_pair

OBSERVABLES = {"sz": SZ, "sx": SX}


# -- exponential fits ------------------------------------------------------------------------------


@dataclass
class FitResult:
    """``y ~ A exp(-x / rate)`` fitted in log space."""

    rate: float
    amplitude: float
    r2: float
    residuals: list
    points: list
    mode: str = "lsq"

    @property
    def ok(self) -> bool:
        return math.isfinite(self.rate) and self.rate > 0


def fit_exponential(xs, ys, mode: str = "lsq", pair=None, floor: float = 1e-13) -> FitResult:
    """Fit ``log y`` linearly in ``x``.

    ``mode="lsq"`` uses every point with ``|y| > floor``; ``mode="two_point"``
    uses exactly the two abscissae in ``pair``.  Points outside the given
    samples are never used, so the fit does not extrapolate.
    """
    pts = [(float(x), abs(float(y))) for x, y in zip(xs, ys) if abs(y) > floor]
    if mode == "two_point":
        if pair is None:
            raise ValueError("two_point mode needs the pair of abscissae")
        pts = [p for p in pts if p[0] in {float(v) for v in pair}]
    elif mode != "lsq":
        raise ValueError(f"unknown fit mode {mode!r}")
    if len(pts) < 2:
        return FitResult(math.nan, math.nan, math.nan, [], pts, mode)
    x = np.array([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    slope, icpt = np.polyfit(x, y, 1)
    res = y - (slope * x + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(res**2)) / ss_tot if ss_tot > 0 else 1.0
    rate = -1.0 / slope if slope < 0 else math.nan
    return FitResult(rate, math.exp(icpt), r2, res.tolist(), pts, mode)


# -- cluster error versus correlation length ----------------------------------------------------------


@dataclass
class ClusterStudy:
    errors: list = field(default_factory=list)  # observable, delta, value, reference, eps
    correlations: list = field(default_factory=list)  # observable, x, G
    fits: dict = field(default_factory=dict)  # observable -> (delta fit, zeta fit)


def center_site(psi: P.Peps) -> tuple[int, int]:
    return ((psi.rows - 1) // 2, (psi.cols - 1) // 2)


def cluster_study(
    psi: P.Peps,
    observables=("sz",),
    deltas=None,
    xs=None,
    s: ContractionSettings | None = None,
    fit_mode: str = "lsq",
    delta_pair=(2, 4),
    x_pair=(4, 8),
) -> ClusterStudy:
    """Cluster errors of a central local observable and the matching correlator.

    The default fit ranges are ``delta in [1, L/2]`` and ``x in [2, L/2]``.
    """
    s = s or ContractionSettings.for_state(psi)
    L = psi.rows
    deltas = list(range(0, L)) if deltas is None else list(deltas)
    xs = list(range(1, L // 2 + 1)) if xs is None else list(xs)
    site = center_site(psi)
    out = ClusterStudy()
    for name in observables:
        op = OBSERVABLES[name]
        ref = float(np.real(expect_local(psi, site, op, s)))
        eps = {}
        for d in deltas:
            v = float(np.real(expect_local(psi, site, op, s, delta=d)))
            eps[d] = abs(v - ref) / abs(ref) if ref != 0 else abs(v - ref)
            out.errors.append(dict(observable=name, delta=d, value=v, reference=ref, eps=eps[d]))
        g = np.real(correlation_function(psi, op, xs, "horizontal", s, connected=True))
        for x, gx in zip(xs, g):
            out.correlations.append(dict(observable=name, x=x, G=float(gx)))
        dsel = [d for d in deltas if 1 <= d <= L / 2]
        xsel = [(x, gx) for x, gx in zip(xs, g) if 2 <= x <= L / 2]
        fd = fit_exponential(dsel, [eps[d] for d in dsel], fit_mode, delta_pair)
        fz = fit_exponential([p[0] for p in xsel], [p[1] for p in xsel], fit_mode, x_pair)
        out.fits[name] = (fd, fz)
    return out


# -- gauge fixing A/B ---------------------------------------------------------------------------------


@dataclass
class GaugeStudy:
    """Paired reduced-tensor updates with and without gauge fixing on identical inputs."""

    label: str
    with_gauge: list = field(default_factory=list)  # UpdateReport
    without_gauge: list = field(default_factory=list)

    @property
    def conds_with(self) -> np.ndarray:
        return np.array([c for r in self.with_gauge for c in r.conds if math.isfinite(c)])

    @property
    def conds_without(self) -> np.ndarray:
        return np.array([c for r in self.without_gauge for c in r.conds if math.isfinite(c)])

    def paired_ratios(self) -> np.ndarray:
        out = []
        for a, b in zip(self.with_gauge, self.without_gauge):
            ca = [c for c in a.conds if math.isfinite(c)]
            cb = [c for c in b.conds if math.isfinite(c)]
            if ca and cb:
                out.append(np.median(cb) / np.median(ca))
        return np.array(out)

    def absolute_drops(self):
        """Mean cost drop of the gauged initialization and of one plain sweep."""
        init = [r.costs[0] - r.costs[1] for r in self.with_gauge]
        sweep = [r.costs[0] - r.costs[2] for r in self.without_gauge if len(r.costs) > 2]
        return float(np.mean(init)), float(np.mean(sweep))

    def relative_drops(self):
        """Mean relative cost drop of the gauged initialization and of one plain sweep."""
        init = [(r.costs[0] - r.costs[1]) / r.costs[0] for r in self.with_gauge if r.costs[0] > 0]
        sweep = [
            (r.costs[0] - r.costs[2]) / r.costs[0]
            for r in self.without_gauge
            if len(r.costs) > 2 and r.costs[0] > 0
        ]
        return float(np.mean(init)), float(np.mean(sweep))

    def eps_table(self, horizon: int = 10):
        """Mean relative change per sweep, ``u = 1..horizon``, for both arms."""
        rows = []
        for arm, reps in (("gauge", self.with_gauge), ("no_gauge", self.without_gauge)):
            for u in range(1, horizon + 1):
                vals = [r.eps[u - 1] for r in reps if len(r.eps) >= u]
                if vals:
                    rows.append(dict(arm=arm, u=u, mean_eps=float(np.mean(vals)), count=len(vals)))
        return rows


def prepared_state(
    m: ModelSpec,
    L: int,
    D: int,
    su_steps: int,
    tau: float,
    seed: int = 0,
    base=None,
    noise: float = 1e-2,
) -> P.Peps:
    """A bond-``D`` state relaxed by simple-update imaginary time evolution."""
    if base is None:
        base = P.neel_states(L) if m.kind == "heisenberg" else tilted_state(L)
    psi = P.init_separable_with_noise(L, 2, D, base, noise, seed)
    plan = build_gates(m, tau, L, L)
    es = EvolveSettings(method="su", update=UpdateSettings(D=D), contraction=ContractionSettings(D_prime=max(4, D * D)))
    for _ in range(su_steps):
        psi = evolve(psi, plan, es)
    return psi


def tilted_state(L: int, theta: float = 0.3) -> np.ndarray:
    """Spins tilted from ``+x`` towards ``+z`` (breaks the Ising symmetry)."""
    v = np.array([math.cos(math.pi / 4 - theta / 2), math.sin(math.pi / 4 - theta / 2)])
    return np.broadcast_to(v, (L, L, 2)).astype(complex)


def gauge_study(
    psi: P.Peps,
    m: ModelSpec,
    tau: float,
    steps: int,
    D: int,
    D_prime: int | None = None,
    label: str = "",
    full_tensor: bool = False,
) -> GaugeStudy:
    """Full-update steps with gauge fixing, probing the no-gauge arm on every pair."""
    es = EvolveSettings(
        method="fu",
        update=UpdateSettings(D=D, gauge="global"),
        contraction=ContractionSettings(D_prime=D_prime or 2 * D * D),
        full_tensor=full_tensor,
    )
    run = full_tensor_update if full_tensor else update_pair
    plain = UpdateSettings(D=D, gauge="none")
    study = GaugeStudy(label)
    reps: list = []

    def probe(A_L, A_R, gate, env):
        _, _, rep = run(A_L, A_R, gate, env, plain)
        study.without_gauge.append(rep)

    plan = build_gates(m, tau, psi.rows, psi.cols)
    cache = BoundaryCache()
    for _ in range(steps):
        psi = evolve(psi, plan, es, cache, reps, probe=probe)
    study.with_gauge = [r for _, _, r in reps]
    return study


# -- scaling probe --------------------------------------------------------------------------------------


def scaling_probe(Ds=(2, 3, 4, 5), L: int = 8, repeats: int = 3, row: int = 3, seed: int = 1):
    """Wall time of ``boundary_step`` and of a pair environment versus ``D`` with ``D' = 2 D^2``.

    Returns ``(records, boundary exponent, pair-environment exponent)``.
    """
    recs = []
    for D in Ds:
        psi = P.random_peps(L, L, 2, D, seed=seed)
        s = ContractionSettings(D_prime=2 * D * D)
        b = trivial_boundary(L)
        for r in range(row):
            b = boundary_step(b, psi.row(r), s)
        times = []
        sweeps = 0
        for _ in range(repeats):
            t0 = time.perf_counter()
            out = boundary_step(b, psi.row(row), s)
            times.append(time.perf_counter() - t0)
            sweeps = out.sweeps
        bottom = top_boundaries(psi.flipped(), s, L - row - 1)[-1]
        ptimes = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            RowStrip(b, bottom, psi.row(row)).pair_environment(L // 2 - 1)
            ptimes.append(time.perf_counter() - t0)
        recs.append(
            dict(
                D=D,
                D_prime=2 * D * D,
                L=L,
                boundary_step_s=min(times),
                pair_environment_s=min(ptimes),
                half_sweeps=sweeps,
            )
        )
    x = np.log([r["D"] for r in recs])
    kb = float(np.polyfit(x, np.log([r["boundary_step_s"] for r in recs]), 1)[0])
    kp = float(np.polyfit(x, np.log([r["pair_environment_s"] for r in recs]), 1)[0])
    return recs, kb, kp
