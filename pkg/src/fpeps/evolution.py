"""Imaginary-time evolution: Trotter gates, sweeps over the lattice, schedules."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg

from . import peps as P
from .environment import (
    BoundaryCache,
    ClusterSettings,
    ContractionSettings,
    RowStrip,
    boundary_step,
    cluster_top,
    measure,
    separable_boundary_step,
    trivial_boundary,
    trivial_separable,
)
from .models import ModelSpec, bond_hamiltonians
from .peps import Peps
from .update import UpdateSettings, full_tensor_update, simple_update, update_pair

log = logging.getLogger(__name__)

METHODS = ("su", "cu", "fu")


class EvolutionError(ArithmeticError):
    """A gate update failed; the message names the gate."""


# -- gates --------------------------------------------------------------------------------------


def gate_from_hamiltonian(h: np.ndarray, tau: float) -> np.ndarray:
    w, u = scipy.linalg.eigh(h)
    return (u * np.exp(-tau * w)) @ u.conj().T


@dataclass
class GateGroup:
    name: str  # h-even, h-odd, v-even, v-odd
    gates: list  # [((site_a, site_b), 4x4 matrix), ...]

    @property
    def orientation(self) -> str:
        return self.name[0]


@dataclass
class TrotterPlan:
    tau: float
    groups: list[GateGroup]

    def all_gates(self):
        for g in self.groups:
            yield from g.gates


def build_gates(
    m: ModelSpec, tau: float, rows: int, cols: int | None = None, palindromic: bool = False
) -> TrotterPlan:
    """Bond gates ``exp(-tau h)`` grouped into four sets of disjoint bonds."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    cols = rows if cols is None else cols
    hs = bond_hamiltonians(m, rows, cols)

    def group(name, t):
        out = []
        for (a, b), h in hs.items():
            horizontal = a[0] == b[0]
            if name[0] == "h" and horizontal and a[1] % 2 == (name[2:] == "odd"):
                out.append(((a, b), gate_from_hamiltonian(h, t)))
            if name[0] == "v" and not horizontal and a[0] % 2 == (name[2:] == "odd"):
                out.append(((a, b), gate_from_hamiltonian(h, t)))
        return GateGroup(name, out)

    if not palindromic:
        names = ["h-even", "h-odd", "v-even", "v-odd"]
        return TrotterPlan(tau, [group(n, tau) for n in names])
    half = tau / 2
    groups = [
        group("h-even", half),
        group("h-odd", half),
        group("v-even", half),
        group("v-odd", tau),
        group("v-even", half),
        group("h-odd", half),
        group("h-even", half),
    ]
    return TrotterPlan(tau, groups)


# -- one time step -------------------------------------------------------------------------------


@dataclass(frozen=True)
class EvolveSettings:
    method: str = "fu"
    delta: int = 0
    update: UpdateSettings = UpdateSettings(D=2)
    contraction: ContractionSettings = ContractionSettings()
    full_tensor: bool = False
    normalize: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown update method {self.method!r}")


def _passes(plan: TrotterPlan):
    """Consecutive runs of groups with the same orientation."""
    out = []
    for g in plan.groups:
        if out and out[-1][0] == g.orientation:
            out[-1][1].append(g)
        else:
            out.append((g.orientation, [g]))
    return out


def _to_work(bond, orientation):
    (a, b) = bond
    if orientation == "h":
        return a, b
    return (a[1], a[0]), (b[1], b[0])


class _Envs:
    """Top/bottom boundaries of one orientation pass for the chosen method."""

    def __init__(self, work: Peps, s: EvolveSettings, cache: BoundaryCache, label: str):
        self.work = work
        self.s = s
        self.cache = cache
        self.label = label
        self.L = work.rows
        c = s.contraction
        flipped = work.flipped()
        if s.method == "fu":
            self.bottoms = [None] * self.L
            b = trivial_boundary(work.cols)
            self.bottoms[self.L - 1] = b
            for k in range(self.L - 1):
                key = (label + "-bottom", k + 1)
                b = boundary_step(b, flipped.row(k), c, guess=cache.get(key))
                cache.put(key, b)
                self.bottoms[self.L - 2 - k] = b
        else:
            seps = [trivial_separable(work.cols)]
            for k in range(self.L - 1):
                seps.append(separable_boundary_step(seps[-1], flipped.row(k)))
            if s.method == "su":
                self.bottoms = [seps[self.L - 1 - r].as_mpo() for r in range(self.L)]
            else:
                cs = ClusterSettings(s.delta, c)
                self.bottoms = [
                    cluster_top(flipped, self.L - 1 - r, cs, seps) for r in range(self.L)
                ]
        self._top = trivial_boundary(work.cols)
        self._seps_top = [trivial_separable(work.cols)]

    def top(self, r: int):
        """Top boundary of row ``r``; rows ``< r`` must already be final."""
        s, c = self.s, self.s.contraction
        if s.method == "fu":
            if r > 0:
                key = (self.label + "-top", r)
                self._top = boundary_step(
                    self._top, self.work.row(r - 1), c, guess=self.cache.get(key)
                )
                self.cache.put(key, self._top)
            return self._top
        while len(self._seps_top) <= r:
            k = len(self._seps_top) - 1
            self._seps_top.append(separable_boundary_step(self._seps_top[-1], self.work.row(k)))
        if s.method == "su":
            return self._seps_top[r].as_mpo()
        return cluster_top(self.work, r, ClusterSettings(s.delta, c), self._seps_top)


def _rescale(psi: Peps, log_norm_sq: float) -> Peps:
    """Equalize the largest element of every tensor and set the norm to one."""
    logs = 0.0
    for site in psi.sites():
        m = float(np.max(np.abs(psi[site])))
        if not np.isfinite(m) or m == 0:
            raise P.ScalingError(f"tensor at {site} is zero or not finite")
        psi[site] = psi[site] / m
        logs += math.log(m)
    log_new = log_norm_sq - 2 * logs
    f = math.exp(-log_new / (2 * psi.n_sites))
    for site in psi.sites():
        psi[site] = psi[site] * f
    return psi


def evolve(
    psi: Peps,
    plan: TrotterPlan,
    settings: EvolveSettings,
    cache: BoundaryCache | None = None,
    reports: list | None = None,
    probe=None,
) -> Peps:
    """Apply every gate of ``plan`` once (one time step).

    ``probe(A_L, A_R, gate, env)`` is called before each pair update, e.g. to
    run an alternative update on identical inputs.
    """
    cache = cache if cache is not None else BoundaryCache()
    psi = psi.copy()
    for pi, (orientation, groups) in enumerate(_passes(plan)):
        work = psi if orientation == "h" else psi.transposed()
        envs = _Envs(work, settings, cache, f"{orientation}{pi}")
        by_row: dict[int, list] = {}
        for g in groups:
            for bond, gate in g.gates:
                a, b = _to_work(bond, orientation)
                by_row.setdefault(a[0], []).append((g.name, bond, a, gate))
        strip = None
        for r in range(work.rows):
            top = envs.top(r)
            strip = RowStrip(top, envs.bottoms[r], work.row(r))
            for name, bond, (_, c), gate in by_row.get(r, []):
                env = strip.pair_environment(c)
                A_L, A_R = work[r, c], work[r, c + 1]
                if probe is not None:
                    probe(A_L, A_R, gate, env)
                if settings.method == "su":
                    new_l, new_r, _ = simple_update(A_L, A_R, gate, env, settings.update.D)
                    rep = None
                elif settings.full_tensor:
                    new_l, new_r, rep = full_tensor_update(A_L, A_R, gate, env, settings.update)
                else:
                    new_l, new_r, rep = update_pair(A_L, A_R, gate, env, settings.update)
                if rep is not None and rep.aborted:
                    raise EvolutionError(f"update of gate {name} {bond} aborted: cost increased")
                if not (np.all(np.isfinite(new_l)) and np.all(np.isfinite(new_r))):
                    raise EvolutionError(f"update of gate {name} {bond} produced non-finite tensors")
                work[r, c], work[r, c + 1] = new_l, new_r
                strip.set_sites(c, [new_l, new_r])
                if reports is not None and rep is not None:
                    reports.append((name, bond, rep))
        if settings.normalize:
            val, lg = strip.norm()
            if not val.real > 0:
                raise P.ScalingError(f"norm estimate is not positive ({val})")
            work = _rescale(work, lg + math.log(val.real))
        psi = work if orientation == "h" else work.transposed()
    return psi


# -- observables ------------------------------------------------------------------------------------


def energy(
    psi: Peps, m: ModelSpec, s: ContractionSettings | None = None, delta: int | None = None
) -> float:
    """Energy per site from nearest-neighbour density matrices."""
    s = s or ContractionSettings.for_state(psi)
    meas = measure(psi, s, delta)
    return energy_from_measurements(meas, m, psi.rows, psi.cols)


def energy_from_measurements(meas, m: ModelSpec, rows: int, cols: int) -> float:
    hs = bond_hamiltonians(m, rows, cols)
    total = 0.0
    for (a, b), h in hs.items():
        rho = meas.rdm2_h[a] if a[0] == b[0] else meas.rdm2_v[a]
        total += float(np.trace(h @ rho.reshape(4, 4)).real)
    return total / (rows * cols)


# -- schedules ----------------------------------------------------------------------------------------


@dataclass(frozen=True)
class Stage:
    D: int
    tau: float
    max_steps: int
    energy_tol: float = 1e-6
    D_prime: int | None = None
    method: str = "fu"
    delta: int = 0
    B_Z: float = 0.0
    ramp_factor: float = 0.9
    ramp_every: int = 10
    measure_every: int = 1
    full_tensor: bool = False
    gauge: str = "global"

    @property
    def boundary_dim(self) -> int:
        return self.D_prime if self.D_prime is not None else 2 * self.D**2


@dataclass
class Schedule:
    stages: list[Stage]
    noise: float = 1e-6
    seed: int = 0
    window: int = 5
    B_Z_floor: float = 1e-6
    measure_D_prime: int | None = None

    def __post_init__(self):
        for a, b in zip(self.stages, self.stages[1:]):
            if a.D == b.D and a.method == b.method and not b.tau < a.tau:
                raise ValueError("tau must decrease between consecutive stages with the same D")


@dataclass
class StageReport:
    stage: int
    D: int
    D_prime: int
    tau: float
    method: str
    steps: int
    energy: float
    error: float
    converged: bool
    wall_time_s: float
    energies: list = field(default_factory=list)
    monotonicity_violations: int = 0
    update_reports: list = field(default_factory=list)


STAGE_COLUMNS = [
    "stage",
    "D",
    "D_prime",
    "tau",
    "method",
    "steps",
    "energy",
    "error",
    "converged",
    "wall_time_s",
]

UPDATE_COLUMNS = [
    "stage",
    "step",
    "gate",
    "bond",
    "method",
    "gauge",
    "cond_min",
    "cond_median",
    "cond_max",
    "sweeps",
    "cost_initial",
    "cost_final",
    "costs",
    "discarded_weight",
]


def update_rows(stage: int, step: int, entries) -> list[list]:
    """Rows of the per-update log for ``(gate name, bond, UpdateReport)`` entries."""
    rows = []
    for name, bond, rep in entries:
        conds = [c for c in rep.conds if math.isfinite(c)]
        cstats = (min(conds), float(np.median(conds)), max(conds)) if conds else ("", "", "")
        rows.append(
            [stage, step, name, "-".join(f"{r}.{c}" for r, c in bond), rep.method, rep.gauge, *cstats,
             rep.sweeps, rep.costs[0] if rep.costs else "", rep.costs[-1] if rep.costs else "",
             ";".join(f"{c:.10g}" for c in rep.costs), rep.discarded_weight]
        )
    return rows


def staggered_field(stage: Stage, step: int, floor: float) -> float:
    """Staggered field at ``step``: geometric decay, zero in the last quarter of the stage."""
    if stage.B_Z == 0.0 or step >= 0.75 * stage.max_steps:
        return 0.0
    b = stage.B_Z * stage.ramp_factor ** (step // max(1, stage.ramp_every))
    return 0.0 if b < floor else b


def converged(energies: list[float], window: int, tol: float) -> bool:
    if len(energies) < window:
        return False
    last = energies[-window:]
    return all(abs(b - a) < tol for a, b in zip(last, last[1:]))


def run_schedule(
    psi0: Peps,
    m: ModelSpec,
    schedule: Schedule,
    out_dir: str | Path | None = None,
    keep_update_reports: bool = False,
    progress=None,
):
    """Run all stages; returns ``(state, [StageReport, ...])``."""
    psi = psi0.copy()
    reports: list[StageReport] = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "updates.csv", "w", newline="") as fh:
            csv.writer(fh).writerow(UPDATE_COLUMNS)
    base = replace(m, B_Z=0.0)
    for i, st in enumerate(schedule.stages):
        t0 = time.perf_counter()
        if st.D > psi.D:
            psi = P.embed(psi, st.D, schedule.noise, schedule.seed + i)
        dp = st.boundary_dim
        meas_s = ContractionSettings(D_prime=schedule.measure_D_prime or dp)
        es = EvolveSettings(
            method=st.method,
            delta=st.delta,
            update=UpdateSettings(D=st.D, gauge=st.gauge),
            contraction=ContractionSettings(D_prime=dp),
            full_tensor=st.full_tensor,
        )
        cache = BoundaryCache()
        energies: list[float] = []
        upd = [] if keep_update_reports or out is not None else None
        logged = 0
        violations = 0
        done = False
        plans: dict[float, TrotterPlan] = {}
        steps = 0
        for step in range(st.max_steps):
            b_z = staggered_field(st, step, schedule.B_Z_floor)
            if b_z not in plans:
                plans = {b_z: build_gates(base.with_staggered_field(b_z), st.tau, psi.rows, psi.cols)}
            psi = evolve(psi, plans[b_z], es, cache, upd)
            steps = step + 1
            if out is not None and len(upd) > logged:
                with open(out / "updates.csv", "a", newline="") as fh:
                    csv.writer(fh).writerows(update_rows(i, steps, upd[logged:]))
                if keep_update_reports:
                    logged = len(upd)
                else:
                    upd.clear()
            if steps % st.measure_every == 0:
                e = energy(psi, base, meas_s)
                if energies and e > energies[-1] + st.tau**2 and b_z == 0.0:
                    violations += 1
                    log.warning("energy increased %.8f -> %.8f at step %d", energies[-1], e, steps)
                energies.append(e)
                if progress is not None:
                    progress(i, steps, e)
                if b_z == 0.0 and converged(energies, schedule.window, st.energy_tol):
                    done = True
                    break
        if not energies or steps % st.measure_every:
            energies.append(energy(psi, base, meas_s))
        prev = reports[-1] if reports else None
        err = abs(energies[-1] - prev.energy) if prev is not None and prev.D == st.D else math.nan
        rep = StageReport(
            i, st.D, dp, st.tau, st.method, steps, energies[-1], err, done,
            time.perf_counter() - t0, energies, violations, upd or [],
        )
        reports.append(rep)
        if not done:
            log.warning("stage %d did not converge within %d steps", i, st.max_steps)
        if out is not None:
            P.save(
                psi,
                out / f"stage{i}.peps",
                {"model": m.kind, "D": st.D, "tau": st.tau, "stage": i, "seed": schedule.seed},
            )
            write_stage_csv(reports, out / "stages.csv")
    return psi, reports


def write_stage_csv(reports: list[StageReport], path, extra: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        cols = STAGE_COLUMNS + (list(extra) if extra else [])
        w.writerow(cols)
        for r in reports:
            d = asdict(r)
            row = [d[c] for c in STAGE_COLUMNS] + (list(extra.values()) if extra else [])
            w.writerow(row)
