"""``fpeps`` command-line front end.

Exit codes: 0 ok, 2 configuration or input error, 3 numeric failure,
4 non-convergence or a result outside its declared band (outputs are still
written in that case).
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import peps as P
from . import studies as S
from .config import ConfigError, RunConfig, load_config
from .environment import ContractionSettings, measure
from .evolution import Schedule, Stage, energy_from_measurements, run_schedule
from .models import ModelSpec
from .purification import NORM_COLUMNS, SolverSettings, two_row_study

log = logging.getLogger("fpeps")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_FLAGGED = 0, 2, 3, 4

COMMANDS = (
    "groundstate",
    "cluster-study",
    "gauge-study",
    "purification-study",
    "energy-table",
    "scaling-probe",
    "validate-config",
    "checkpoint-info",
)


class Flagged(Exception):
    """Outputs were written but a convergence or band check failed."""


# -- helpers --------------------------------------------------------------------------------------


def write_csv(path: Path, rows: list[dict], columns: list[str], config_hash: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns + ["config_hash"], extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({**r, "config_hash": config_hash})
    return path


def stamp_csv(path: Path, config_hash: str) -> Path:
    """Append the ``config_hash`` column to a CSV written by library code."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerows([rows[0] + ["config_hash"]] + [r + [config_hash] for r in rows[1:]])
    return path


def base_state(kind: str, L: int) -> np.ndarray:
    if kind == "neel":
        return P.neel_states(L)
    if kind == "up":
        return np.array([1.0, 0.0], dtype=complex)
    if kind == "x":
        return np.array([1.0, 1.0], dtype=complex) / math.sqrt(2)
    return S.tilted_state(L)


def _pool_map(fn, jobs, threads: int):
    """Run independent jobs serially or in a process pool; order is preserved."""
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as ex:
        return list(ex.map(fn, jobs))


def _checkpoint(path_arg, section: dict) -> P.Peps:
    path = path_arg or section.get("checkpoint") or ""
    if not path:
        raise ConfigError("a checkpoint is required (--resume or the section's checkpoint key)")
    if not Path(path).exists():
        raise ConfigError(f"checkpoint {path} does not exist")
    try:
        return P.load(path)
    except P.CheckpointError as exc:
        raise ConfigError(str(exc)) from exc


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.section("run")["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands -------------------------------------------------------------------------------------


def cmd_groundstate(cfg: RunConfig, resume=None) -> list[Path]:
    m = cfg.model()
    L = cfg.sections["model"]["L"]
    sched = cfg.schedule()
    init = cfg.section("init")
    if resume:
        psi0 = _checkpoint(resume, {})
        if psi0.rows != L:
            raise ConfigError(f"checkpoint is {psi0.rows}x{psi0.cols}, config says L={L}")
    else:
        psi0 = P.init_separable_with_noise(
            L, m.d, sched.stages[0].D, base_state(init["state"], L), init["noise"], cfg.seed
        )
    out = _out(cfg)
    psi, reports = run_schedule(psi0, m, sched, out)
    rows = [
        {k: getattr(r, k) for k in ("stage", "D", "D_prime", "tau", "method", "steps", "energy", "error", "converged", "wall_time_s")}
        | {"violations": r.monotonicity_violations}
        for r in reports
    ]
    cols = list(rows[0])
    paths = [write_csv(out / "stages.csv", rows, cols, cfg.hash), stamp_csv(out / "updates.csv", cfg.hash)]
    s = ContractionSettings(D_prime=sched.measure_D_prime or sched.stages[-1].boundary_dim)
    meas = measure(psi, s)
    e = energy_from_measurements(meas, m, psi.rows, psi.cols)
    obs = []
    for (r, c), rho in sorted(meas.rdm1.items()):
        obs.append(
            dict(
                row=r,
                col=c,
                sz=float(np.trace(S.SZ @ rho).real),
                sx=float(np.trace(S.SX @ rho).real),
                energy_per_site=e,
            )
        )
    paths.append(write_csv(out / "observables.csv", obs, ["row", "col", "sz", "sx", "energy_per_site"], cfg.hash))
    if not all(r.converged for r in reports):
        raise Flagged("stage(s) %s did not converge" % [r.stage for r in reports if not r.converged])
    return paths


def cmd_cluster_study(cfg: RunConfig, resume=None) -> list[Path]:
    sec = cfg.section("cluster_study")
    psi = _checkpoint(resume, sec)
    s = ContractionSettings(D_prime=sec["D_prime"] or 2 * psi.D**2)
    obs = cfg.section("run")["observables"]
    study = S.cluster_study(
        psi, obs, sec["deltas"], sec["xs"], s, sec["fit_mode"], tuple(sec["delta_pair"]), tuple(sec["x_pair"])
    )
    out = _out(cfg)
    h = cfg.hash
    paths = [
        write_csv(out / "cluster_errors.csv", study.errors, ["observable", "delta", "value", "reference", "eps"], h),
        write_csv(out / "correlations.csv", study.correlations, ["observable", "x", "G"], h),
    ]
    fits, flags = [], []
    for name, (fd, fz) in study.fits.items():
        ratio = fd.rate / fz.rate if fd.ok and fz.ok else math.nan
        fits.append(
            dict(
                observable=name,
                delta0=fd.rate,
                zeta=fz.rate,
                ratio=ratio,
                r2_delta=fd.r2,
                r2_zeta=fz.r2,
                delta_points=len(fd.points),
                x_points=len(fz.points),
                mode=fd.mode,
            )
        )
        in_band = sec["ratio_low"] <= ratio <= sec["ratio_high"]
        if not (fd.ok and fz.ok and in_band and fd.r2 >= sec["r2_min"]):
            flags.append(name)
    cols = ["observable", "delta0", "zeta", "ratio", "r2_delta", "r2_zeta", "delta_points", "x_points", "mode"]
    paths.append(write_csv(out / "fits.csv", fits, cols, h))
    if flags:
        raise Flagged(f"fit failed or out of band for {flags}")
    return paths


def _gauge_job(job):
    kind, B, g = job
    m = ModelSpec(kind, B=B)
    psi = S.prepared_state(m, g["L"], g["D"], g["su_steps"], g["su_tau"], seed=g["seed"])
    arms = {"reduced": [False], "full_tensor": [True], "both": [False, True]}[g["update"]]
    conds, eps, drops = [], [], []
    for ft in arms:
        st = S.gauge_study(psi, m, g["tau"], g["steps"], g["D"], full_tensor=ft)
        upd = "full_tensor" if ft else "reduced"
        ratio = float(np.median(st.paired_ratios()))
        for arm, c in (("gauge", st.conds_with), ("no_gauge", st.conds_without)):
            conds.append(
                dict(
                    model=kind,
                    B=B,
                    update=upd,
                    arm=arm,
                    solves=len(c),
                    median=float(np.median(c)),
                    mean=float(np.mean(c)),
                    std=float(np.std(c)),
                    median_paired_ratio=ratio,
                )
            )
        eps += [dict(model=kind, B=B, update=upd, **r) for r in st.eps_table(g["horizon"])]
        (ri, rs), (ai, as_) = st.relative_drops(), st.absolute_drops()
        drops.append(
            dict(model=kind, B=B, update=upd, rel_init_gauge=ri, rel_sweep_no_gauge=rs, abs_init_gauge=ai, abs_sweep_no_gauge=as_)
        )
    return conds, eps, drops


def cmd_gauge_study(cfg: RunConfig, resume=None) -> list[Path]:
    g = dict(cfg.section("gauge_study"), seed=cfg.seed)
    results = _pool_map(_gauge_job, [(k, B, g) for k, B in g["models"]], cfg.section("run")["threads"])
    conds = [r for res in results for r in res[0]]
    eps = [r for res in results for r in res[1]]
    drops = [r for res in results for r in res[2]]
    out, h = _out(cfg), cfg.hash
    key = ["model", "B", "update"]
    return [
        write_csv(out / "gauge_conditions.csv", conds, key + ["arm", "solves", "median", "mean", "std", "median_paired_ratio"], h),
        write_csv(out / "gauge_eps.csv", eps, key + ["arm", "u", "mean_eps", "count"], h),
        write_csv(out / "gauge_drops.csv", drops, key + ["rel_init_gauge", "rel_sweep_no_gauge", "abs_init_gauge", "abs_sweep_no_gauge"], h),
    ]


def cmd_purification_study(cfg: RunConfig, resume=None) -> list[Path]:
    sec = cfg.section("purification_study")
    if resume or sec["checkpoint"]:
        psi = _checkpoint(resume, sec)
    else:
        m = ModelSpec("ising", B=sec["B"])
        psi = S.prepared_state(m, sec["L"], sec["D"], sec["su_steps"], sec["su_tau"], seed=cfg.seed)
    study = two_row_study(
        psi, sec["D2s"], sec["dps"], SolverSettings(kind=sec["solver"]), sec["sweeps_max"], seed=cfg.seed
    )
    rows = []
    for (D2, dp), err in sorted(study.fit_error.items()):
        rep = study.reports[(D2, dp)]
        rows.append(
            dict(
                method="purification",
                D=psi.D,
                D2=D2,
                d_purif=dp,
                sweeps=rep.sweeps,
                cost=rep.cost / rep.target_sq,
                relative_norm_error=study.norm_error[(D2, dp)],
                wall_time_s=study.wall_time[(D2, dp)],
                fit_error=err,
                monotone=rep.monotone,
                converged=rep.converged,
            )
        )
    for D2, err in sorted(study.general_fit_error.items()):
        rows.append(
            dict(
                method="boundary-mpo",
                D=psi.D,
                D2=D2,
                d_purif="",
                sweeps="",
                cost=study.general_cost[D2],
                relative_norm_error=study.general_norm_error[D2],
                wall_time_s=study.general_wall_time[D2],
                fit_error=err,
            )
        )
    cols = NORM_COLUMNS + ["fit_error", "monotone", "converged"]
    paths = [write_csv(_out(cfg) / "purification.csv", rows, cols, cfg.hash)]
    if not all(r.monotone for r in study.reports.values()):
        raise Flagged("non-monotone accepted cost in a purification fit")
    return paths


def _energy_job(job):
    kind, L, D, B, e, seed = job
    m = ModelSpec(kind, B=B)
    stages = [Stage(D=D, tau=t, max_steps=e["max_steps"], energy_tol=e["energy_tol"], method=e["method"]) for t in e["taus"]]
    base = P.neel_states(L) if kind == "heisenberg" else S.tilted_state(L)
    psi0 = P.init_separable_with_noise(L, 2, D, base, 1e-2, seed)
    t0 = time.perf_counter()
    _, reports = run_schedule(psi0, m, Schedule(stages, seed=seed))
    last = reports[-1]
    return dict(
        model=kind,
        L=L,
        D=D,
        B=B,
        energy=last.energy,
        error=last.error,
        steps=sum(r.steps for r in reports),
        converged=all(r.converged for r in reports),
        wall_time_s=time.perf_counter() - t0,
    )


def cmd_energy_table(cfg: RunConfig, resume=None) -> list[Path]:
    e = cfg.section("energy_table")
    if e["cells"] is None:
        raise ConfigError("[energy_table] cells is required")
    jobs = [(e["kind"], L, D, B, e, cfg.seed) for L, D, B in e["cells"]]
    rows = _pool_map(_energy_job, jobs, cfg.section("run")["threads"])
    cols = ["model", "L", "D", "B", "energy", "error", "steps", "converged", "wall_time_s"]
    paths = [write_csv(_out(cfg) / "energy_table.csv", rows, cols, cfg.hash)]
    if not all(r["converged"] for r in rows):
        raise Flagged("energy table cell(s) did not converge")
    return paths


def cmd_scaling_probe(cfg: RunConfig, resume=None) -> list[Path]:
    sp = cfg.section("scaling_probe")
    recs, kb, kp = S.scaling_probe(tuple(sp["Ds"]), sp["L"], sp["repeats"], sp["row"], seed=cfg.seed)
    out, h = _out(cfg), cfg.hash
    cols = ["D", "D_prime", "L", "boundary_step_s", "pair_environment_s", "half_sweeps"]
    fit = [
        dict(kernel="boundary_step", exponent=kb, band_low=sp["band_low"], band_high=sp["band_high"]),
        dict(kernel="pair_environment", exponent=kp, band_low="", band_high=""),
    ]
    paths = [
        write_csv(out / "scaling.csv", recs, cols, h),
        write_csv(out / "scaling_fit.csv", fit, ["kernel", "exponent", "band_low", "band_high"], h),
    ]
    print(f"boundary_step exponent {kb:.2f} (band [{sp['band_low']}, {sp['band_high']}]); pair_environment {kp:.2f}")
    if not sp["band_low"] <= kb <= sp["band_high"]:
        raise Flagged(f"boundary_step exponent {kb:.2f} outside the declared band")
    return paths


def cmd_validate_config(cfg: RunConfig, resume=None) -> list[Path]:
    print(f"{cfg.source}: ok  hash={cfg.hash}")
    for name in sorted(cfg.sections):
        print(f"  [{name}]")
    for i, s in enumerate(cfg.stages):
        print(f"  [stage.{i}] D={s['D']} tau={s['tau']} method={s['method']} max_steps={s['max_steps']}")
    return []


def checkpoint_info(path) -> dict:
    psi = _checkpoint(path, {})
    return dict(
        path=str(path),
        rows=psi.rows,
        cols=psi.cols,
        d=psi.d,
        D=psi.D,
        parameters=int(sum(psi[r, c].size for r, c in psi.sites())),
        bytes=Path(path).stat().st_size,
        metadata=P.read_metadata(path),
    )


_COMMANDS = {
    "groundstate": cmd_groundstate,
    "cluster-study": cmd_cluster_study,
    "gauge-study": cmd_gauge_study,
    "purification-study": cmd_purification_study,
    "energy-table": cmd_energy_table,
    "scaling-probe": cmd_scaling_probe,
    "validate-config": cmd_validate_config,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpeps", description="Finite PEPS ground states and replication studies.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        if name == "checkpoint-info":
            sp.add_argument("checkpoint", nargs="?")
            sp.add_argument("--resume", metavar="CHECKPOINT")
            continue
        sp.add_argument("--config", metavar="PATH", required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--threads", type=int, metavar="N")
        sp.add_argument("--resume", metavar="CHECKPOINT")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "checkpoint-info":
            path = args.checkpoint or args.resume
            if not path:
                raise ConfigError("checkpoint-info needs a checkpoint path")
            for k, v in checkpoint_info(path).items():
                print(f"{k}: {v}")
            return EXIT_OK
        cfg = load_config(args.config).with_overrides(args.seed, args.out, args.threads)
        paths = _COMMANDS[args.command](cfg, args.resume)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Flagged as exc:
        print(f"flagged: {exc}", file=sys.stderr)
        return EXIT_FLAGGED
    except (ArithmeticError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
