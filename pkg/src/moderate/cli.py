"""Command-line front end: ``moderate {solve,simulate,rates,mfg,norms,selftest}``.

Exit codes: 0 success, 2 validation error, 3 numerical failure,
4 verdict inconsistent (or a failed acceptance criterion under ``selftest``).
Every run directory receives ``manifest.json`` listing the config hash, the
seed, the code version, timestamps, per-job status and the SHA-256 of each
output file.  All other outputs are deterministic functions of config and seed.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import config_hash, load_config, parse_mfg, parse_norm, parse_plan, parse_simulate, parse_solve
from .function_spaces import evaluate_norm
from .io import file_sha256, loglog_svg, read_field, write_archive, write_csv, write_json, write_trajectory
from .kernels import Mollifier, mollifier_scale
from .pde import NumericalError, SolverConfig, solve_fp_box, solve_fp_torus
from .setups import ConfigError

log = logging.getLogger("moderate")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_INCONSISTENT = 0, 2, 3, 4


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed_base: int
    version: str = __version__
    started: str = ""
    finished: str = ""
    jobs: list = field(default_factory=list)
    files: dict = field(default_factory=dict)

    def job(self, name: str, status: str, **info):
        self.jobs.append({"name": name, "status": status, **info})

    def add(self, out: Path, paths):
        for p in paths:
            self.files[str(Path(p).relative_to(out))] = file_sha256(p)

    def write(self, out: Path):
        self.finished = _now()
        write_json(out / "manifest.json", asdict(self))


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _prepare(args, command: str):
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out, RunManifest(command, config_hash(cfg), 0, started=_now())


# commands


def cmd_solve(args) -> int:
    cfg, out, man = _prepare(args, "solve")
    job = parse_solve(cfg)
    man.seed_base = job.seed
    try:
        if job.domain == "torus":
            sol = solve_fp_torus(job.p0, job.kernel, job.T, job.solver)
        else:
            sol = solve_fp_box(job.p0, None, job.b, job.T, job.solver)
    except NumericalError as exc:
        man.job("solve", "numerical-failure", message=str(exc))
        man.write(out)
        raise
    if job.rate_params is not None:
        from .rates import rho_branches

        sol.solver_meta["rate_exponent"] = rho_branches(job.rate_params)
    files = write_archive(out / "archive", sol)
    man.add(out, files)
    man.job("solve", "ok", snapshots=len(sol.fields))
    man.write(out)
    print(f"solve: {len(sol.fields)} snapshots written to {out / 'archive'}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .particles import (SdeConfig, martingale_diagnostic, mollified_density, sample_from_density,
                            simulate_torus)

    cfg, out, man = _prepare(args, "simulate")
    job = parse_simulate(cfg)
    seed = job.seed if args.seed is None else args.seed
    man.seed_base = seed
    M = job.p0.resolution
    ref = solve_fp_torus(job.p0, job.kernel, job.T, SolverConfig(dt=job.ref_dt, diffusivity=job.diffusivity))
    m = Mollifier(job.beta)
    Vn = mollifier_scale(m, job.N, job.p0.dim, M, job.p0.length)
    sde = SdeConfig(dt=job.dt, T=job.T, interpolation=job.interpolation, seed=seed, diffusivity=job.diffusivity)
    ens = sample_from_density(job.p0, job.N, seed=seed, interpolation=job.interpolation)
    tdir = out / "trajectory"
    tdir.mkdir(exist_ok=True)
    rows, files = [], []

    def record(e):
        i = len(rows)
        p = tdir / f"snapshot_{i:04d}.bin"
        write_trajectory(p, e)
        files.append(p)
        diff = mollified_density(e, Vn, job.interpolation) - ref.at(e.t)
        row = {"t": repr(float(e.t))}
        row.update({s.label(): repr(float(evaluate_norm(diff, s))) for s in job.norms})
        rows.append(row)

    traj = simulate_torus(ens, job.kernel, m, sde, M, checkpoints=job.checkpoints,
                          retain_noise=args.retain_noise, on_checkpoint=record)
    files.append(write_csv(out / "norms.csv", rows))
    if args.retain_noise:
        files.append(tdir / "noise.bin")
        write_trajectory(files[-1], traj.snapshots[0], np.stack(traj.increments))
        mp = martingale_diagnostic(traj, m, job.N, M, times=traj.times, diffusivity=job.diffusivity,
                                   kind=job.interpolation)
        files.append(write_csv(out / "martingale.csv",
                               [{"t": repr(float(t)), "L2": repr(float(v))} for t, v in zip(mp.times, mp.norms["L2"])]))
    man.add(out, files)
    man.job("simulate", "ok", N=job.N, seed=seed, checkpoints=len(rows))
    man.write(out)
    print(f"simulate: N={job.N} seed={seed}, {len(rows)} checkpoints; norms in {out / 'norms.csv'}")
    return EXIT_OK


def cmd_rates(args) -> int:
    from .rates import run_convergence_study

    cfg, out, man = _prepare(args, "rates")
    plan = parse_plan(cfg)
    man.seed_base = plan.seed_base

    def progress(N, r):
        log.info("job N=%d replica=%d done", N, r)

    rep = run_convergence_study(plan, progress=progress, workers=args.workers)
    files = [write_json(out / "report.json", rep.to_dict(include_runtime=False)),
             write_csv(out / "report.csv", rep.rows())]
    series = {lab: {"N": plan.N_list, "err": f.means, "slope": f.slope, "intercept": f.intercept}
              for lab, f in rep.fits.items()}
    files.append(loglog_svg(out / "plots.svg", series, rho=rep.rho, title=f"verdict: {rep.verdict}"))
    man.add(out, files)
    for i, N in enumerate(plan.N_list):
        for r in range(plan.replicas):
            man.job(f"N={N}/r={r}", "ok")
    man.job("fit", rep.verdict, runtime_seconds=round(rep.runtime["seconds"], 3))
    man.write(out)
    for lab, f in rep.fits.items():
        print(f"{lab}: slope {f.slope:+.3f} CI [{f.ci[0]:+.3f}, {f.ci[1]:+.3f}] -> {f.verdict}")
    print(f"rho = {rep.rho:.4g}, threshold {rep.threshold:.4g}, verdict: {rep.verdict}")
    for note in rep.notes:
        print(f"note: {note}")
    return EXIT_INCONSISTENT if rep.verdict == "inconsistent" else EXIT_OK


def cmd_mfg(args) -> int:
    from .mfg import nash_gap_probe, solve_mfg

    cfg, out, man = _prepare(args, "mfg")
    job = parse_mfg(cfg)
    man.seed_base = job.nash["seed"]
    sol = solve_mfg(job.problem, job.solver)
    files = [write_csv(out / "residuals.csv",
                       [{"iteration": r["iteration"], "residual": repr(float(r["residual"]))}
                        for r in sol.residual_log()])]
    summary = {"converged": sol.converged, "iterations": sol.iterations, "final_residual": sol.residuals[-1],
               "grad_bound_constant": sol.grad_bound_constant}
    if not sol.converged:
        files.append(write_json(out / "summary.json", summary))
        man.add(out, files)
        man.job("mfg", "not-converged", iterations=sol.iterations)
        man.write(out)
        print(f"mfg: no convergence after {sol.iterations} iterations "
              f"(last residual {sol.residuals[-1]:.3g}); residual history in {out / 'residuals.csv'}",
              file=sys.stderr)
        return EXIT_NUMERICAL
    files += write_archive(out / "archive", sol.u, "u")
    files += write_archive(out / "archive", sol.p, "p")
    if job.nash["n_perturb"]:
        rows = nash_gap_probe(job.problem, sol, job.nash["n_perturb"], job.nash["eps"], job.nash["n_paths"],
                              job.nash["seed"])
        files.append(write_csv(out / "nash_gap.csv", [{k: repr(v) if isinstance(v, float) else v
                                                       for k, v in r.items()} for r in rows]))
        summary["nash_ok"] = all(r["ok"] for r in rows)
    files.append(write_json(out / "summary.json", summary))
    man.add(out, files)
    man.job("mfg", "ok", iterations=sol.iterations)
    man.write(out)
    print(f"mfg: converged in {sol.iterations} iterations (residual {sol.residuals[-1]:.3g})")
    return EXIT_OK


def cmd_norms(args) -> int:
    from .function_spaces import block_profile

    f = read_field(args.field)
    spec = {"kind": args.kind}
    for key in ("s", "q", "r", "gamma"):
        if getattr(args, key) is not None:
            spec[key] = getattr(args, key)
    ns = parse_norm(spec, "norm")
    record = {"field_id": Path(args.field).name, "kind": ns.kind, "parameters": ns.as_dict(),
              "value": evaluate_norm(f, ns)}
    if args.profile:
        if ns.kind == "Holder":
            raise ConfigError("--profile", "block profiles need a smoothness and q (not defined for Holder)")
        rows = block_profile(f, ns.smoothness, ns.q)
        write_csv(args.profile, [{"j": j, "weighted_norm": repr(float(v))} for j, v in rows])
    print(json.dumps(record, sort_keys=True))
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .acceptance import CRITERIA, run_suite

    only = None
    if args.only:
        only = [c.strip().upper() for c in args.only.split(",")]
        unknown = set(only) - set(CRITERIA)
        if unknown:
            raise ConfigError("--only", f"unknown criteria {sorted(unknown)}; choose from {', '.join(CRITERIA)}")
    results = run_suite(only, echo=print)
    return EXIT_OK if all(r.passed for r in results) else EXIT_INCONSISTENT


# argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="moderate", description="Moderately interacting particles: solvers, "
                                 "simulations and convergence-rate experiments.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(name, help_, func):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="JSON config file")
        p.add_argument("-o", "--out", required=True, help="output directory")
        p.set_defaults(func=func)
        return p

    with_config("solve", "solve the limit Fokker-Planck equation", cmd_solve)
    p = with_config("simulate", "simulate one particle system and its error norms", cmd_simulate)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--retain-noise", action="store_true", help="keep Brownian increments and emit the "
                   "martingale diagnostic")
    p = with_config("rates", "run a convergence-rate experiment plan", cmd_rates)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                   help="worker processes (default: logical cores)")
    with_config("mfg", "solve a mean-field game and probe its Nash gap", cmd_mfg)
    p = sub.add_parser("norms", help="evaluate a norm of a field file")
    p.add_argument("field")
    p.add_argument("--kind", required=True, choices=["Lq", "Bessel", "Besov", "TriebelLizorkin", "Holder"])
    p.add_argument("--s", type=float, help="smoothness (Bessel order for kind=Bessel)")
    p.add_argument("--q", type=float)
    p.add_argument("--r", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--profile", help="also write per-block weighted norms (j, 2^js ||block||_q) to this CSV")
    p.set_defaults(func=cmd_norms)
    p = sub.add_parser("selftest", help="run the acceptance suite")
    p.add_argument("--only", help="comma separated criteria, e.g. AC-3,AC-7")
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if getattr(args, "workers", 1) is not None and getattr(args, "workers", 1) < 1:
        print("error: --workers: value must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
