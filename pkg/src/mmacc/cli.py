"""Command line front end: ``mmacc {simulate,converge,stability,reference,diagnose}``.

Exit status is 0 on success, 1 for configuration errors and 2 for any
other failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .acceleration import StepRecord, Trajectory, run
from .config import Config, load_config, parse_config
from .diagnostics import CumulantRecord, default_probes, equilibrium_signature
from .errors import ConfigError, MatchingFailure
from .experiments import SweepConfig, convergence_sweep, stability_scan
from .microsolver import Ensemble
from .reference import exact_mean_grid

MANIFEST = "run.manifest"
REPORT_HEADER = ["t", "mean_norm", "cov_deviation", "cov_tolerance",
                 "third_ratio", "fourth_ratio", "within"]


def version_string() -> str:
    """Package version with the git revision of the source tree, when known."""
    here = Path(__file__).resolve().parent
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        tag = rev.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        tag = ""
    return f"{__version__}+g{tag}" if tag else f"{__version__}+unknown"


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmacc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "converge", "stability", "reference", "diagnose"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=name != "diagnose")
        s.add_argument("--out", required=True)
        s.add_argument("--threads", type=int, default=None)
        s.add_argument("--mode", choices=("gaussian", "ensemble"))
        s.add_argument("--seed", type=str)
        if name == "simulate":
            s.add_argument("--stream", action="store_true",
                           help="flush each trajectory row as it is computed")
        if name == "diagnose":
            s.add_argument("--input", help="directory holding trajectory.csv and run.manifest")
    return p


def _threads(arg) -> int:
    if arg is None:
        arg = int(os.environ.get("MMACC_THREADS", "0") or 0)
    return arg if arg > 0 else (os.cpu_count() or 1)


def _write_manifest(out: Path, cfg: Config, command: str, extra: dict) -> None:
    lines = [f"manifest.command = {command}",
             f"manifest.version = {version_string()}",
             f"manifest.backend = {kernels.BACKEND}",
             f"manifest.seed = {cfg.get('run.seed')}"]
    lines += [f"manifest.{k} = {v}" for k, v in extra.items()]
    lines += cfg.echo()
    (out / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _initial(cfg: Config, model, mode: str):
    law = cfg.get("initial.law")
    if law[0] == "bimodal":
        if mode != "ensemble":
            raise ConfigError("a bimodal initial law needs run.mode = ensemble", key="initial.law")
        return Ensemble.sample_bimodal(cfg.get("run.n_particles"), model.dim, law[1], law[2],
                                       cfg.get("run.seed"))
    g = cfg.initial_law(model.dim)
    if mode == "gaussian":
        return g
    return Ensemble.sample_gaussian(g, cfg.get("run.n_particles"), cfg.get("run.seed"))


def _sweep(cfg: Config, mode: str) -> SweepConfig:
    model = cfg.model()
    kwargs = dict(
        epsilon=cfg.epsilon, model=model, mode=mode,
        n_particles=cfg.get("run.n_particles"), inner_steps=cfg.get("run.inner_steps"),
        seed=cfg.get("run.seed"), repetitions=cfg.get("sweep.repetitions"),
        macro_dts=cfg.get("sweep.macro_dts", ()), micro_dt=cfg.get("run.micro_dt"),
        end_time=cfg.require("run.end_time"), window=cfg.get("sweep.window"),
        metric=cfg.get("sweep.metric"), initial=cfg.initial_law(model.dim),
        resample=cfg.get("run.resample"), macro_dt_max=cfg.get("sweep.macro_dt_max"),
        macro_points=cfg.get("sweep.macro_points"), tol=cfg.get("run.tol"),
        max_iter=cfg.get("run.max_iter"))
    if cfg.get("sweep.micro_dts") is not None:
        kwargs["micro_dts"] = cfg.get("sweep.micro_dts")
    try:
        return SweepConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc), key="sweep") from None


def cmd_simulate(cfg: Config, out: Path, args) -> None:
    model, sched = cfg.model(), cfg.schedule()
    mode = cfg.get("run.mode")
    init = _initial(cfg, model, mode)
    probes = default_probes(model.dim, cfg.get("run.seed"))[model.dim:]
    path = out / "trajectory.csv"
    fh = writer = None
    if args.stream:
        fh = open(path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")

    def flush(traj: Trajectory, rec: StepRecord) -> None:
        if len(traj.records) == 1:
            writer.writerow(traj.csv_header())
        writer.writerow(traj.csv_row(rec))
        fh.flush()

    try:
        traj = run(init, model, sched, resample=cfg.get("run.resample"),
                   tol=cfg.get("run.tol"), max_iter=cfg.get("run.max_iter"),
                   probes=probes, batches=cfg.get("run.batches"),
                   on_step=flush if args.stream else None)
    finally:
        if fh is not None:
            fh.close()
    if not args.stream:
        traj.write_csv(path)
    _write_manifest(out, cfg, "simulate", {
        "mode": mode, "resample": cfg.get("run.resample"), "epsilon": cfg.epsilon,
        "verdict": traj.verdict, "failure_time": traj.failure_time})


def cmd_converge(cfg: Config, out: Path, args) -> None:
    sweep = _sweep(cfg, cfg.get("run.mode"))
    res = convergence_sweep(sweep, threads=_threads(args.threads))
    res.write_csv(out / "convergence.csv")
    _write_manifest(out, cfg, "converge", {
        "mode": sweep.mode, "epsilon": sweep.epsilon, "micro_dt": res.micro_dt,
        "resample": sweep.resample, "euler_vs_exact": repr(res.euler_vs_exact)})


def cmd_stability(cfg: Config, out: Path, args) -> None:
    mode = cfg.values.get("run.mode", "ensemble")
    sweep = _sweep(cfg, mode)
    plane = stability_scan(sweep, threads=_threads(args.threads), mode=mode)
    plane.write_csv(out / "stability.csv")
    counts = plane.verdict_counts()
    _write_manifest(out, cfg, "stability", {
        "mode": mode, "epsilon": sweep.epsilon, "resample": sweep.resample,
        "n_particles": sweep.n_particles,
        **{f"count_{k}": v for k, v in counts.items()}})


def cmd_reference(cfg: Config, out: Path, args) -> None:
    model = cfg.model()
    dt = cfg.get("reference.dt") or cfg.require("run.micro_dt")
    end = cfg.require("run.end_time")
    n = max(1, int(np.ceil(end / dt - 1e-9)))
    mu0 = cfg.initial_law(model.dim).mean
    means = exact_mean_grid(model, mu0, dt, n)
    s = model.slow_dim
    header = (["t"] + [f"mu_s{i}" for i in range(s)]
              + [f"mu_f{i}" for i in range(model.dim - s)])
    with open(out / "reference.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(n + 1):
            w.writerow([repr(k * dt)] + [repr(float(v)) for v in means[k]])
    _write_manifest(out, cfg, "reference", {"epsilon": cfg.epsilon, "dt": dt})


def read_trajectory_csv(path, dim: int, slow_dim: int) -> Trajectory:
    """Rebuild an ensemble trajectory (axis cumulants only) from its CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "m3_0" not in rows[0]:
        raise ConfigError("diagnose needs an ensemble-mode trajectory.csv")
    traj = Trajectory("ensemble", dim, slow_dim)
    axes = np.eye(dim)
    for row in rows:
        f = lambda k: float(row[k])  # noqa: E731
        mean = np.array([f(f"mu_s{i}") for i in range(slow_dim)]
                        + [f(f"mu_f{i}") for i in range(dim - slow_dim)])
        cov = np.empty((dim, dim))
        se_cov = np.empty((dim, dim))
        for i in range(dim):
            cov[i, i] = f(f"m2_{i}")
            for j in range(i, dim):
                se_cov[i, j] = se_cov[j, i] = f(f"se_cov_{i}{j}")
                if j > i:
                    cov[i, j] = cov[j, i] = f(f"cov_{i}{j}")
        third = np.array([f(f"m3_{i}") for i in range(dim)])
        fourth = np.array([f(f"m4_{i}") - 3.0 * f(f"m2_{i}") ** 2 for i in range(dim)])
        cum = CumulantRecord(mean, cov, axes, third, fourth)
        err = CumulantRecord(np.array([f(f"se_mu_{i}") for i in range(dim)]), se_cov, axes,
                             np.array([f(f"se_k3_{i}") for i in range(dim)]),
                             np.array([f(f"se_k4_{i}") for i in range(dim)]))
        failed = row["failed"] == "1"
        traj.records.append(StepRecord(f("t"), int(row["n"]), mean, cov,
                                       int(row["newton_iters"]), f("newton_residual"),
                                       failed, cum, err))
        if failed:
            traj.failure = MatchingFailure("recorded failure", int(row["newton_iters"]),
                                           f("newton_residual"))
    return traj


def cmd_diagnose(cfg: Config | None, out: Path, args) -> None:
    src = args.input or (cfg.get("diagnose.input") if cfg else None)
    if src is None:
        raise ConfigError("diagnose needs --input or diagnose.input", key="diagnose.input")
    src = Path(src)
    run_cfg = load_config(src / MANIFEST)
    model = run_cfg.model()
    settings = cfg or run_cfg
    traj = read_trajectory_csv(src / "trajectory.csv", model.dim, model.slow_dim)
    rep = equilibrium_signature(traj, model, run_cfg.require("run.micro_dt"),
                                mean_tol=settings.get("diagnose.mean_tol"),
                                sigmas=settings.get("diagnose.sigmas"),
                                window=settings.get("diagnose.window"))
    with open(out / "convergence_report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for row in rep.rows():
            w.writerow([repr(float(v)) for v in row[:-1]] + [str(int(row[-1]))])
    _write_manifest(out, settings, "diagnose", {
        "input": src, "converged": rep.converged, "converged_step": rep.converged_step})


COMMANDS = {"simulate": cmd_simulate, "converge": cmd_converge, "stability": cmd_stability,
            "reference": cmd_reference, "diagnose": cmd_diagnose}


def cli_main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else None
        if cfg is not None:
            if args.mode:
                cfg.set("run.mode", args.mode)
            if args.seed is not None:
                cfg.set("run.seed", args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"mmacc: config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"mmacc: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(cli_main())


__all__ = ["cli_main", "main", "parse_config", "read_trajectory_csv", "version_string"]
