"""Convergence sweeps over the macro step and stability scans of the step-size plane."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .acceleration import run
from .microsolver import Ensemble, em_burst
from .model import GaussianLaw, LinearSdeModel, StepSchedule, driven_test_model
from .reference import exact_mean_grid

VERDICTS = ("stable", "matching_failure", "blow_up")
CONVERGENCE_HEADER = ["dt_macro", "err_exact", "err_euler", "std_exact", "std_euler"]
STABILITY_HEADER = ["micro_dt", "macro_dt", "verdict", "failure_time"]


def _grid(values, name: str) -> tuple:
    out = tuple(float(v) for v in values)
    if any(not (v > 0 and math.isfinite(v)) for v in out):
        raise ValueError(f"{name} must be strictly positive")
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ValueError(f"{name} must be sorted ascending without repeats")
    return out


@dataclass(frozen=True, eq=False)
class SweepConfig:
    """Parameters shared by the convergence sweep and the stability scan.

    ``model`` defaults to the driven test system at ``epsilon``. For the
    convergence sweep ``micro_dt`` is fixed and ``macro_dts`` is swept; for
    the stability scan every ``micro_dts`` entry is paired with
    ``macro_dts`` if given, else with ``macro_points`` log-spaced values
    from ``micro_dt`` to ``macro_dt_max``.
    """

    epsilon: Optional[float] = 1.0
    model: Optional[LinearSdeModel] = None
    mode: str = "gaussian"
    n_particles: int = 10_000
    inner_steps: int = 1
    seed: int = 0
    repetitions: int = 10
    macro_dts: Sequence[float] = ()
    micro_dt: Optional[float] = None
    micro_dts: Sequence[float] = field(
        default_factory=lambda: tuple(np.geomspace(0.005, 0.2, 12)))
    end_time: float = 20.0
    metric: str = "l2"
    window: float = 1.0
    initial: Optional[GaussianLaw] = None
    resample: bool = True
    macro_dt_max: float = 1.0
    macro_points: int = 20
    tol: float = 1e-11
    max_iter: int = 50

    def __post_init__(self):
        if self.model is None:
            if self.epsilon is None:
                raise ValueError("either epsilon or model is required")
            object.__setattr__(self, "model", driven_test_model(self.epsilon))
        if self.mode not in ("gaussian", "ensemble"):
            raise ValueError(f"mode must be gaussian or ensemble, got {self.mode!r}")
        if self.metric != "l2":
            raise ValueError(f"unknown error metric {self.metric!r}")
        object.__setattr__(self, "macro_dts", _grid(self.macro_dts, "macro_dts"))
        object.__setattr__(self, "micro_dts", _grid(self.micro_dts, "micro_dts"))
        if self.micro_dt is not None and not self.micro_dt > 0:
            raise ValueError("micro_dt must be positive")
        for name in ("end_time", "window", "macro_dt_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_particles < 2 or self.inner_steps < 1 or self.repetitions < 1:
            raise ValueError("n_particles >= 2, inner_steps >= 1, repetitions >= 1 required")
        if self.macro_points < 1:
            raise ValueError("macro_points must be >= 1")
        if self.initial is None:
            d = self.model.dim
            object.__setattr__(self, "initial", GaussianLaw(np.zeros(d), np.eye(d)))

    def macro_grid(self, micro_dt: float) -> tuple:
        """Macro steps scanned against ``micro_dt`` in the stability plane."""
        lo = self.inner_steps * micro_dt
        if self.macro_dts:
            return tuple(v for v in self.macro_dts if v >= lo * (1 - 1e-12))
        if self.macro_points == 1:
            return (lo,)
        return tuple(np.geomspace(lo, self.macro_dt_max, self.macro_points))


@dataclass(frozen=True)
class StabilityCell:
    micro_dt: float
    macro_dt: float
    verdict: str
    failure_time: Optional[float] = None

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if (self.verdict == "stable") != (self.failure_time is None):
            raise ValueError("failure_time is set exactly for unstable cells")

    @property
    def stable(self) -> bool:
        return self.verdict == "stable"


def l2_curve_error(sim_t, sim_v, ref_t, ref_v, window) -> float:
    """L2 distance between two sampled curves over ``window = (start, stop)``.

    Both curves are linearly interpolated onto the finer of the two time
    grids (restricted to the window, plus its endpoints) and the squared
    difference is integrated with the trapezoid rule. Vector-valued series
    use the Euclidean norm of the difference.
    """
    start, stop = (float(v) for v in window)
    if not stop > start:
        raise ValueError("empty error window")
    sim_t, ref_t = np.asarray(sim_t, dtype=float), np.asarray(ref_t, dtype=float)
    sim_v = np.asarray(sim_v, dtype=float).reshape(sim_t.size, -1)
    ref_v = np.asarray(ref_v, dtype=float).reshape(ref_t.size, -1)
    if sim_v.shape[1] != ref_v.shape[1]:
        raise ValueError("series have different widths")
    for t in (sim_t, ref_t):
        if t.size < 2 or t[0] > start + 1e-12 or t[-1] < stop - 1e-12:
            raise ValueError("a series does not cover the error window")
    fine = sim_t if sim_t.size > ref_t.size else ref_t
    inside = fine[(fine > start) & (fine < stop)]
    grid = np.concatenate([[start], inside, [stop]])
    sq = np.zeros(grid.size)
    for j in range(sim_v.shape[1]):
        diff = np.interp(grid, sim_t, sim_v[:, j]) - np.interp(grid, ref_t, ref_v[:, j])
        sq += diff * diff
    return math.sqrt(float(np.trapezoid(sq, grid)))


def _repetition_seed(seed: int, rep: int) -> int:
    return kernels.mix64(int(seed) ^ kernels.mix64(rep + 1))


def _initial_state(cfg: SweepConfig, seed: int):
    if cfg.mode == "gaussian":
        return cfg.initial
    return Ensemble.sample_gaussian(cfg.initial, cfg.n_particles, seed)


def _euler_slow_means(cfg: SweepConfig, micro_dt: float, seed: int):
    n = max(1, math.ceil(cfg.end_time / micro_dt - 1e-9))
    try:
        _, means = em_burst(_initial_state(cfg, seed), cfg.model, micro_dt, n, 0.0)
    except ArithmeticError:
        return None
    return np.arange(n + 1) * micro_dt, means


def _threads(threads: Optional[int]) -> int:
    if threads is None:
        threads = int(os.environ.get("MMACC_THREADS", "0") or 0)
    return threads if threads > 0 else (os.cpu_count() or 1)


def _pmap(fn, items, threads):
    items = list(items)
    n = min(_threads(threads), max(1, len(items)))
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True, eq=False)
class ConvergenceResult:
    """Per-``macro_dt`` errors, averaged over repetitions.

    ``euler_vs_exact`` is the error of plain Euler-Maruyama at ``micro_dt``
    against the exact mean, averaged the same way.
    """

    macro_dts: np.ndarray
    err_exact: np.ndarray
    err_euler: np.ndarray
    std_exact: np.ndarray
    std_euler: np.ndarray
    euler_vs_exact: float
    micro_dt: float
    epsilon: Optional[float]
    mode: str

    def rows(self):
        for i in range(self.macro_dts.size):
            yield (self.macro_dts[i], self.err_exact[i], self.err_euler[i],
                   self.std_exact[i], self.std_euler[i])

    def write_csv(self, path) -> None:
        _write_rows(path, CONVERGENCE_HEADER,
                    [[repr(float(v)) for v in row] for row in self.rows()])


def _mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0 or np.any(np.isnan(v)):
        return math.nan, math.nan
    return float(np.mean(v)), float(np.std(v, ddof=1)) if v.size > 1 else 0.0


def convergence_sweep(cfg: SweepConfig, threads: Optional[int] = None) -> ConvergenceResult:
    """Slow-mean error of micro-macro runs against the exact mean and plain Euler.

    Errors are measured over the last ``cfg.window`` time units. Gaussian
    mode is deterministic, so every repetition coincides. In ensemble mode
    repetition ``r`` uses the same seed for the micro-macro and the plain
    Euler run. Failed runs yield NaN.
    """
    if not cfg.macro_dts:
        raise ValueError("convergence sweep needs macro_dts")
    if cfg.micro_dt is None:
        if cfg.epsilon is None:
            raise ValueError("micro_dt is required when no epsilon is given")
        micro_dt = cfg.epsilon / 20.0
    else:
        micro_dt = cfg.micro_dt
    model, s = cfg.model, cfg.model.slow_dim
    window = (cfg.end_time - cfg.window, cfg.end_time)
    n_ref = max(1, math.ceil(cfg.end_time / micro_dt - 1e-9))
    ref_t = np.arange(n_ref + 1) * micro_dt
    ref_v = exact_mean_grid(model, cfg.initial.mean, micro_dt, n_ref)[:, :s]
    reps = 1 if cfg.mode == "gaussian" else cfg.repetitions
    seeds = [_repetition_seed(cfg.seed, r) for r in range(reps)]

    euler = _pmap(lambda sd: _euler_slow_means(cfg, micro_dt, sd), seeds, threads)

    def euler_exact(e):
        return math.nan if e is None else l2_curve_error(e[0], e[1], ref_t, ref_v, window)

    def one(job):
        dt_macro, r = job
        sched = StepSchedule(micro_dt, cfg.inner_steps, dt_macro, cfg.end_time)
        traj = run(_initial_state(cfg, seeds[r]), model, sched, resample=cfg.resample,
                   tol=cfg.tol, max_iter=cfg.max_iter, record_cumulants=False)
        if traj.failure is not None or euler[r] is None:
            return math.nan, math.nan
        t, v = traj.times(), traj.slow_means()
        return (l2_curve_error(t, v, ref_t, ref_v, window),
                l2_curve_error(t, v, euler[r][0], euler[r][1], window))

    jobs = [(dt, r) for dt in cfg.macro_dts for r in range(reps)]
    results = _pmap(one, jobs, threads)
    out = np.empty((len(cfg.macro_dts), 4))
    for i in range(len(cfg.macro_dts)):
        chunk = results[i * reps:(i + 1) * reps]
        out[i, 0], out[i, 2] = _mean_std([c[0] for c in chunk])
        out[i, 1], out[i, 3] = _mean_std([c[1] for c in chunk])
    ee, _ = _mean_std([euler_exact(e) for e in euler])
    return ConvergenceResult(np.array(cfg.macro_dts), out[:, 0], out[:, 1], out[:, 2],
                             out[:, 3], ee, micro_dt, cfg.epsilon, cfg.mode)


def _cell_seed(seed: int, index: int) -> int:
    return kernels.mix64(kernels.mix64(int(seed)) ^ (index + 1))


@dataclass(frozen=True, eq=False)
class StabilityPlane:
    cells: list
    micro_dts: tuple
    mode: str
    resample: bool
    n_particles: int

    def column(self, micro_dt: float) -> list:
        return [c for c in self.cells if c.micro_dt == micro_dt]

    def max_stable_macro_dt(self) -> dict:
        """Largest stable macro step per micro step (NaN when none is stable)."""
        out = {}
        for dt in self.micro_dts:
            stable = [c.macro_dt for c in self.column(dt) if c.stable]
            out[dt] = max(stable) if stable else math.nan
        return out

    def verdict_counts(self) -> dict:
        return {v: sum(c.verdict == v for c in self.cells) for v in VERDICTS}

    def write_csv(self, path) -> None:
        rows = [[repr(c.micro_dt), repr(c.macro_dt), c.verdict,
                 "" if c.failure_time is None else repr(c.failure_time)]
                for c in self.cells]
        _write_rows(path, STABILITY_HEADER, rows)


def stable_interval_defects(cells: Sequence[StabilityCell]) -> int:
    """Unstable cells lying strictly between stable ones in a single column.

    Cells must share one micro step and be ordered by macro step; a stable
    set that is an interval gives 0.
    """
    flags = [c.stable for c in cells]
    idx = [i for i, ok in enumerate(flags) if ok]
    if not idx:
        return 0
    return sum(not ok for ok in flags[idx[0]:idx[-1] + 1])


def stability_scan(cfg: SweepConfig, threads: Optional[int] = None,
                   mode: str = "ensemble") -> StabilityPlane:
    """Run micro-macro to ``cfg.end_time`` on every ``(micro_dt, macro_dt)`` cell.

    The first matching failure or blow-up decides an unstable verdict. Each
    cell draws its own initial ensemble from a seed derived from
    ``(cfg.seed, cell index)``, so cells are independent of scheduling.
    """
    pairs = [(dt, mdt) for dt in cfg.micro_dts for mdt in cfg.macro_grid(dt)]

    def one(job):
        index, (dt, mdt) = job
        sched = StepSchedule(dt, cfg.inner_steps, mdt, cfg.end_time)
        if mode == "gaussian":
            init = cfg.initial
        else:
            init = Ensemble.sample_gaussian(cfg.initial, cfg.n_particles,
                                            _cell_seed(cfg.seed, index))
        traj = run(init, cfg.model, sched, resample=cfg.resample, tol=cfg.tol,
                   max_iter=cfg.max_iter, record_cumulants=False)
        return StabilityCell(dt, mdt, traj.verdict, traj.failure_time)

    cells = _pmap(one, list(enumerate(pairs)), threads)
    return StabilityPlane(cells, cfg.micro_dts, mode, cfg.resample, cfg.n_particles)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
