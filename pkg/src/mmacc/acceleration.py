"""The micro-macro acceleration loop.

One macro step advances the current law by ``macro_dt`` in four stages:
a burst of ``K`` Euler-Maruyama steps, restriction to the slow mean,
linear extrapolation of the slow mean, and matching of the burst's final
law with the extrapolated value. Gaussian laws are propagated exactly
through their moments; ensembles through particles and exponential tilts.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .diagnostics import CumulantRecord, batch_standard_errors, cumulants_from_ensemble
from .errors import BlowUpError, DegeneratePriorError, MatchingFailure
from .matching import MacroState, TiltResult, match_ensemble, match_gaussian
from .microsolver import Ensemble, em_burst
from .model import GaussianLaw, LinearSdeModel, StepSchedule

Law = Union[Ensemble, GaussianLaw]


@dataclass(frozen=True, eq=False)
class MmState:
    law: Law
    time: float
    step_index: int
    tilt: Optional[TiltResult] = None
    burst_slow_means: Optional[np.ndarray] = None

    @property
    def mode(self) -> str:
        return "ensemble" if isinstance(self.law, Ensemble) else "gaussian"


def extrapolate_slow_mean(mu_n, mu_nK, micro_span: float, macro_dt: float) -> np.ndarray:
    """Project the slow mean forward along the burst's secant."""
    if not micro_span > 0:
        raise ValueError("micro_span must be positive")
    mu_n = np.asarray(mu_n, dtype=float)
    mu_nK = np.asarray(mu_nK, dtype=float)
    ratio = macro_dt / micro_span
    if ratio == 1.0:
        return mu_nK.copy()
    return mu_n + ratio * (mu_nK - mu_n)


def mm_step(state: MmState, model: LinearSdeModel, schedule: StepSchedule, *,
            t0: float = 0.0, resample: bool = True, tol: float = 1e-11,
            max_iter: int = 50) -> MmState:
    """Advance ``state`` by one macro step.

    Micro steps inside the burst see the clock ``t_n + k*micro_dt``; the
    returned state sits at ``t0 + (n+1)*macro_dt``. Failures are re-raised
    annotated with the macro step index and time they started from.
    """
    n, t_n = state.step_index, state.time
    dt, k = schedule.micro_dt, schedule.inner_steps
    try:
        prior, means = em_burst(state.law, model, dt, k, t_n)
    except BlowUpError as exc:
        raise exc.annotate(n, t_n)
    target = MacroState(
        extrapolate_slow_mean(means[0], means[k], schedule.micro_span, schedule.macro_dt),
        t_n + schedule.macro_dt)
    tilt = None
    if isinstance(prior, Ensemble):
        try:
            law, tilt = match_ensemble(target, prior, model.slow_dim, resample, tol, max_iter)
        except MatchingFailure as exc:
            raise exc.annotate(n, t_n)
    else:
        law = match_gaussian(target, prior, model.slow_dim)
    return MmState(law, t0 + (n + 1) * schedule.macro_dt, n + 1, tilt, means)


def gaussian_mean_propagation_matrix(prior_after_burst: GaussianLaw,
                                     model: LinearSdeModel, dt: float,
                                     macro_dt: float) -> np.ndarray:
    """Linear map taking ``mu_n`` to ``mu_{n+1}`` for one inner step (K = 1).

    ``prior_after_burst`` supplies the slow block and the slow-fast cross
    covariance after the Euler-Maruyama step; matching shifts the fast mean
    by their regression coefficient.
    """
    s = model.slow_dim
    sigma_s, cross, _ = prior_after_burst.blocks(s)
    if np.linalg.cond(sigma_s) >= 1e12:
        raise DegeneratePriorError("slow covariance block after the burst is singular")
    gain = np.linalg.solve(sigma_s, cross).T
    d, f = model.dim, model.fast_dim
    out = np.empty((d, d))
    out[:s, :s] = np.eye(s) + macro_dt * model.a_slow
    out[:s, s:] = macro_dt * model.v_block
    out[s:, :s] = dt * model.w_block + (macro_dt - dt) * gain @ model.a_slow
    out[s:, s:] = np.eye(f) + dt * model.a_fast + (macro_dt - dt) * gain @ model.v_block
    return out


@dataclass(eq=False)
class StepRecord:
    t: float
    n: int
    mean: np.ndarray
    cov: np.ndarray
    newton_iters: int = 0
    newton_residual: float = 0.0
    failed: bool = False
    cumulants: Optional[CumulantRecord] = None
    errors: Optional[CumulantRecord] = None


@dataclass(eq=False)
class Trajectory:
    mode: str
    dim: int
    slow_dim: int
    records: list = field(default_factory=list)
    failure: Optional[Exception] = None

    @property
    def verdict(self) -> str:
        if self.failure is None:
            return "stable"
        if isinstance(self.failure, MatchingFailure):
            return "matching_failure"
        return "blow_up"

    @property
    def failure_time(self) -> Optional[float]:
        if self.failure is None:
            return None
        return self.records[-1].t

    @property
    def ok_records(self) -> list:
        return [r for r in self.records if not r.failed]

    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.ok_records])

    def means(self) -> np.ndarray:
        return np.array([r.mean for r in self.ok_records])

    def slow_means(self) -> np.ndarray:
        return self.means()[:, : self.slow_dim]

    def covs(self) -> np.ndarray:
        return np.array([r.cov for r in self.ok_records])

    def csv_header(self) -> list[str]:
        d, s = self.dim, self.slow_dim
        cols = ["t", "n"]
        cols += [f"mu_s{i}" for i in range(s)] + [f"mu_f{i}" for i in range(d - s)]
        if self.mode == "gaussian":
            cols += [f"cov_{i}{j}" for i in range(d) for j in range(i, d)]
        else:
            for i in range(d):
                cols += [f"m2_{i}", f"m3_{i}", f"m4_{i}"]
            cols += [f"cov_{i}{j}" for i in range(d) for j in range(i + 1, d)]
            cols += [f"se_mu_{i}" for i in range(d)]
            cols += [f"se_cov_{i}{j}" for i in range(d) for j in range(i, d)]
            cols += [f"se_k3_{i}" for i in range(d)] + [f"se_k4_{i}" for i in range(d)]
        return cols + ["newton_iters", "newton_residual", "failed"]

    def csv_row(self, r: StepRecord) -> list:
        d = self.dim
        row: list = [_fmt(r.t), str(r.n)] + [_fmt(v) for v in r.mean]
        if self.mode == "gaussian":
            row += [_fmt(r.cov[i, j]) for i in range(d) for j in range(i, d)]
        else:
            cum, err = r.cumulants, r.errors
            for i in range(d):
                m2 = r.cov[i, i]
                m3 = cum.third[i] if cum is not None else math.nan
                k4 = cum.fourth[i] if cum is not None else math.nan
                row += [_fmt(m2), _fmt(m3), _fmt(k4 + 3.0 * m2 * m2)]
            row += [_fmt(r.cov[i, j]) for i in range(d) for j in range(i + 1, d)]
            nan = math.nan
            row += [_fmt(err.mean[i] if err else nan) for i in range(d)]
            row += [_fmt(err.covariance[i, j] if err else nan)
                    for i in range(d) for j in range(i, d)]
            row += [_fmt(err.third[i] if err else nan) for i in range(d)]
            row += [_fmt(err.fourth[i] if err else nan) for i in range(d)]
        return row + [str(r.newton_iters), _fmt(r.newton_residual), str(int(r.failed))]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.csv_header())
            for r in self.records:
                w.writerow(self.csv_row(r))


def _fmt(x: float) -> str:
    return repr(float(x))


def _record(state: MmState, probes, batches: int, with_cumulants: bool) -> StepRecord:
    law = state.law
    tilt = state.tilt
    iters = tilt.iterations if tilt else 0
    resid = tilt.residual_norm if tilt else 0.0
    if isinstance(law, GaussianLaw):
        return StepRecord(state.time, state.step_index, law.mean.copy(), law.cov.copy(),
                          iters, resid)
    cum = err = None
    if with_cumulants:
        cum = cumulants_from_ensemble(law, probes)
        err = batch_standard_errors(law, probes, batches)
        mean, cov = cum.mean, cum.covariance
    else:
        mean, cov = law.mean(), law.cov()
    return StepRecord(state.time, state.step_index, mean, cov, iters, resid,
                      cumulants=cum, errors=err)


def run(initial: Law, model: LinearSdeModel, schedule: StepSchedule, *,
        t0: float = 0.0, resample: bool = True, tol: float = 1e-11,
        max_iter: int = 50, probes=None, batches: int = 10,
        record_cumulants: bool = True,
        on_step: Optional[Callable[[Trajectory, StepRecord], None]] = None) -> Trajectory:
    """Repeat macro steps from ``t0`` until the clock reaches ``schedule.end_time``.

    The first record is the initial law. Ensemble runs record weighted
    moments and, when ``record_cumulants`` is set, directional cumulants
    along the coordinate axes followed by any extra ``probes``, with batch
    standard errors.
    A matching failure or blow-up ends the run; the trajectory keeps the
    exception and a final row flagged ``failed``.
    """
    mode = "ensemble" if isinstance(initial, Ensemble) else "gaussian"
    probes = np.eye(model.dim) if probes is None else np.vstack([np.eye(model.dim), probes])
    traj = Trajectory(mode, model.dim, model.slow_dim)

    def push(rec: StepRecord) -> None:
        traj.records.append(rec)
        if on_step is not None:
            on_step(traj, rec)

    state = MmState(initial, t0, 0)
    push(_record(state, probes, batches, record_cumulants))
    for _ in range(schedule.n_macro_steps):
        try:
            state = mm_step(state, model, schedule, t0=t0, resample=resample,
                            tol=tol, max_iter=max_iter)
        except (MatchingFailure, BlowUpError) as exc:
            traj.failure = exc
            nan = np.full(model.dim, np.nan)
            iters = getattr(exc, "iterations", 0)
            resid = getattr(exc, "residual_norm", math.nan)
            push(StepRecord(t0 + (state.step_index + 1) * schedule.macro_dt,
                            state.step_index + 1, nan, np.full((model.dim, model.dim), np.nan),
                            iters, resid, failed=True))
            break
        push(_record(state, probes, batches, record_cumulants))
    return traj
