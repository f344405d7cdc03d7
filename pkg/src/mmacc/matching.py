"""Relative-entropy matching of a prior law with a prescribed slow mean.

For a Gaussian prior the matched law has a closed form. For a weighted
particle prior the matched law is an exponential tilt of the weights,
``w_i -> w_i exp(lam . y_i - A(lam))`` on the slow coordinates ``y_i``,
where ``lam`` is found by Newton-Raphson.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DegeneratePriorError, DimensionError, MatchingFailure
from .microsolver import Ensemble
from .model import GaussianLaw

MAX_CONDITION = 1e12
DEGENERATE_EIG_RATIO = 1e-14
MAX_HALVINGS = 30
RESAMPLE_TAG = 1 << 63


@dataclass(frozen=True, eq=False)
class MacroState:
    slow_mean: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.slow_mean, dtype=float)).copy()
        if m.ndim != 1:
            raise DimensionError("slow_mean must be a vector")
        if not np.all(np.isfinite(m)):
            raise ValueError("slow_mean must be finite")
        m.setflags(write=False)
        object.__setattr__(self, "slow_mean", m)


@dataclass(frozen=True, eq=False)
class TiltResult:
    multipliers: np.ndarray
    log_partition: float
    iterations: int
    residual_norm: float


class LogPartition(NamedTuple):
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    degenerate: bool


def _check_target(target: MacroState, slow_dim: int) -> np.ndarray:
    if target.slow_mean.shape != (slow_dim,):
        raise DimensionError(
            f"target slow mean has length {target.slow_mean.shape[0]}, slow_dim is {slow_dim}")
    return target.slow_mean


def match_gaussian(target: MacroState, prior: GaussianLaw, slow_dim: int) -> GaussianLaw:
    """Closed-form matching for a Gaussian prior.

    The covariance is untouched; the fast mean moves by the regression of
    the fast block on the slow block, ``C^T Sigma_s^{-1} (target - mu_s)``.
    """
    mu_bar = _check_target(target, slow_dim)
    sigma_s, cross, _ = prior.blocks(slow_dim)
    if np.linalg.cond(sigma_s) >= MAX_CONDITION:
        raise DegeneratePriorError("slow covariance block of the prior is singular")
    shift = mu_bar - prior.mean[:slow_dim]
    mean = np.empty(prior.dim)
    mean[:slow_dim] = mu_bar
    mean[slow_dim:] = prior.mean[slow_dim:] + cross.T @ np.linalg.solve(sigma_s, shift)
    return GaussianLaw(mean, prior.cov)


def match_gaussian_full_mean(target_mean, prior: GaussianLaw) -> GaussianLaw:
    target_mean = np.asarray(target_mean, dtype=float)
    if target_mean.shape != prior.mean.shape:
        raise DimensionError(
            f"target mean shape {target_mean.shape} != prior mean shape {prior.mean.shape}")
    return GaussianLaw(target_mean, prior.cov)


def _slow_block(e: Ensemble, slow_dim: int) -> np.ndarray:
    if not 0 < slow_dim <= e.dim:
        raise DimensionError(f"slow_dim {slow_dim} outside 1..{e.dim}")
    return np.ascontiguousarray(e.positions[:, :slow_dim])


def _log_partition(y: np.ndarray, w: np.ndarray, lam: np.ndarray) -> LogPartition:
    value, grad, hess, _ = kernels.tilt_moments(y, w, lam)
    tr = float(np.trace(hess))
    degenerate = not np.all(np.isfinite(hess)) or tr <= 0.0
    if not degenerate:
        degenerate = float(np.min(np.linalg.eigvalsh(hess))) < DEGENERATE_EIG_RATIO * tr
    return LogPartition(value, grad, hess, degenerate)


def log_partition_mc(lam, e: Ensemble, slow_dim: int) -> LogPartition:
    """Empirical log-partition function of the slow coordinates at ``lam``.

    Returns the value, its gradient (tilted weighted slow mean), hessian
    (tilted weighted slow covariance) and a flag set when the hessian is
    numerically singular, i.e. the tilted mass sits on a single point.
    """
    lam = np.ascontiguousarray(np.atleast_1d(np.asarray(lam, dtype=float)))
    if lam.shape != (slow_dim,):
        raise DimensionError(f"lambda must have length {slow_dim}")
    return _log_partition(_slow_block(e, slow_dim), e.weights, lam)


def solve_multipliers(target: MacroState, e: Ensemble, slow_dim: int,
                      tol: float = 1e-11, max_iter: int = 50) -> TiltResult:
    """Damped Newton-Raphson for ``grad A(lam) = target``, starting at zero.

    Succeeds when the sup-norm residual drops to ``tol`` within
    ``max_iter`` updates. Each update halves the Newton step (at most 30
    times) until the residual decreases. Raises :class:`MatchingFailure`
    otherwise.
    """
    mu_bar = _check_target(target, slow_dim)
    y = _slow_block(e, slow_dim)
    w = e.weights
    lam = np.zeros(slow_dim)
    lp = _log_partition(y, w, lam)
    res = float(np.max(np.abs(lp.gradient - mu_bar)))
    it = 0
    while True:
        if not np.isfinite(res):
            raise MatchingFailure("non-finite iterate", it, res, lam)
        if res <= tol:
            return TiltResult(lam, lp.value, it, res)
        if it >= max_iter:
            raise MatchingFailure("no convergence", it, res, lam)
        if lp.degenerate:
            raise MatchingFailure("singular hessian", it, res, lam)
        try:
            step = np.linalg.solve(lp.hessian, lp.gradient - mu_bar)
        except np.linalg.LinAlgError:
            raise MatchingFailure("singular hessian", it, res, lam) from None
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = lam - scale * step
            lp_c = _log_partition(y, w, cand)
            res_c = float(np.max(np.abs(lp_c.gradient - mu_bar)))
            if res_c < res:
                break
            scale *= 0.5
        else:
            raise MatchingFailure("stagnation", it + 1, res, lam)
        lam, lp, res = cand, lp_c, res_c
        it += 1


def match_ensemble(target: MacroState, prior: Ensemble, slow_dim: int,
                   resample: bool = True, tol: float = 1e-11,
                   max_iter: int = 50) -> tuple[Ensemble, TiltResult]:
    """Tilt the prior weights so the weighted slow mean equals the target.

    With ``resample`` the tilted ensemble is replaced by ``N`` equally
    weighted particles chosen by systematic resampling.
    """
    tilt = solve_multipliers(target, prior, slow_dim, tol, max_iter)
    if not np.any(tilt.multipliers):
        matched = prior
    else:
        y = _slow_block(prior, slow_dim)
        w = kernels.tilted_weights(y, prior.weights, tilt.multipliers)
        matched = Ensemble(prior.positions, w, prior.seed, prior.stream)
    if resample:
        matched = systematic_resample(matched)
    return matched, tilt


def systematic_resample(e: Ensemble) -> Ensemble:
    """Systematic resampling to ``N`` equally weighted particles.

    The offset is drawn from the resampling stream tagged with the current
    counter, so Euler-Maruyama streams stay aligned with plain simulation.
    Equal weights are returned as they are.
    """
    w = e.weights
    if np.all(w == w[0]):
        return e
    u = float(kernels.uniforms(e.seed, e.stream | RESAMPLE_TAG, 1)[0, 0])
    idx = kernels.systematic_resample(w, u)
    return Ensemble.uniform(e.positions[idx], e.seed, e.stream)
