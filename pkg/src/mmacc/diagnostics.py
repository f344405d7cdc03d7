"""Empirical cumulant generating functions and cumulant tracking for ensembles.

The CGF of a weighted sample is ``K(theta) = log sum_i w_i exp(theta . x_i)
- log sum_i w_i``, evaluated with a max-shift so large arguments do not
overflow. It is exactly 0 at ``theta = 0``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .microsolver import Ensemble, invariant_variance

MIN_TILTED_ESS = 10.0


class UnreliableEstimateWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class CgfEstimate:
    directions: np.ndarray   # (k, d)
    radii: np.ndarray        # (r,)
    values: np.ndarray       # (k, r)
    ess: np.ndarray          # (k, r) effective sample size under the tilt

    @property
    def unreliable(self) -> np.ndarray:
        return self.ess < MIN_TILTED_ESS


@dataclass(frozen=True, eq=False)
class CumulantRecord:
    mean: np.ndarray
    covariance: np.ndarray
    directions: np.ndarray
    third: np.ndarray
    fourth: np.ndarray


def empirical_cgf(e: Ensemble, theta) -> float:
    s = np.ascontiguousarray(e.positions @ np.asarray(theta, dtype=float))
    return kernels.log_mean_exp(s, e.weights)[0]


def cgf_estimate(e: Ensemble, directions, radii) -> CgfEstimate:
    """Weighted empirical CGF at ``r * theta`` for every direction and radius.

    Entries whose tilted effective sample size falls under 10 particles are
    flagged in :attr:`CgfEstimate.unreliable` and trigger a warning.
    """
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    values = np.empty((dirs.shape[0], radii.size))
    ess = np.empty_like(values)
    proj = e.positions @ dirs.T
    for i in range(dirs.shape[0]):
        for j, r in enumerate(radii):
            values[i, j], ess[i, j] = kernels.log_mean_exp(
                np.ascontiguousarray(r * proj[:, i]), e.weights)
    out = CgfEstimate(dirs, radii, values, ess)
    if np.any(out.unreliable):
        warnings.warn("CGF estimate rests on fewer than 10 effective particles",
                      UnreliableEstimateWarning, stacklevel=2)
    return out


def _weighted_cumulants(x: np.ndarray, w: np.ndarray, dirs: np.ndarray,
                        mean=None, cov=None) -> CumulantRecord:
    sw = np.sum(w)
    if mean is None:
        mean = (w @ x) / sw
    c = x - mean
    if cov is None:
        cov = (c.T * w) @ c / sw
        cov = 0.5 * (cov + cov.T)
    proj = c @ dirs.T
    p2 = proj * proj
    m2 = (w @ p2) / sw
    m3 = (w @ (p2 * proj)) / sw
    m4 = (w @ (p2 * p2)) / sw
    return CumulantRecord(mean, cov, dirs, m3, m4 - 3.0 * m2**2)


def cumulants_from_ensemble(e: Ensemble, directions=None) -> CumulantRecord:
    """Weighted mean, covariance and directional third/fourth cumulants.

    Along a unit-free direction ``theta`` the third cumulant is the third
    central moment of ``theta . X`` and the fourth is the fourth central
    moment minus three times the squared variance.
    """
    dirs = np.eye(e.dim) if directions is None else np.atleast_2d(
        np.asarray(directions, dtype=float))
    return _weighted_cumulants(e.positions, e.weights, dirs, e.mean(), e.cov())


def batch_standard_errors(e: Ensemble, directions=None, batches: int = 10) -> CumulantRecord:
    """Monte Carlo standard errors of :func:`cumulants_from_ensemble` by batching.

    Particles are dealt round-robin into ``batches`` groups; the error of each
    statistic is the standard deviation of its batch values over
    ``sqrt(batches)``.
    """
    dirs = np.eye(e.dim) if directions is None else np.atleast_2d(
        np.asarray(directions, dtype=float))
    parts = [_weighted_cumulants(e.positions[b::batches], e.weights[b::batches], dirs)
             for b in range(batches)]
    scale = 1.0 / np.sqrt(batches)

    def se(name):
        vals = np.array([getattr(p, name) for p in parts])
        return np.std(vals, axis=0, ddof=1) * scale

    return CumulantRecord(se("mean"), se("covariance"), dirs, se("third"), se("fourth"))


def matched_cgf_shift_check(prior: Ensemble, multipliers, matched: Ensemble,
                            probes) -> float:
    """Largest deviation from the matched-CGF shift identity over ``probes``.

    For the tilted (not resampled) ensemble ``K_Q(theta)`` must equal
    ``K_P(theta + lam (+) 0) - K_P(lam (+) 0)``, where ``lam`` acts on the
    leading slow coordinates.
    """
    lam = np.atleast_1d(np.asarray(getattr(multipliers, "multipliers", multipliers),
                                   dtype=float))
    shift = np.zeros(prior.dim)
    shift[: lam.size] = lam
    base = empirical_cgf(prior, shift)
    worst = 0.0
    for theta in np.atleast_2d(np.asarray(probes, dtype=float)):
        lhs = empirical_cgf(matched, theta)
        rhs = empirical_cgf(prior, theta + shift) - base
        worst = max(worst, abs(lhs - rhs))
    return worst


def default_probes(dim: int, seed: int, extra: int = 4) -> np.ndarray:
    """Coordinate axes followed by ``extra`` pseudo-random unit vectors."""
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x5EED])
    v = rng.standard_normal((extra, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return np.vstack([np.eye(dim), v])


@dataclass(frozen=True, eq=False)
class SignatureReport:
    """Per-step distance to the Euler-Maruyama equilibrium ``N(0, V)``."""

    times: np.ndarray
    mean_norm: np.ndarray
    cov_deviation: np.ndarray
    cov_tolerance: np.ndarray
    third_max: np.ndarray        # max over directions of |k3| / (its 5-sigma band)
    fourth_max: np.ndarray
    within: np.ndarray           # all criteria met at this step
    converged: bool
    converged_step: int | None

    def rows(self):
        for i in range(self.times.size):
            yield (self.times[i], self.mean_norm[i], self.cov_deviation[i],
                   self.cov_tolerance[i], self.third_max[i], self.fourth_max[i],
                   bool(self.within[i]))


def equilibrium_signature(trajectory, model, dt: float, mean_tol: float = 1e-2,
                          sigmas: float = 5.0, window: int = 10) -> SignatureReport:
    """Track an ensemble trajectory's approach to the Euler-Maruyama equilibrium.

    The target is ``N(0, V)`` with ``V = invariant_variance(model, dt)``.

    Per step: the mean norm against ``mean_tol``; the Frobenius distance of
    the covariance to ``V`` against ``sigmas`` batch standard
    errors; directional third and fourth cumulants against ``sigmas`` batch
    standard errors (reported as ratios, below 1 means inside the band).
    Convergence is flagged once every criterion holds for ``window``
    consecutive steps.
    """
    recs = [r for r in trajectory.records if not r.failed and r.cumulants is not None]
    v = invariant_variance(model, dt).matrix
    n = len(recs)
    times = np.array([r.t for r in recs])
    mean_norm = np.array([np.linalg.norm(r.mean) for r in recs])
    cov_dev = np.array([np.linalg.norm(r.cov - v) for r in recs])
    cov_tol = np.array([sigmas * np.linalg.norm(r.errors.covariance) for r in recs])
    with np.errstate(divide="ignore", invalid="ignore"):
        k3 = np.array([np.max(np.abs(r.cumulants.third) / (sigmas * r.errors.third))
                       for r in recs]) if n else np.zeros(0)
        k4 = np.array([np.max(np.abs(r.cumulants.fourth) / (sigmas * r.errors.fourth))
                       for r in recs]) if n else np.zeros(0)
    within = (mean_norm < mean_tol) & (cov_dev < cov_tol) & (k3 < 1.0) & (k4 < 1.0)
    run = 0
    at = None
    for i, ok in enumerate(within):
        run = run + 1 if ok else 0
        if run >= window:
            at = i - window + 1
            break
    converged = at is not None and trajectory.failure is None
    return SignatureReport(times, mean_norm, cov_dev, cov_tol, k3, k4, within,
                           converged, at)
