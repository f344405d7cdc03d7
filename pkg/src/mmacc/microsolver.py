"""Euler-Maruyama propagation of particle ensembles and Gaussian moments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import BlowUpError, DimensionError, DivergenceError
from .model import GaussianLaw, LinearSdeModel, spectral_radius

BLOWUP_BOUND = 1e12


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Weighted particle cloud with its position in the random-stream lineage.

    ``stream`` is the counter of the next unused stream of ``seed``; each
    Euler-Maruyama step consumes exactly one stream. Stream 0 is reserved
    for initial sampling.
    """

    positions: np.ndarray
    weights: np.ndarray
    seed: int
    stream: int = 0

    def __post_init__(self):
        x = np.ascontiguousarray(self.positions, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise DimensionError(f"positions must be (N, d), got shape {x.shape}")
        if x.shape[0] < 2:
            raise ValueError("an ensemble needs at least 2 particles")
        if not np.all(np.isfinite(x)):
            raise ValueError("ensemble positions must be finite")
        w = np.ascontiguousarray(self.weights, dtype=float)
        if w.shape != (x.shape[0],):
            raise DimensionError(f"weights shape {w.shape} does not match N={x.shape[0]}")
        if np.any(w < 0) or abs(np.sum(w) - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        x.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "stream", int(self.stream))

    @classmethod
    def uniform(cls, positions, seed: int, stream: int = 0) -> "Ensemble":
        n = np.shape(positions)[0]
        return cls(positions, np.full(n, 1.0 / n), seed, stream)

    @classmethod
    def sample_gaussian(cls, law: GaussianLaw, n: int, seed: int) -> "Ensemble":
        """Draw ``n`` particles from ``law`` using stream 0 of ``seed``."""
        z = kernels.normals(seed, 0, n, law.dim)
        root = _psd_sqrt(law.cov)
        return cls.uniform(law.mean + z @ root.T, seed, stream=1)

    @classmethod
    def sample_bimodal(cls, n: int, dim: int, center: float, variance: float,
                       seed: int) -> "Ensemble":
        """Independent ``0.5 N(-center, variance) + 0.5 N(center, variance)`` per coordinate.

        Normals and mode signs both come from stream 0 on disjoint lanes.
        """
        if variance < 0:
            raise ValueError("variance must be non-negative")
        z = kernels.normals(seed, 0, n, dim)
        used = dim + (dim % 2)
        u = kernels.uniforms(seed, 0, n, used + dim)[:, used:]
        sign = np.where(u < 0.5, -1.0, 1.0)
        return cls.uniform(sign * center + np.sqrt(variance) * z, seed, stream=1)

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def rng_lineage(self) -> tuple[int, int]:
        return self.seed, self.stream

    def slow_mean(self, slow_dim: int) -> np.ndarray:
        y = np.ascontiguousarray(self.positions[:, :slow_dim])
        return kernels.weighted_mean(y, self.weights)

    def mean(self) -> np.ndarray:
        return kernels.weighted_mean(self.positions, self.weights)

    def cov(self) -> np.ndarray:
        c = self.positions - self.mean()
        m = (c.T * self.weights) @ c / np.sum(self.weights)
        return 0.5 * (m + m.T)

    def effective_size(self) -> float:
        w = self.weights
        return float(np.sum(w) ** 2 / np.sum(w * w))


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True, eq=False)
class InvariantVariance:
    matrix: np.ndarray
    terms_used: int


def em_step_ensemble(e: Ensemble, model: LinearSdeModel, dt: float, t: float,
                     step_index: int = 0) -> Ensemble:
    """Advance every particle by one Euler-Maruyama step of size ``dt``.

    The forcing is evaluated at the left endpoint ``t``. Raises
    :class:`BlowUpError` (tagged with ``step_index``) when a coordinate
    becomes non-finite or exceeds ``BLOWUP_BOUND`` in magnitude.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if e.dim != model.dim:
        raise DimensionError(f"ensemble dimension {e.dim} != model dimension {model.dim}")
    euler = np.ascontiguousarray(model.euler_matrix(dt))
    shift = np.ascontiguousarray(model.forcing_at(t) * dt)
    noise = np.ascontiguousarray(np.sqrt(dt) * model.diffusion)
    out, bad = kernels.em_step(e.positions, euler, shift, noise, e.seed, e.stream,
                               BLOWUP_BOUND)
    if bad >= 0:
        raise BlowUpError(step_index)
    return Ensemble(out, e.weights, e.seed, e.stream + 1)


def em_step_moments(g: GaussianLaw, model: LinearSdeModel, dt: float,
                    t: float, step_index: int = 0) -> GaussianLaw:
    """Exact mean/covariance map of one Euler-Maruyama step.

    Raises :class:`BlowUpError` when a moment becomes non-finite or some
    coordinate's ``|mean| + std`` exceeds ``BLOWUP_BOUND``, the Gaussian
    counterpart of the particle bound.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if g.dim != model.dim:
        raise DimensionError(f"law dimension {g.dim} != model dimension {model.dim}")
    if dt == 0:
        return g
    f = model.euler_matrix(dt)
    mean = f @ g.mean + model.forcing_at(t) * dt
    cov = f @ g.cov @ f.T + dt * (model.diffusion @ model.diffusion.T)
    with np.errstate(invalid="ignore", over="ignore"):
        scale = np.abs(mean) + np.sqrt(np.abs(np.diag(cov)))
    if not (np.all(np.isfinite(cov)) and np.all(scale <= BLOWUP_BOUND)):
        raise BlowUpError(step_index)
    return GaussianLaw(mean, 0.5 * (cov + cov.T))


def em_burst(state, model: LinearSdeModel, dt: float, k_steps: int, t0: float):
    """Run ``k_steps`` Euler-Maruyama steps starting at time ``t0``.

    Returns the final state and a ``(k_steps + 1, slow_dim)`` array of the
    restricted slow means, one row per micro time ``t0 + k*dt``.
    """
    if k_steps < 1:
        raise ValueError("k_steps must be >= 1")
    means = np.empty((k_steps + 1, model.slow_dim))
    means[0] = state.slow_mean(model.slow_dim)
    ensemble = isinstance(state, Ensemble)
    for k in range(k_steps):
        t = t0 + k * dt
        if ensemble:
            state = em_step_ensemble(state, model, dt, t, step_index=k)
        else:
            state = em_step_moments(state, model, dt, t, step_index=k)
        means[k + 1] = state.slow_mean(model.slow_dim)
    return state, means


def invariant_variance(model: LinearSdeModel, dt: float, tol: float = 1e-12,
                       max_terms: int = 10**6) -> InvariantVariance:
    """Stationary covariance of the Euler-Maruyama scheme.

    Sums ``dt * sum_j F^j B B^T (F^T)^j`` with ``F = I + dt A`` by doubling:
    ``S_{2n} = S_n + F^n S_n (F^n)^T``. Each doubling adds the next block of
    series terms, so the partial sums are exactly those of the series with
    ``2^k`` terms. Stops when the added block is below ``tol`` times the
    partial sum in Frobenius norm.
    """
    f = model.euler_matrix(dt)
    rho = spectral_radius(f)
    if rho >= 1.0:
        raise DivergenceError(rho)
    s = dt * (model.diffusion @ model.diffusion.T)
    if not np.any(s):
        return InvariantVariance(np.zeros_like(s), 1)
    power = f.copy()
    terms = 1
    while terms < max_terms:
        inc = power @ s @ power.T
        s = s + inc
        terms *= 2
        power = power @ power
        if np.linalg.norm(inc) <= tol * np.linalg.norm(s):
            break
    return InvariantVariance(0.5 * (s + s.T), terms)

