"""Exact moments of linear SDEs and the driven test system, and Gaussian KL."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad_vec
from scipy.linalg import expm

from .errors import DegeneratePriorError, DimensionError
from .model import GaussianLaw, LinearSdeModel, SineForcing, driven_test_model

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class DrivenMeanConstants:
    """Coefficients of the periodic mean ``(a, c) cos(2 pi t) + (b, d) sin(2 pi t)``."""

    a: float
    b: float
    c: float
    d: float

    @property
    def cos_coeff(self) -> np.ndarray:
        return np.array([self.a, self.c])

    @property
    def sin_coeff(self) -> np.ndarray:
        return np.array([self.b, self.d])


def driven_constants_system(drift) -> tuple[np.ndarray, np.ndarray]:
    """4x4 system for ``(a, b, c, d)`` given a 2x2 drift with unit sine forcing on x.

    Obtained by matching the cos and sin terms of ``mu' = M mu + (sin 2 pi t, 0)``.
    """
    m = np.asarray(drift, dtype=float)
    if m.shape != (2, 2):
        raise DimensionError("the driven system is two-dimensional")
    w = TWO_PI
    mat = np.array([
        [-w, -m[0, 0], 0.0, -m[0, 1]],
        [-m[0, 0], w, -m[0, 1], 0.0],
        [0.0, -m[1, 0], -w, -m[1, 1]],
        [-m[1, 0], 0.0, -m[1, 1], w],
    ])
    return mat, np.array([1.0, 0.0, 0.0, 0.0])


def driven_mean_constants(epsilon: float) -> DrivenMeanConstants:
    mat, rhs = driven_constants_system(driven_test_model(epsilon).drift)
    if np.linalg.cond(mat) > 1e12:
        raise DegeneratePriorError(f"constants system is singular for epsilon={epsilon}")
    a, b, c, d = np.linalg.solve(mat, rhs)
    return DrivenMeanConstants(float(a), float(b), float(c), float(d))


def driven_mean_exact(t, mu0, epsilon: float) -> np.ndarray:
    """Exact mean of the driven system at time ``t`` (scalar or 1D array).

    Returns shape ``(2,)`` for scalar ``t`` and ``(len(t), 2)`` otherwise.
    """
    k = driven_mean_constants(epsilon)
    m = driven_test_model(epsilon).drift
    mu0 = np.asarray(mu0, dtype=float)
    start = mu0 - k.cos_coeff
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty((ts.size, 2))
    for i, ti in enumerate(ts):
        out[i] = (expm(ti * m) @ start + k.cos_coeff * math.cos(TWO_PI * ti)
                  + k.sin_coeff * math.sin(TWO_PI * ti))
    return out[0] if np.ndim(t) == 0 else out


def _noise_integral(drift: np.ndarray, bbt: np.ndarray, t: float) -> np.ndarray:
    """``int_0^t e^{sA} BB^T e^{sA^T} ds`` by Van Loan on a short step, then doubling.

    On ``[0, h]`` with ``|A| h <= 1``: ``expm([[-A, BB^T], [0, A^T]] h)`` has
    blocks ``F12, F22`` with ``Q(h) = F22^T F12``. Over long horizons that
    block grows like ``e^{-Ah}`` and the product cancels badly, so the
    integral is extended by ``Q(2h) = Q(h) + e^{Ah} Q(h) e^{A^T h}``.
    """
    d = drift.shape[0]
    norm = float(np.linalg.norm(drift, 1)) * t
    halvings = max(0, math.ceil(math.log2(norm))) if norm > 1.0 else 0
    h = t / 2.0**halvings
    block = np.zeros((2 * d, 2 * d))
    block[:d, :d] = -drift
    block[:d, d:] = bbt
    block[d:, d:] = drift.T
    e = expm(block * h)
    q = e[d:, d:].T @ e[:d, d:]
    prop = e[d:, d:].T  # e^{A h}
    for _ in range(halvings):
        q = q + prop @ q @ prop.T
        prop = prop @ prop
    return 0.5 * (q + q.T)


def _sine_augmented(model: LinearSdeModel, forcing: SineForcing) -> np.ndarray:
    # State (mu, cos(wt), sin(wt)) is linear and autonomous.
    d = model.dim
    w = TWO_PI * forcing.frequency
    aug = np.zeros((d + 2, d + 2))
    aug[:d, :d] = model.drift
    aug[forcing.target, d + 1] = forcing.amplitude
    aug[d, d + 1] = -w
    aug[d + 1, d] = w
    return aug


def _forced_mean(model: LinearSdeModel, mu0: np.ndarray, t: float, t0: float) -> np.ndarray:
    f = model.forcing
    if f is None:
        return expm(t * model.drift) @ mu0
    if isinstance(f, SineForcing):
        w = TWO_PI * f.frequency
        z0 = np.concatenate([mu0, [math.cos(w * t0), math.sin(w * t0)]])
        return (expm(t * _sine_augmented(model, f)) @ z0)[: model.dim]
    conv, _ = quad_vec(lambda s: expm((t - s) * model.drift) @ model.forcing_at(t0 + s),
                       0.0, t, epsabs=1e-13, epsrel=1e-12)
    return expm(t * model.drift) @ mu0 + conv


def ou_exact_moments(model: LinearSdeModel, g0: GaussianLaw, t: float,
                     t0: float = 0.0) -> GaussianLaw:
    """Exact law at ``t0 + t`` of the linear SDE started from ``g0`` at ``t0``.

    Additive forcing only moves the mean; the covariance is
    ``e^{tA} Sigma_0 e^{tA^T} + int_0^t e^{sA} B B^T e^{sA^T} ds``.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if g0.dim != model.dim:
        raise DimensionError("initial law and model dimensions differ")
    if t == 0:
        return g0
    e = expm(t * model.drift)
    bbt = model.diffusion @ model.diffusion.T
    cov = e @ g0.cov @ e.T + _noise_integral(model.drift, bbt, t)
    return GaussianLaw(_forced_mean(model, g0.mean, t, t0), 0.5 * (cov + cov.T))


def exact_mean_grid(model: LinearSdeModel, mu0, dt: float, n_steps: int) -> np.ndarray:
    """Exact mean at ``k*dt`` for ``k = 0..n_steps``, shape ``(n_steps + 1, d)``."""
    mu0 = np.asarray(mu0, dtype=float)
    out = np.empty((n_steps + 1, model.dim))
    f = model.forcing
    if f is None or isinstance(f, SineForcing):
        if f is None:
            prop, z = expm(dt * model.drift), mu0.copy()
        else:
            prop = expm(dt * _sine_augmented(model, f))
            z = np.concatenate([mu0, [1.0, 0.0]])
        out[0] = mu0
        for k in range(1, n_steps + 1):
            z = prop @ z
            out[k] = z[: model.dim]
        return out
    for k in range(n_steps + 1):
        out[k] = _forced_mean(model, mu0, k * dt, 0.0)
    return out


def kl_gaussian(p: GaussianLaw, q: GaussianLaw) -> float:
    """Kullback-Leibler divergence ``D(p || q)`` between two Gaussians."""
    if p.dim != q.dim:
        raise DimensionError("laws have different dimensions")
    sign_q, logdet_q = np.linalg.slogdet(q.cov)
    if sign_q <= 0 or np.linalg.cond(q.cov) > 1e14:
        raise DegeneratePriorError("covariance of q is singular")
    sign_p, logdet_p = np.linalg.slogdet(p.cov)
    if sign_p <= 0:
        raise DegeneratePriorError("covariance of p is singular")
    diff = q.mean - p.mean
    val = 0.5 * (logdet_q - logdet_p - p.dim
                 + np.trace(np.linalg.solve(q.cov, p.cov))
                 + diff @ np.linalg.solve(q.cov, diff))
    # Round-off can push identical laws slightly below zero.
    return max(float(val), 0.0)
