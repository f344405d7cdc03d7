"""Linear slow-fast SDE models, Gaussian laws and step schedules.

The system is ``dX = (A X + f(t)) dt + B dW`` with the slow variables stored
in the first ``slow_dim`` coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError

Forcing = Callable[[float], np.ndarray]


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim == 0 and ndim == 1:
        arr = arr.reshape(1)
    if arr.ndim == 0 and ndim == 2:
        arr = arr.reshape(1, 1)
    if arr.ndim == 1 and ndim == 2:
        arr = arr.reshape(-1, 1) if name == "diffusion" else arr.reshape(1, -1)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def spectral_radius(m) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"spectral radius needs a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return float(np.max(np.abs(np.linalg.eigvals(m))))


@dataclass(frozen=True)
class SineForcing:
    """Deterministic drift ``amplitude * sin(2 pi frequency t)`` on one coordinate."""

    amplitude: float
    frequency: float
    target: int
    dim: int

    def __post_init__(self):
        if not 0 <= self.target < self.dim:
            raise DimensionError(f"forcing target {self.target} outside 0..{self.dim - 1}")

    def __call__(self, t: float) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.target] = self.amplitude * math.sin(2.0 * math.pi * self.frequency * t)
        return out


@dataclass(frozen=True, eq=False)
class LinearSdeModel:
    drift: np.ndarray
    diffusion: np.ndarray
    slow_dim: int
    forcing: Optional[Forcing] = None

    def __post_init__(self):
        drift = _frozen(self.drift, 2, "drift")
        diffusion = _frozen(self.diffusion, 2, "diffusion")
        if drift.shape[0] != drift.shape[1]:
            raise DimensionError(f"drift must be square, got shape {drift.shape}")
        if diffusion.shape[0] != drift.shape[0]:
            raise DimensionError(
                f"diffusion has {diffusion.shape[0]} rows, drift dimension is {drift.shape[0]}")
        if not 0 < int(self.slow_dim) <= drift.shape[0]:
            raise DimensionError(f"slow_dim must lie in 1..{drift.shape[0]}, got {self.slow_dim}")
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "diffusion", diffusion)
        object.__setattr__(self, "slow_dim", int(self.slow_dim))

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    @property
    def noise_dim(self) -> int:
        return self.diffusion.shape[1]

    @property
    def fast_dim(self) -> int:
        return self.dim - self.slow_dim

    # Block views of the drift: [[A_s, V], [W, A_f]].
    @property
    def a_slow(self) -> np.ndarray:
        return self.drift[: self.slow_dim, : self.slow_dim]

    @property
    def v_block(self) -> np.ndarray:
        return self.drift[: self.slow_dim, self.slow_dim:]

    @property
    def w_block(self) -> np.ndarray:
        return self.drift[self.slow_dim:, : self.slow_dim]

    @property
    def a_fast(self) -> np.ndarray:
        return self.drift[self.slow_dim:, self.slow_dim:]

    def forcing_at(self, t: float) -> np.ndarray:
        if self.forcing is None:
            return np.zeros(self.dim)
        f = np.asarray(self.forcing(t), dtype=float)
        if f.shape != (self.dim,):
            raise DimensionError(f"forcing returned shape {f.shape}, expected ({self.dim},)")
        return f

    def without_forcing(self) -> "LinearSdeModel":
        return LinearSdeModel(self.drift, self.diffusion, self.slow_dim, None)

    def without_noise(self) -> "LinearSdeModel":
        return LinearSdeModel(self.drift, np.zeros_like(self.diffusion), self.slow_dim,
                              self.forcing)

    def euler_matrix(self, dt: float) -> np.ndarray:
        """``I + dt A``, the mean map of one Euler-Maruyama step."""
        return np.eye(self.dim) + dt * self.drift


def driven_test_model(epsilon: float) -> LinearSdeModel:
    """Periodically driven 2D slow-fast system with time-scale separation ``epsilon``.

    ``dX = -2(X+Y) dt + sin(2 pi t) dt + dW_x``,
    ``dY = (X-Y)/epsilon dt + dW_y / sqrt(epsilon)``.
    """
    if not epsilon > 0 or not math.isfinite(epsilon):
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    drift = [[-2.0, -2.0], [1.0 / epsilon, -1.0 / epsilon]]
    diffusion = [[1.0, 0.0], [0.0, 1.0 / math.sqrt(epsilon)]]
    return LinearSdeModel(drift, diffusion, 1, SineForcing(1.0, 1.0, 0, 2))


@dataclass(frozen=True, eq=False)
class GaussianLaw:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _frozen(self.mean, 1, "mean")
        cov = _frozen(self.cov, 2, "cov")
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise DimensionError(f"cov shape {cov.shape} does not match mean length {d}")
        scale = float(np.max(np.abs(cov))) if cov.size else 0.0
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12 * max(scale, 1e-300):
            raise ValueError("covariance is not symmetric")
        if d and scale > 0:
            lo = float(np.min(np.linalg.eigvalsh(cov)))
            if lo < -1e-10 * np.linalg.norm(cov, 2):
                raise ValueError(f"covariance is not positive semi-definite (min eigenvalue {lo:.3e})")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def slow_mean(self, slow_dim: int) -> np.ndarray:
        return self.mean[:slow_dim].copy()

    def blocks(self, slow_dim: int):
        """Return ``(Sigma_s, C, Sigma_f)`` with ``C`` the slow-fast cross block."""
        s = slow_dim
        return self.cov[:s, :s], self.cov[:s, s:], self.cov[s:, s:]


@dataclass(frozen=True)
class StepSchedule:
    micro_dt: float
    inner_steps: int
    macro_dt: float
    end_time: float

    def __post_init__(self):
        if not self.micro_dt > 0:
            raise ValueError("micro_dt must be positive")
        if int(self.inner_steps) != self.inner_steps or self.inner_steps < 1:
            raise ValueError("inner_steps must be a positive integer")
        if not self.macro_dt > 0:
            raise ValueError("macro_dt must be positive")
        if not self.end_time > 0:
            raise ValueError("end_time must be positive")
        # Relative slack so that macro_dt == K*micro_dt survives round-off.
        if self.macro_dt < self.micro_span * (1.0 - 1e-12):
            raise ValueError(
                f"macro_dt={self.macro_dt} is shorter than the micro span "
                f"K*micro_dt={self.micro_span}")
        object.__setattr__(self, "inner_steps", int(self.inner_steps))

    @property
    def micro_span(self) -> float:
        return self.inner_steps * self.micro_dt

    @property
    def n_macro_steps(self) -> int:
        """Number of macro steps needed for the clock to reach ``end_time``."""
        return max(1, math.ceil(self.end_time / self.macro_dt - 1e-9))
