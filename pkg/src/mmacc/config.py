"""Flat ``key = value`` run configuration.

Lines are ``section.key = value``; ``#`` starts a comment. Matrices are
written row-major with ``;`` between rows and ``,`` between entries, lists
as comma-separated numbers, and the forcing as ``none`` or
``sine(amplitude, frequency, target)``. Keys under ``manifest.`` are
ignored so a run manifest can be read back as a config.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .errors import ConfigError
from .model import GaussianLaw, LinearSdeModel, SineForcing, StepSchedule, driven_test_model

_SINE = re.compile(r"^sine\s*\(\s*([^,]+),\s*([^,]+),\s*([^,)]+)\s*\)$")
_BIMODAL = re.compile(r"^bimodal\s*\(\s*([^,]+),\s*([^,)]+)\s*\)$")


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError(f"{s!r} is not finite")
    return v


def _positive(s: str) -> float:
    v = _float(s)
    if not v > 0:
        raise ValueError("must be positive")
    return v


def _int(s: str) -> int:
    return int(s, 0)


def _count(s: str) -> int:
    v = int(s, 0)
    if v < 1:
        raise ValueError("must be >= 1")
    return v


def _seed(s: str) -> int:
    v = int(s, 0)
    if not 0 <= v < 1 << 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _vector(s: str) -> tuple:
    return tuple(_float(x) for x in s.split(",") if x.strip())


def _matrix(s: str) -> np.ndarray:
    rows = [_vector(r) for r in s.split(";") if r.strip()]
    if not rows or len({len(r) for r in rows}) != 1 or not rows[0]:
        raise ValueError("matrix rows must be non-empty and of equal length")
    return np.array(rows, dtype=float)


def _forcing(s: str):
    if s.lower() == "none":
        return None
    m = _SINE.match(s)
    if not m:
        raise ValueError("forcing must be 'none' or 'sine(amplitude, frequency, target)'")
    return ("sine", _float(m.group(1)), _float(m.group(2)), int(m.group(3)))


def _law(s: str):
    if s.lower() == "gaussian":
        return ("gaussian",)
    m = _BIMODAL.match(s)
    if not m:
        raise ValueError("law must be 'gaussian' or 'bimodal(center, variance)'")
    return ("bimodal", _float(m.group(1)), _float(m.group(2)))


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    return parse


def _text(s: str) -> str:
    return s


SCHEMA: dict[str, Callable[[str], Any]] = {
    "model.epsilon": _positive,
    "model.drift": _matrix,
    "model.diffusion": _matrix,
    "model.slow_dim": _count,
    "model.forcing": _forcing,
    "initial.law": _law,
    "initial.mean": _vector,
    "initial.cov": _matrix,
    "run.mode": _choice("gaussian", "ensemble"),
    "run.seed": _seed,
    "run.n_particles": _count,
    "run.micro_dt": _positive,
    "run.inner_steps": _count,
    "run.macro_dt": _positive,
    "run.end_time": _positive,
    "run.resample": _bool,
    "run.tol": _positive,
    "run.max_iter": _count,
    "run.batches": _count,
    "sweep.macro_dts": _vector,
    "sweep.micro_dts": _vector,
    "sweep.repetitions": _count,
    "sweep.window": _positive,
    "sweep.metric": _choice("l2"),
    "sweep.macro_dt_max": _positive,
    "sweep.macro_points": _count,
    "reference.dt": _positive,
    "diagnose.input": _text,
    "diagnose.mean_tol": _positive,
    "diagnose.sigmas": _positive,
    "diagnose.window": _count,
}

DEFAULTS: dict[str, Any] = {
    "run.mode": "gaussian",
    "run.seed": 0,
    "run.n_particles": 10_000,
    "run.inner_steps": 1,
    "run.resample": True,
    "run.tol": 1e-11,
    "run.max_iter": 50,
    "run.batches": 10,
    "initial.law": ("gaussian",),
    "sweep.repetitions": 10,
    "sweep.window": 1.0,
    "sweep.metric": "l2",
    "sweep.macro_dt_max": 1.0,
    "sweep.macro_points": 20,
    "diagnose.mean_tol": 1e-2,
    "diagnose.sigmas": 5.0,
    "diagnose.window": 10,
}


@dataclass
class Config:
    """Parsed configuration: typed values plus the raw text of each key."""

    values: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)

    def get(self, key: str, default=None):
        if key in self.values:
            return self.values[key]
        return DEFAULTS.get(key, default)

    def require(self, key: str):
        v = self.get(key)
        if v is None:
            raise ConfigError("required key is missing", key=key)
        return v

    def set(self, key: str, text: str) -> None:
        """Override ``key`` from a string, as the CLI flags do."""
        self.values[key] = _convert(key, text, None)
        self.raw[key] = text

    def _error(self, key: str, message: str) -> ConfigError:
        return ConfigError(message, line=self.lines.get(key), key=key)

    @property
    def epsilon(self) -> Optional[float]:
        return self.get("model.epsilon")

    def model(self) -> LinearSdeModel:
        eps = self.get("model.epsilon")
        drift = self.get("model.drift")
        if eps is not None and drift is not None:
            raise self._error("model.drift", "give either model.epsilon or model.drift, not both")
        if eps is not None:
            for key in ("model.diffusion", "model.slow_dim", "model.forcing"):
                if key in self.values:
                    raise self._error(key, "not allowed together with model.epsilon")
            return driven_test_model(eps)
        if drift is None:
            raise ConfigError("model.epsilon or model.drift is required", key="model.drift")
        d = drift.shape[0]
        diffusion = self.get("model.diffusion", np.zeros((d, 1)))
        forcing = self.get("model.forcing")
        try:
            if forcing is not None:
                _, amp, freq, target = forcing
                forcing = SineForcing(amp, freq, target, d)
            return LinearSdeModel(drift, diffusion, self.get("model.slow_dim", 1), forcing)
        except ValueError as exc:
            raise self._error("model.drift", str(exc)) from None

    def initial_law(self, dim: int) -> GaussianLaw:
        mean = self.get("initial.mean", (0.0,) * dim)
        cov = self.get("initial.cov", np.eye(dim))
        try:
            return GaussianLaw(np.array(mean), cov)
        except ValueError as exc:
            raise self._error("initial.cov", str(exc)) from None

    def schedule(self) -> StepSchedule:
        try:
            return StepSchedule(self.require("run.micro_dt"), self.get("run.inner_steps"),
                                self.require("run.macro_dt"), self.require("run.end_time"))
        except ValueError as exc:
            raise self._error("run.macro_dt", str(exc)) from None

    def echo(self) -> list[str]:
        """Resolved ``key = value`` lines, sorted by key."""
        return [f"{k} = {self.raw[k]}" for k in sorted(self.raw)]


def _convert(key: str, text: str, line: Optional[int]):
    parser = SCHEMA.get(key)
    if parser is None:
        raise ConfigError("unknown key", line=line, key=key)
    if text == "":
        raise ConfigError("empty value", line=line, key=key)
    try:
        return parser(text)
    except ValueError as exc:
        raise ConfigError(str(exc), line=line, key=key) from None


def parse_config(text: str) -> Config:
    cfg = Config()
    for number, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError("expected 'key = value'", line=number)
        key, value = (p.strip() for p in body.split("=", 1))
        if "." not in key:
            raise ConfigError("keys need a section prefix such as 'run.'", line=number, key=key)
        if key.startswith("manifest."):
            continue
        if key in cfg.values:
            raise ConfigError("duplicate key", line=number, key=key)
        cfg.values[key] = _convert(key, value, number)
        cfg.raw[key] = value
        cfg.lines[key] = number
    return cfg


def load_config(path) -> Config:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text)
