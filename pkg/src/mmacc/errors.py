"""Exception hierarchy shared by all modules."""


class MmaccError(Exception):
    """Base class for every error raised by the package."""


class DimensionError(MmaccError, ValueError):
    pass


class DegeneratePriorError(MmaccError, ValueError):
    """A covariance block that must be inverted is singular."""


class DivergenceError(MmaccError, ValueError):
    """The Euler-Maruyama invariant-variance series does not converge."""

    def __init__(self, radius: float):
        super().__init__(
            f"spectral radius of I + dt*A is {radius:.6g} >= 1; series diverges"
        )
        self.radius = radius


class BlowUpError(MmaccError, ArithmeticError):
    """Particles left the finite range during micro simulation.

    ``step_index`` counts Euler-Maruyama steps inside the failing burst;
    ``macro_index`` and ``time`` are filled in by the acceleration loop.
    """

    def __init__(self, step_index: int, macro_index: int | None = None,
                 time: float | None = None):
        self.step_index = step_index
        self.macro_index = macro_index
        self.time = time
        super().__init__(self._message())

    def _message(self) -> str:
        msg = f"ensemble blew up at micro step {self.step_index}"
        if self.macro_index is not None:
            msg += f" (macro step n={self.macro_index}, t={self.time:.6g})"
        return msg

    def annotate(self, macro_index: int, time: float) -> "BlowUpError":
        self.macro_index = macro_index
        self.time = time
        self.args = (self._message(),)
        return self


class MatchingFailure(MmaccError):
    """No Lagrange multipliers reproduce the requested slow mean.

    This is an expected outcome for unstable step-size pairs, so it carries
    the solver state instead of only a message.
    """

    def __init__(self, reason: str, iterations: int, residual_norm: float,
                 multipliers=None):
        self.reason = reason
        self.iterations = iterations
        self.residual_norm = residual_norm
        self.multipliers = multipliers
        self.macro_index: int | None = None
        self.time: float | None = None
        super().__init__(self._message())

    def _message(self) -> str:
        msg = (f"matching failed ({self.reason}) after {self.iterations} "
               f"iterations, residual {self.residual_norm:.3e}")
        if self.macro_index is not None:
            msg += f" at macro step n={self.macro_index}, t={self.time:.6g}"
        return msg

    def annotate(self, macro_index: int, time: float) -> "MatchingFailure":
        self.macro_index = macro_index
        self.time = time
        self.args = (self._message(),)
        return self


class ConfigError(MmaccError, ValueError):
    """Malformed or inconsistent configuration file."""

    def __init__(self, message: str, line: int | None = None,
                 key: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"field '{key}'")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.line = line
        self.key = key
