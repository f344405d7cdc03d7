import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def driven1():
    from mmacc.model import driven_test_model
    return driven_test_model(1.0)


def mc_bound(samples, k=3.0):
    """``k`` standard errors of the sample mean of ``samples``."""
    s = np.asarray(samples, dtype=float)
    return k * s.std(ddof=1) / np.sqrt(s.shape[0])


def weighted_se(z, w):
    """Delta-method standard error of the self-normalised weighted mean of ``z``."""
    w = np.asarray(w, dtype=float) / np.sum(w)
    z = np.asarray(z, dtype=float)
    return float(np.sqrt(np.sum(w * w * (z - w @ z) ** 2)))


def pytest_terminal_summary(terminalreporter):
    """Print one line per acceptance criterion, in criterion order."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when != "call":
                continue
            for name, value in getattr(rep, "user_properties", ()):
                if name == "acceptance":
                    lines.append(value)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
