"""Backend selection for the hot kernels.

The compiled Cython module is used when it imports; otherwise, or when the
environment variable ``MMACC_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the NumPy fallback is used. Both expose the same functions and
the same random streams.
"""

import os
from types import ModuleType

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _want_pure() -> bool:
    return os.environ.get("MMACC_PURE_PYTHON", "") not in ("", "0")


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _ckernels is not None else [])


def get_backend(name: str) -> ModuleType:
    if name == "python":
        return _pykernels
    if name == "cython":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built")
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


if _ckernels is not None and not _want_pure():
    impl: ModuleType = _ckernels
    BACKEND = "cython"
else:
    impl = _pykernels
    BACKEND = "python"

normals = impl.normals
uniforms = impl.uniforms
em_step = impl.em_step
weighted_mean = impl.weighted_mean
tilt_moments = impl.tilt_moments
tilted_weights = impl.tilted_weights
log_mean_exp = impl.log_mean_exp
systematic_resample = impl.systematic_resample
mix64 = _pykernels.mix64_int
