"""Compare the compiled and pure-Python kernel backends.

Usage::

    python3 benchmarks/bench_kernels.py [--particles 100000] [--repeat 5]

Kernel timings call each backend module directly. The end-to-end timing
runs a short ensemble micro-macro simulation in a subprocess per backend,
since the backend is fixed when ``mmacc`` is imported.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from mmacc import kernels

RUN_SNIPPET = """
import time, numpy as np
from mmacc import BACKEND, Ensemble, GaussianLaw, StepSchedule, driven_test_model, run
e = Ensemble.sample_gaussian(GaussianLaw(np.zeros(2), np.eye(2)), {n}, 1)
t = time.perf_counter()
run(e, driven_test_model(0.5), StepSchedule(0.025, 2, 0.1, 2.0))
print(BACKEND, time.perf_counter() - t)
"""


def kernel_cases(n: int):
    rng = np.random.default_rng(0)
    x = np.ascontiguousarray(rng.normal(size=(n, 2)))
    euler = np.ascontiguousarray(np.eye(2) + 0.01 * np.array([[-2.0, -2.0], [1.0, -1.0]]))
    shift = np.zeros(2)
    noise = np.ascontiguousarray(0.1 * np.eye(2))
    w = np.full(n, 1.0 / n)
    y = np.ascontiguousarray(x[:, :1])
    lam = np.array([0.3])
    return {
        "normals": lambda k: k.normals(7, 1, n, 2),
        "em_step": lambda k: k.em_step(x, euler, shift, noise, 7, 1, 1e12),
        "tilt_moments": lambda k: k.tilt_moments(y, w, lam),
        "tilted_weights": lambda k: k.tilted_weights(y, w, lam),
        "systematic_resample": lambda k: k.systematic_resample(w, 0.5),
    }


def time_kernels(n: int, repeat: int) -> None:
    names = kernels.available_backends()
    mods = {name: kernels.get_backend(name) for name in names}
    print(f"kernel timings, N = {n}, best of {repeat} (ms)")
    print(f"{'kernel':<22}" + "".join(f"{name:>12}" for name in names)
          + ("     speedup" if len(names) == 2 else ""))
    for label, fn in kernel_cases(n).items():
        best = {name: min(timeit.repeat(lambda: fn(mod), number=1, repeat=repeat)) * 1e3
                for name, mod in mods.items()}
        line = f"{label:<22}" + "".join(f"{best[name]:12.3f}" for name in names)
        if len(names) == 2:
            line += f"{best['python'] / best['cython']:11.1f}x"
        print(line)


def time_runs(n: int) -> None:
    print(f"\nend-to-end ensemble run, N = {n}, 20 macro steps")
    for pure in ("1", "0"):
        env = dict(os.environ, MMACC_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", RUN_SNIPPET.format(n=n)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"{out[0]:<10}{float(out[1]):8.3f} s")


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--particles", type=int, default=100_000)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    time_kernels(args.particles, args.repeat)
    time_runs(args.particles)


if __name__ == "__main__":
    main()
