"""Pure NumPy implementation of the hot kernels.

Mirrors ``_ckernels.pyx`` function for function; used when the compiled
extension is unavailable or ``MMACC_PURE_PYTHON`` is set.

Random numbers come from a counter-based generator: every standard normal
is a pure function of ``(seed, stream, particle, lane)``, so the draws do not
depend on particle iteration order or on how work is partitioned.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
PARTICLE_MULT = 0xD1B54A32D192ED03
LANE_MULT = 0x8CB92BA72F3D8DD7
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0


def mix64_int(z: int) -> int:
    """SplitMix64 finalizer on a Python int (mod 2**64)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def stream_key(seed: int, stream: int) -> int:
    k = mix64_int((seed & MASK64) ^ GOLDEN)
    return mix64_int(k + (stream & MASK64) * GOLDEN)


def _lane_bits(seed: int, stream: int, n: int, lanes: int) -> np.ndarray:
    key = np.uint64(stream_key(seed, stream))
    idx = np.arange(n, dtype=np.uint64)
    pkey = _mix64(key ^ (idx * np.uint64(PARTICLE_MULT)))
    lane_off = (np.arange(1, lanes + 1, dtype=np.uint64) * np.uint64(LANE_MULT))
    return _mix64(pkey[:, None] + lane_off[None, :])


def _to_unit(bits: np.ndarray) -> np.ndarray:
    # Open interval (0, 1): safe for log().
    return ((bits >> _S11).astype(np.float64) + 0.5) * _INV_2_53


def uniforms(seed: int, stream: int, n: int, lanes: int = 1) -> np.ndarray:
    """``(n, lanes)`` uniforms on (0, 1) for the given stream."""
    return _to_unit(_lane_bits(seed, stream, n, lanes))


def normals(seed: int, stream: int, n: int, m: int) -> np.ndarray:
    """``(n, m)`` standard normals; row ``i`` depends only on ``(seed, stream, i)``."""
    pairs = (m + 1) // 2
    u = uniforms(seed, stream, n, 2 * pairs)
    r = np.sqrt(-2.0 * np.log(u[:, 0::2]))
    ang = _TWO_PI * u[:, 1::2]
    z = np.empty((n, 2 * pairs))
    z[:, 0::2] = r * np.cos(ang)
    z[:, 1::2] = r * np.sin(ang)
    return z[:, :m]


def em_step(x, euler, shift, noise, seed, stream, bound):
    """One Euler-Maruyama step for all particles.

    Returns ``(new_positions, first_bad)`` where ``first_bad`` is the index
    of the first particle that is non-finite or exceeds ``bound`` in
    absolute value, or -1.
    """
    n = x.shape[0]
    out = x @ euler.T
    out += shift
    if noise.shape[1] and np.any(noise):
        out += normals(seed, stream, n, noise.shape[1]) @ noise.T
    bad = ~np.all(np.abs(out) <= bound, axis=1)
    first = int(np.argmax(bad)) if bad.any() else -1
    return out, first


def weighted_mean(y, w):
    # One contiguous dot per column, so a column's mean does not depend on
    # how many other columns are present.
    sw = np.sum(w)
    return np.array([w @ np.ascontiguousarray(y[:, j]) for j in range(y.shape[1])]) / sw


def tilt_moments(y, w, lam):
    """Log-partition value, gradient and hessian of a weighted sample at ``lam``.

    Also returns the largest tilted probability, used to detect collapse.
    """
    s = y @ lam
    pos = w > 0
    m = float(np.max(s[pos]))
    e = np.exp(s - m)
    p = w * e
    s0 = np.sum(p)
    g = weighted_mean(y, p)
    c = y - g
    h = (c.T * p) @ c / s0
    value = m + np.log(s0) - np.log(np.sum(w))
    return float(value), g, h, float(np.max(p) / s0)


def tilted_weights(y, w, lam):
    s = y @ lam
    pos = w > 0
    m = float(np.max(s[pos]))
    p = w * np.exp(s - m)
    return p / np.sum(p)


def log_mean_exp(s, w):
    """``log(sum w e^s) - log(sum w)`` with max-shift; exactly 0 when ``s == 0``."""
    pos = w > 0
    m = float(np.max(s[pos]))
    p = w * np.exp(s - m)
    s0 = np.sum(p)
    return float(m + np.log(s0) - np.log(np.sum(w))), float(s0 * s0 / np.sum(p * p))


def systematic_resample(w, u):
    n = w.shape[0]
    c = np.cumsum(w)
    pos = (u + np.arange(n)) / n * c[-1]
    idx = np.searchsorted(c, pos, side="right")
    return np.minimum(idx, n - 1).astype(np.int64)
