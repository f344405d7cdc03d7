# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; same API and random streams as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, cos, sin, exp, fabs, INFINITY
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t PARTICLE_MULT = 0xD1B54A32D192ED03ULL
cdef uint64_t LANE_MULT = 0x8CB92BA72F3D8DD7ULL
cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t c_stream_key(uint64_t seed, uint64_t stream) noexcept nogil:
    return mix64(mix64(seed ^ GOLDEN) + stream * GOLDEN)


cdef inline double unit(uint64_t bits) noexcept nogil:
    return (<double>(bits >> 11) + 0.5) * INV_2_53


cdef inline void particle_normals(uint64_t key, uint64_t i, int m,
                                  double* z) noexcept nogil:
    cdef uint64_t pkey = mix64(key ^ (i * PARTICLE_MULT))
    cdef int j = 0
    cdef double u0, u1, r, ang
    while j < m:
        u0 = unit(mix64(pkey + <uint64_t>(j + 1) * LANE_MULT))
        u1 = unit(mix64(pkey + <uint64_t>(j + 2) * LANE_MULT))
        r = sqrt(-2.0 * log(u0))
        ang = TWO_PI * u1
        z[j] = r * cos(ang)
        if j + 1 < m:
            z[j + 1] = r * sin(ang)
        j += 2


def stream_key(seed, stream):
    return int(c_stream_key(<uint64_t>(seed & 0xFFFFFFFFFFFFFFFF),
                            <uint64_t>(stream & 0xFFFFFFFFFFFFFFFF)))


def uniforms(seed, stream, Py_ssize_t n, int lanes=1):
    cdef uint64_t key = stream_key(seed, stream)
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, lanes))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i
    cdef int j
    cdef uint64_t pkey
    with nogil:
        for i in range(n):
            pkey = mix64(key ^ (<uint64_t>i * PARTICLE_MULT))
            for j in range(lanes):
                o[i, j] = unit(mix64(pkey + <uint64_t>(j + 1) * LANE_MULT))
    return out


def normals(seed, stream, Py_ssize_t n, int m):
    cdef uint64_t key = stream_key(seed, stream)
    cdef int pairs = (m + 1) // 2
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, m))
    cdef double[:, ::1] o = out
    cdef double[::1] buf = np.empty(2 * pairs + 2)
    cdef Py_ssize_t i
    cdef int j
    with nogil:
        for i in range(n):
            particle_normals(key, <uint64_t>i, m, &buf[0])
            for j in range(m):
                o[i, j] = buf[j]
    return out


def em_step(const double[:, ::1] x, const double[:, ::1] euler,
            const double[::1] shift, const double[:, ::1] noise,
            seed, stream, double bound):
    cdef Py_ssize_t n = x.shape[0]
    cdef int d = x.shape[1]
    cdef int m = noise.shape[1]
    cdef uint64_t key = stream_key(seed, stream)
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, d))
    cdef double[:, ::1] o = out
    cdef double[::1] z = np.zeros(m + 2)
    cdef Py_ssize_t i, first = -1
    cdef int a, b
    cdef double acc
    cdef bint has_noise = 0
    for a in range(d):
        for b in range(m):
            if noise[a, b] != 0.0:
                has_noise = 1
    with nogil:
        for i in range(n):
            if has_noise:
                particle_normals(key, <uint64_t>i, m, &z[0])
            for a in range(d):
                acc = 0.0
                for b in range(d):
                    acc = acc + euler[a, b] * x[i, b]
                acc = acc + shift[a]
                if has_noise:
                    for b in range(m):
                        acc = acc + noise[a, b] * z[b]
                o[i, a] = acc
                # NaN fails the comparison as well.
                if first < 0 and not (fabs(acc) <= bound):
                    first = i
    return out, first


def weighted_mean(const double[:, ::1] y, const double[::1] w):
    cdef Py_ssize_t n = y.shape[0], i
    cdef int ds = y.shape[1], k
    cdef cnp.ndarray[double, ndim=1] g = np.zeros(ds)
    cdef double[::1] gv = g
    cdef double sw = 0.0
    with nogil:
        for i in range(n):
            sw = sw + w[i]
            for k in range(ds):
                gv[k] = gv[k] + w[i] * y[i, k]
        for k in range(ds):
            gv[k] = gv[k] / sw
    return g


def tilt_moments(const double[:, ::1] y, const double[::1] w, const double[::1] lam):
    cdef Py_ssize_t n = y.shape[0], i
    cdef int ds = y.shape[1], k, l
    cdef double[::1] s = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] g = np.zeros(ds)
    cdef cnp.ndarray[double, ndim=2] h = np.zeros((ds, ds))
    cdef double[::1] gv = g
    cdef double[:, ::1] hv = h
    cdef double[::1] c = np.empty(ds)
    cdef double m = -INFINITY, acc, p, s0 = 0.0, sw = 0.0, pmax = 0.0
    with nogil:
        for i in range(n):
            acc = 0.0
            for k in range(ds):
                acc = acc + y[i, k] * lam[k]
            s[i] = acc
            if w[i] > 0 and acc > m:
                m = acc
        for i in range(n):
            p = w[i] * exp(s[i] - m)
            s[i] = p
            s0 = s0 + p
            sw = sw + w[i]
            if p > pmax:
                pmax = p
            for k in range(ds):
                gv[k] = gv[k] + p * y[i, k]
        for k in range(ds):
            gv[k] = gv[k] / s0
        for i in range(n):
            for k in range(ds):
                c[k] = y[i, k] - gv[k]
            for k in range(ds):
                for l in range(k, ds):
                    hv[k, l] = hv[k, l] + s[i] * c[k] * c[l]
        for k in range(ds):
            for l in range(k, ds):
                hv[k, l] = hv[k, l] / s0
                hv[l, k] = hv[k, l]
    return float(m + log(s0) - log(sw)), g, h, float(pmax / s0)


def tilted_weights(const double[:, ::1] y, const double[::1] w, const double[::1] lam):
    cdef Py_ssize_t n = y.shape[0], i
    cdef int ds = y.shape[1], k
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n)
    cdef double[::1] o = out
    cdef double m = -INFINITY, acc, s0 = 0.0
    with nogil:
        for i in range(n):
            acc = 0.0
            for k in range(ds):
                acc = acc + y[i, k] * lam[k]
            o[i] = acc
            if w[i] > 0 and acc > m:
                m = acc
        for i in range(n):
            o[i] = w[i] * exp(o[i] - m)
            s0 = s0 + o[i]
        for i in range(n):
            o[i] = o[i] / s0
    return out


def log_mean_exp(const double[::1] s, const double[::1] w):
    cdef Py_ssize_t n = s.shape[0], i
    cdef double m = -INFINITY, p, s0 = 0.0, s2 = 0.0, sw = 0.0
    with nogil:
        for i in range(n):
            if w[i] > 0 and s[i] > m:
                m = s[i]
        for i in range(n):
            p = w[i] * exp(s[i] - m)
            s0 = s0 + p
            s2 = s2 + p * p
            sw = sw + w[i]
    return float(m + log(s0) - log(sw)), float(s0 * s0 / s2)


def systematic_resample(const double[::1] w, double u):
    cdef Py_ssize_t n = w.shape[0], i, j = 0
    cdef double[::1] c = np.empty(n)
    cdef cnp.ndarray[int64_t, ndim=1] idx = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] iv = idx
    cdef double acc = 0.0, total, pos
    with nogil:
        for i in range(n):
            acc = acc + w[i]
            c[i] = acc
        total = c[n - 1]
        for i in range(n):
            pos = (u + i) / n * total
            while j < n - 1 and c[j] <= pos:
                j += 1
            iv[i] = j
    return idx
