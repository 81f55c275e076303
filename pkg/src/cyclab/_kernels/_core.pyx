# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: frame checksum, PID/plant recurrences, seqlock reads.

Mirrors ``fallback.py`` exactly; the stress loop additionally releases the GIL
so reader threads genuinely overlap a Python producer.
"""

import numpy as np

cimport cython
from libc.stdint cimport int64_t, uint64_t

cdef extern from *:
    """
    #include <stdint.h>
    /* Seqlock reads race with the producer by design; the stamp loads must
       be real acquire loads and the re-check must not be elided or hoisted
       across the frame copy. */
    static inline int64_t acquire_load_i64(const int64_t* p) {
        return __atomic_load_n(p, __ATOMIC_ACQUIRE);
    }
    static inline uint64_t acquire_load_u64(const uint64_t* p) {
        return __atomic_load_n(p, __ATOMIC_ACQUIRE);
    }
    static inline void acquire_fence(void) {
        __atomic_thread_fence(__ATOMIC_ACQUIRE);
    }
    """
    int64_t acquire_load_i64(const int64_t* p) noexcept nogil
    uint64_t acquire_load_u64(const uint64_t* p) noexcept nogil
    void acquire_fence() noexcept nogil

BACKEND = "cython"

cdef uint64_t FNV_OFFSET = 0xCBF29CE484222325UL
cdef uint64_t FNV_PRIME = 0x100000001B3UL


cdef inline uint64_t _checksum(const double* row, Py_ssize_t n) noexcept nogil:
    cdef uint64_t h = FNV_OFFSET
    cdef const uint64_t* words = <const uint64_t*> row
    cdef Py_ssize_t i
    for i in range(n):
        h = (h ^ words[i]) * FNV_PRIME
    return h


def checksum_row(const double[::1] row):
    """Word-level FNV-1a over the raw float64 bits of a frame row."""
    return _checksum(&row[0], row.shape[0])


def pid_step(double kp, double ki, double kd, double setpoint, double clamp,
             double integral, double prev_err, double measurement):
    """One discrete PID update. Returns (u, integral', prev_err')."""
    cdef double e = setpoint - measurement
    integral += e
    if integral > clamp:
        integral = clamp
    elif integral < -clamp:
        integral = -clamp
    cdef double u = kp * e + ki * integral + kd * (e - prev_err)
    return u, integral, e


def plant_step(double a, double b, double x, double u, double d):
    """First-order plant update x' = a*x + b*u + d."""
    return a * x + b * u + d


cdef inline int _try_read(const int64_t* stamps, const double* frames,
                          const uint64_t* checksums, int64_t cycle,
                          int64_t mask, Py_ssize_t width,
                          double* out) noexcept nogil:
    cdef int64_t pos = cycle & mask
    cdef Py_ssize_t i
    if acquire_load_i64(&stamps[pos]) != cycle:
        return 0
    for i in range(width):
        out[i] = frames[pos * width + i]
    cdef uint64_t crc = acquire_load_u64(&checksums[pos])
    acquire_fence()
    if acquire_load_i64(&stamps[pos]) != cycle:
        return 0
    if _checksum(out, width) != crc:
        return -1
    return 1


def try_read_cycle(const int64_t[::1] stamps, const double[:, ::1] frames,
                   const uint64_t[::1] checksums, int64_t cycle, int64_t mask,
                   double[::1] out):
    """Seqlock read of the slot holding `cycle`; see fallback for semantics."""
    return _try_read(&stamps[0], &frames[0, 0], &checksums[0], cycle, mask,
                     frames.shape[1], &out[0])


def stress_reads(const int64_t[::1] stamps, const double[:, ::1] frames,
                 const uint64_t[::1] checksums, const int64_t[::1] produced_ref,
                 int64_t mask, long n, uint64_t seed):
    """Hammer transactional reads of recent cycles while a producer runs."""
    cdef double[::1] out = np.empty(frames.shape[1])
    cdef uint64_t state = seed | 1
    cdef long valid = 0, invalid = 0, mismatch = 0
    cdef long k
    cdef int64_t produced, cycle, span, capacity = mask + 1
    cdef Py_ssize_t width = frames.shape[1]
    cdef int r
    with nogil:
        for k in range(n):
            state ^= state << 13
            state ^= state >> 7
            state ^= state << 17
            produced = produced_ref[0]
            if produced < 1:
                continue
            span = produced
            if span > 2 * capacity:
                span = 2 * capacity
            cycle = produced - <int64_t> (state % <uint64_t> span)
            r = _try_read(&stamps[0], &frames[0, 0], &checksums[0], cycle,
                          mask, width, &out[0])
            if r == 1:
                valid += 1
            elif r == 0:
                invalid += 1
            else:
                mismatch += 1
    return valid, invalid, mismatch
