"""Pure-Python implementations of the hot kernels.

Semantically identical to the compiled variants in ``_core.pyx``. Selected at
import time when the extension is unavailable or CYCLAB_PURE=1 is set.
"""

import numpy as np

BACKEND = "python"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def checksum_row(row):
    """Word-level FNV-1a over the raw float64 bits of a frame row."""
    h = _FNV_OFFSET
    for w in row.view(np.uint64):
        h = ((h ^ int(w)) * _FNV_PRIME) & _MASK64
    return h


def pid_step(kp, ki, kd, setpoint, clamp, integral, prev_err, measurement):
    """One discrete PID update. Returns (u, integral', prev_err')."""
    e = setpoint - measurement
    integral += e
    if integral > clamp:
        integral = clamp
    elif integral < -clamp:
        integral = -clamp
    u = kp * e + ki * integral + kd * (e - prev_err)
    return u, integral, e


def plant_step(a, b, x, u, d):
    """First-order plant update x' = a*x + b*u + d."""
    return a * x + b * u + d


def try_read_cycle(stamps, frames, checksums, cycle, mask, out):
    """Seqlock read of the slot holding `cycle`.

    Returns 1 and fills `out` when the transaction validates (stamp equals
    `cycle` both before and after the copy), else 0. A checksum mismatch on a
    validated read returns -1 (protocol violation, should never happen).
    """
    pos = cycle & mask
    begin = stamps[pos]
    if begin != cycle:
        return 0
    out[:] = frames[pos]
    crc = checksums[pos]
    if stamps[pos] != cycle:
        return 0
    if checksum_row(out) != crc:
        return -1
    return 1


def stress_reads(stamps, frames, checksums, produced_ref, mask, n, seed):
    """Hammer transactional reads of recent cycles while a producer runs.

    Returns (valid, invalid, mismatch) counts over `n` read attempts. Cycle
    choice uses a xorshift64 stream so both backends draw identically.
    """
    out = np.empty(frames.shape[1])
    state = seed | 1
    valid = invalid = mismatch = 0
    capacity = mask + 1
    for _ in range(n):
        state ^= (state << 13) & _MASK64
        state ^= state >> 7
        state ^= (state << 17) & _MASK64
        produced = produced_ref[0]
        if produced < 1:
            continue
        span = min(produced, 2 * capacity)
        cycle = produced - (state % span)
        r = try_read_cycle(stamps, frames, checksums, cycle, mask, out)
        if r == 1:
            valid += 1
        elif r == 0:
            invalid += 1
        else:
            mismatch += 1
    return valid, invalid, mismatch
