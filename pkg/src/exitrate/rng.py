"""Counter-based normal variates.

Every random number is a pure function of ``(seed, stream_id, step, block)``,
so trajectories can be generated in any order, in any batch composition, and
still reproduce bit for bit.  The bit source is Philox4x32-10 (Salmon et al.,
SC'11); normals come from the inverse normal CDF applied to 53-bit uniforms.
"""

import numpy as np
from scipy.special import ndtri

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)


def philox4x32(counter, key, rounds=10):
    """Philox4x32 block function on arrays.

    ``counter`` is a sequence of four uint32-valued arrays (broadcastable),
    ``key`` a pair of uint32 values.  Returns four uint64 arrays holding the
    32-bit output words.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0 = np.uint64(int(key[0]) & 0xFFFFFFFF)
    k1 = np.uint64(int(key[1]) & 0xFFFFFFFF)
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT32) ^ c1 ^ k0,
            p1 & _MASK32,
            (p0 >> _SHIFT32) ^ c3 ^ k1,
            p0 & _MASK32,
        )
    return c0, c1, c2, c3


def _to_unit(hi, lo):
    # 53 bits -> open interval (0, 1), never exactly 0 or 1
    bits = ((hi << _SHIFT32) | lo) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def uniforms(seed, stream_ids, step, count):
    """Uniform(0,1) variates, shape ``(len(stream_ids), count)``.

    ``step`` is a scalar; one Philox call per stream and per pair of outputs.
    """
    stream_ids = np.asarray(stream_ids, dtype=np.uint64)
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    key = (seed & 0xFFFFFFFF, seed >> 32)
    s_lo = stream_ids & _MASK32
    s_hi = stream_ids >> _SHIFT32
    n_blocks = (count + 1) // 2
    out = np.empty((stream_ids.shape[0], 2 * n_blocks))
    step = np.uint64(step)
    for b in range(n_blocks):
        w0, w1, w2, w3 = philox4x32((step, np.uint64(b), s_lo, s_hi), key)
        out[:, 2 * b] = _to_unit(w0, w1)
        out[:, 2 * b + 1] = _to_unit(w2, w3)
    return out[:, :count]


def normals(seed, stream_ids, step, count):
    """Standard normal variates by inverse CDF, shape ``(len(stream_ids), count)``."""
    return ndtri(uniforms(seed, stream_ids, step, count))


def normals_from_uniforms(u):
    return ndtri(u)
