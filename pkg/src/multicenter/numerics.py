"""Seeded random streams and the dense kernels the rest of the package uses.

Matrices are plain 2-D ``float64`` numpy arrays. Every kernel exists twice:
a loop version compiled with numba and a vectorized numpy version. Both
produce identical bits; ``MULTICENTER_NUMBA=0`` selects the numpy one.
"""
import math

import numpy as np
from scipy.special import betaincinv

from ._accel import USE_NUMBA, njit

MASK32 = 0xFFFFFFFF
MASK64 = 0xFFFFFFFFFFFFFFFF

# Philox4x32-10 constants
_PHILOX_M0 = 0xD2511F53
_PHILOX_M1 = 0xCD9E8D57
_PHILOX_W0 = 0x9E3779B9
_PHILOX_W1 = 0xBB67AE85

_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / 9007199254740992.0


# --------------------------------------------------------------------------
# Philox4x32-10 block function
# --------------------------------------------------------------------------

@njit
def _philox_loop(key, stream, start, nblocks):
    out = np.empty((nblocks, 4), dtype=np.uint64)
    mask = np.uint64(0xFFFFFFFF)
    s32 = np.uint64(32)
    m0 = np.uint64(0xD2511F53)
    m1 = np.uint64(0xCD9E8D57)
    w0 = np.uint64(0x9E3779B9)
    w1 = np.uint64(0xBB67AE85)
    k0_init = key & mask
    k1_init = key >> s32
    c2_init = stream & mask
    c3_init = stream >> s32
    for b in range(nblocks):
        ctr = start + np.uint64(b)
        c0 = ctr & mask
        c1 = ctr >> s32
        c2 = c2_init
        c3 = c3_init
        k0 = k0_init
        k1 = k1_init
        for _ in range(10):
            p0 = m0 * c0
            p1 = m1 * c2
            n0 = (p1 >> s32) ^ c1 ^ k0
            n1 = p1 & mask
            n2 = (p0 >> s32) ^ c3 ^ k1
            n3 = p0 & mask
            c0, c1, c2, c3 = n0, n1, n2, n3
            k0 = (k0 + w0) & mask
            k1 = (k1 + w1) & mask
        out[b, 0] = c0
        out[b, 1] = c1
        out[b, 2] = c2
        out[b, 3] = c3
    return out


def _philox_numpy(key, stream, start, nblocks):
    mask = np.uint64(MASK32)
    s32 = np.uint64(32)
    key = np.uint64(key)
    stream = np.uint64(stream)
    ctr = np.uint64(start) + np.arange(nblocks, dtype=np.uint64)
    c0 = ctr & mask
    c1 = ctr >> s32
    c2 = np.full(nblocks, stream & mask, dtype=np.uint64)
    c3 = np.full(nblocks, stream >> s32, dtype=np.uint64)
    k0 = key & mask
    k1 = key >> s32
    m0, m1 = np.uint64(_PHILOX_M0), np.uint64(_PHILOX_M1)
    for _ in range(10):
        p0 = m0 * c0
        p1 = m1 * c2
        c0, c1, c2, c3 = (p1 >> s32) ^ c1 ^ k0, p1 & mask, (p0 >> s32) ^ c3 ^ k1, p0 & mask
        k0 = (k0 + np.uint64(_PHILOX_W0)) & mask
        k1 = (k1 + np.uint64(_PHILOX_W1)) & mask
    return np.stack([c0, c1, c2, c3], axis=1)


def philox4x32(key, stream, start, nblocks):
    """Philox4x32-10 output words for counters ``start .. start+nblocks-1``.

    The 128-bit counter is ``(block_lo, block_hi, stream_lo, stream_hi)`` and
    the 64-bit key is the seed. Returns an ``(nblocks, 4)`` uint64 array of
    32-bit words.
    """
    args = (np.uint64(key & MASK64), np.uint64(stream & MASK64), np.uint64(start & MASK64), int(nblocks))
    if USE_NUMBA:
        return _philox_loop(*args)
    return _philox_numpy(*args)


# --------------------------------------------------------------------------
# Box-Muller
# --------------------------------------------------------------------------

@njit
def _box_muller_loop(words):
    nblocks = words.shape[0]
    radius = np.empty(nblocks)
    theta = np.empty(nblocks)
    s5 = np.uint64(5)
    s6 = np.uint64(6)
    for b in range(nblocks):
        a = float(words[b, 0] >> s5) * 67108864.0 + float(words[b, 1] >> s6)
        c = float(words[b, 2] >> s5) * 67108864.0 + float(words[b, 3] >> s6)
        radius[b] = math.sqrt(-2.0 * math.log((a + 1.0) * 1.1102230246251565e-16))
        theta[b] = 6.283185307179586 * (c * 1.1102230246251565e-16)
    out = np.empty(2 * nblocks)
    # cos and sin in separate loops: a fused sincos call can differ from sin
    # in the last bit, which would break parity with the numpy path
    for b in range(nblocks):
        out[2 * b] = radius[b] * math.cos(theta[b])
    for b in range(nblocks):
        out[2 * b + 1] = radius[b] * math.sin(theta[b])
    return out


def _libm(fn, arr):
    # numpy's SIMD log differs from libm in the last ulp; route through math
    # so both backends share bits.
    flat = np.fromiter(map(fn, arr.ravel().tolist()), dtype=np.float64, count=arr.size)
    return flat.reshape(arr.shape)


def _uniform53(hi, lo):
    return (hi >> np.uint64(5)).astype(np.float64) * 67108864.0 + (lo >> np.uint64(6)).astype(np.float64)


def _box_muller_numpy(words):
    u1 = (_uniform53(words[:, 0], words[:, 1]) + 1.0) * _INV_2_53
    u2 = _uniform53(words[:, 2], words[:, 3]) * _INV_2_53
    r = np.sqrt(-2.0 * _libm(math.log, u1))
    theta = _TWO_PI * u2
    out = np.empty(2 * words.shape[0])
    out[0::2] = r * _libm(math.cos, theta)
    out[1::2] = r * _libm(math.sin, theta)
    return out


def _box_muller(words):
    if USE_NUMBA:
        return _box_muller_loop(words)
    return _box_muller_numpy(words)


class RngStream:
    """Counter-based random stream keyed by ``(seed, stream)``.

    Each stream owns 2**64 Philox blocks, so streams with distinct ids never
    overlap. A stream is single-owner: derive sub-streams with :meth:`spawn`
    rather than sharing one across threads.
    """

    def __init__(self, seed, stream=0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = int(seed) & MASK64
        self.stream = int(stream) & MASK64
        self.counter = 0

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream}, counter={self.counter})"

    def spawn(self, stream_id):
        return RngStream(self.seed, stream_id)

    def _words(self, nblocks):
        words = philox4x32(self.seed, self.stream, self.counter, nblocks)
        self.counter += nblocks
        return words

    def standard_normal(self, n):
        if n < 0:
            raise ValueError(f"n must be >= 0, got {n}")
        if n == 0:
            return np.empty(0)
        return _box_muller(self._words((n + 1) // 2))[:n]

    def uniform(self, n):
        """``n`` uniforms on [0, 1) with 53 random bits each."""
        if n < 0:
            raise ValueError(f"n must be >= 0, got {n}")
        words = self._words((n + 1) // 2)
        out = np.empty(2 * words.shape[0])
        out[0::2] = _uniform53(words[:, 0], words[:, 1]) * _INV_2_53
        out[1::2] = _uniform53(words[:, 2], words[:, 3]) * _INV_2_53
        return out[:n]

    def permutation(self, n):
        return np.argsort(self.uniform(n), kind="stable")

    def beta(self, a, b):
        """One Beta(a, b) draw by inverse CDF of a single uniform."""
        return float(betaincinv(a, b, self.uniform(1)[0]))


def standard_normal(rng, n):
    return rng.standard_normal(n)


# --------------------------------------------------------------------------
# gemm
# --------------------------------------------------------------------------

@njit
def _gemm_loop(a, b):
    n, m = a.shape
    p = b.shape[1]
    out = np.zeros((n, p))
    for i in range(n):
        for k in range(m):
            aik = a[i, k]
            for j in range(p):
                out[i, j] += aik * b[k, j]
    return out


def _gemm_numpy(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += np.multiply.outer(a[:, k], b[k, :])
    return out


def as_mat(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def gemm(a, b):
    """Matrix product with a fixed left-to-right sum over the inner index.

    >>> gemm(np.array([[1., 2.], [3., 4.]]), np.array([[1.], [1.]]))
    array([[3.],
           [7.]])
    """
    a = as_mat(a, "left operand")
    b = as_mat(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"gemm shape mismatch: {a.shape} @ {b.shape}")
    if USE_NUMBA:
        return _gemm_loop(np.ascontiguousarray(a), np.ascontiguousarray(b))
    return _gemm_numpy(a, b)


# --------------------------------------------------------------------------
# row-wise softmax cross-entropy against soft targets
# --------------------------------------------------------------------------

@njit
def _softmax_xent_loop(z, t):
    n, s = z.shape
    probs = np.empty((n, s))
    losses = np.empty(n)
    for i in range(n):
        m = z[i, 0]
        for j in range(1, s):
            if z[i, j] > m:
                m = z[i, j]
        total = 0.0
        for j in range(s):
            e = math.exp(z[i, j] - m)
            probs[i, j] = e
            total += e
        lse = m + math.log(total)
        loss = 0.0
        for j in range(s):
            probs[i, j] = probs[i, j] / total
            loss += t[i, j] * (lse - z[i, j])
        losses[i] = loss
    return losses, probs


def _softmax_xent_numpy(z, t):
    m = z.max(axis=1, keepdims=True)
    e = _libm(math.exp, z - m)
    total = np.cumsum(e, axis=1)[:, -1:]
    lse = m + _libm(math.log, total)
    losses = np.cumsum(t * (lse - z), axis=1)[:, -1]
    return losses, e / total


def softmax_xent(z, t):
    """Per-row ``-sum(t * log softmax(z))`` and the softmax itself.

    ``log p`` is taken as logsumexp minus logit, never the log of a stored
    probability.
    """
    z = as_mat(z, "logits")
    t = as_mat(t, "targets")
    if z.shape != t.shape:
        raise ValueError(f"logits {z.shape} and targets {t.shape} differ in shape")
    if z.shape[1] == 0:
        raise ValueError("need at least one logit per row")
    if USE_NUMBA:
        return _softmax_xent_loop(np.ascontiguousarray(z), np.ascontiguousarray(t))
    return _softmax_xent_numpy(z, t)
