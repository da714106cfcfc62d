"""Compiled inner loops: quantization, INT4 packing and tiled GEMM.

The three GEMM variants share one tiling rule (:func:`tile_rows`) and issue
identical ``np.dot`` calls per output-row tile.  The only difference is how a
tile of weights is obtained: sliced from a float32 matrix, or decoded from
INT8/packed-INT4 codes into a small cache-resident buffer.  Given equal
decoded values, all three therefore produce bit-identical results.

Every GEMM also returns the number of weight bytes it read from storage.
"""

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numba
import numpy as np

_SMALL_BATCH = 16
_SMALL_TILE_BYTES = 128 * 1024
_LARGE_TILE_BYTES = 2 * 1024 * 1024


def tile_rows(m, k, o):
    """Output rows per tile for an (m, k) x (k, o) product."""
    budget = _SMALL_TILE_BYTES if m <= _SMALL_BATCH else _LARGE_TILE_BYTES
    return int(max(1, min(o, budget // (4 * max(k, 1)))))


@numba.njit(cache=True, nogil=True)
def im2col_nhwc(x, kh, kw, stride, pad, ho, wo):
    """Patches of a channels-last batch as rows ordered (kh, kw, c)."""
    n, h, w, c = x.shape
    out = np.zeros((n, ho, wo, kh, kw, c), np.float32)
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                for i in range(kh):
                    y = oy * stride + i - pad
                    if y < 0 or y >= h:
                        continue
                    for j in range(kw):
                        xx = ox * stride + j - pad
                        if xx < 0 or xx >= w:
                            continue
                        for ch in range(c):
                            out[b, oy, ox, i, j, ch] = x[b, y, xx, ch]
    return out.reshape((n * ho * wo, kh * kw * c))


@numba.njit(cache=True, nogil=True)
def absmax(w):
    m = 0.0
    for i in range(w.size):
        a = abs(np.float64(w[i]))
        if a > m:
            m = a
    return m


@numba.njit(cache=True, nogil=True)
def quantize_codes(w, qmax, amax, out):
    """out[i] = clamp(round_half_away(w[i] * qmax / amax), -qmax, qmax)."""
    for i in range(w.size):
        t = np.float64(w[i]) * qmax / amax
        r = np.floor(abs(t) + 0.5)
        if r > qmax:
            r = qmax
        out[i] = np.int8(-r if t < 0 else r)


@numba.njit(cache=True, nogil=True)
def pack_int4(codes, out):
    n = codes.size
    for j in range(out.size):
        lo = np.int32(codes[2 * j]) & 15
        hi = 0
        if 2 * j + 1 < n:
            hi = np.int32(codes[2 * j + 1]) & 15
        out[j] = np.uint8(lo | (hi << 4))


@numba.njit(cache=True, nogil=True)
def unpack_int4(packed, n, out):
    for i in range(n):
        b = np.int32(packed[i >> 1])
        v = (b >> 4) & 15 if i & 1 else b & 15
        out[i] = np.int8(v - 16 if v > 7 else v)


@numba.njit(cache=True, nogil=True)
def _dequant_int4_range(packed, start, count, scale, out):
    # 16-entry value table; whole bytes decode both nibbles at once
    s = np.float32(scale)
    lut = np.empty(16, np.float32)
    for v in range(16):
        lut[v] = np.float32(v - 16 if v > 7 else v) * s
    i = 0
    e = start
    if e & 1 and count > 0:
        out[0] = lut[(np.int32(packed[e >> 1]) >> 4) & 15]
        i = 1
        e += 1
    nb = (count - i) >> 1
    base = e >> 1
    for j in range(nb):
        b = np.int32(packed[base + j])
        out[i + 2 * j] = lut[b & 15]
        out[i + 2 * j + 1] = lut[(b >> 4) & 15]
    i += 2 * nb
    if i < count:
        out[i] = lut[np.int32(packed[(start + i) >> 1]) & 15]


# The GEMMs fill ``out[:, lo:hi]`` where ``lo`` is a multiple of the tile
# size ``t``, so any split of the rows into such ranges (one per worker)
# reproduces the single-threaded tiles exactly.


@numba.njit(cache=True, nogil=True)
def gemm_dense(x, w, t, out, lo, hi):
    k = w.shape[1]
    nbytes = 0
    for r0 in range(lo, hi, t):
        r1 = min(r0 + t, hi)
        out[:, r0:r1] = np.dot(x, w[r0:r1].T)
        nbytes += 4 * (r1 - r0) * k
    return nbytes


@numba.njit(cache=True, nogil=True)
def gemm_int8(x, codes, scale, t, out, lo, hi):
    k = codes.shape[1]
    s = np.float32(scale)
    buf = np.empty((t, k), np.float32)
    nbytes = 0
    for r0 in range(lo, hi, t):
        r1 = min(r0 + t, hi)
        n = r1 - r0
        for i in range(n):
            for j in range(k):
                buf[i, j] = np.float32(codes[r0 + i, j]) * s
        out[:, r0:r1] = np.dot(x, buf[:n].T)
        nbytes += n * k
    return nbytes


@numba.njit(cache=True, nogil=True)
def gemm_int4(x, packed, scale, k, t, out, lo, hi):
    buf = np.empty((t, k), np.float32)
    flat = buf.reshape(t * k)
    nbytes = 0
    for r0 in range(lo, hi, t):
        r1 = min(r0 + t, hi)
        n = r1 - r0
        a = r0 * k
        b = r1 * k
        _dequant_int4_range(packed, a, n * k, scale, flat)
        out[:, r0:r1] = np.dot(x, buf[:n].T)
        # byte j belongs to the tile holding element 2j
        nbytes += (b + 1) // 2 - (a + 1) // 2
    return nbytes


@numba.njit(cache=True, nogil=True)
def dequant_int4_rows(packed, scale, r0, r1, k):
    out = np.empty((r1 - r0) * k, np.float32)
    _dequant_int4_range(packed, r0 * k, (r1 - r0) * k, scale, out)
    return out.reshape((r1 - r0, k))


# -- worker pool over output tiles -------------------------------------------

_threads = 1
_pool = None
_MIN_ROWS_PER_WORKER = 64


def set_threads(n):
    """Number of workers the GEMMs split their output tiles over."""
    global _threads, _pool
    n = max(1, int(n))
    if n != _threads:
        if _pool is not None:
            _pool.shutdown(wait=True)
        _pool = ThreadPoolExecutor(n, thread_name_prefix="aiq-gemm") if n > 1 else None
        _threads = n
    return n


def get_threads():
    return _threads


@contextmanager
def engine_threads(n):
    """Use ``n`` GEMM workers (BLAS itself pinned to one thread) inside the
    block, restoring the previous settings afterwards."""
    from threadpoolctl import threadpool_limits

    prev = _threads
    set_threads(n)
    try:
        with threadpool_limits(limits=1):
            yield n
    finally:
        set_threads(prev)


def run_gemm(kernel, x, args, o, k):
    """Run ``kernel(x, *args, t, out, lo, hi)`` over all ``o`` output rows,
    split into contiguous whole-tile ranges across the worker pool.
    Returns (out, weight bytes read)."""
    m = x.shape[0]
    t = tile_rows(m, k, o)
    out = np.empty((m, o), np.float32)
    tiles = -(-o // t)
    workers = min(_threads, tiles, max(1, o // _MIN_ROWS_PER_WORKER))
    if workers <= 1 or _pool is None:
        return out, kernel(x, *args, t, out, 0, o)
    per = -(-tiles // workers)
    bounds = [(i * per * t, min(o, (i + 1) * per * t)) for i in range(workers) if i * per * t < o]
    futs = [_pool.submit(kernel, x, *args, t, out, lo, hi) for lo, hi in bounds]
    return out, sum(f.result() for f in futs)
