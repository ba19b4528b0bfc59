"""Hot loops of the simulator: fan-out routing, keyed counting, loss hashing.

Each kernel exists twice, a numba ``@njit`` loop and a vectorised numpy
version, and both must return identical arrays. The numba path is used when
numba imports and ``CUBETRADE_DISABLE_NUMBA`` is unset (or ``0``).
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba installed
    numba = None

_flag = os.environ.get("CUBETRADE_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = numba is not None and _flag in ("", "0", "false", "no")

# numpy path materialises a (chunk x agreement-rows) mask; bound its size
_FANOUT_CHUNK_CELLS = 1 << 22

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


# --------------------------------------------------------------------------
# fan-out: one delivery per (message, agreement row) match
# --------------------------------------------------------------------------

def _fanout_numpy(msg_prod, msg_topic, msg_ts, ag_prod, ag_topic, ag_start, ag_end):
    n_msg = msg_prod.shape[0]
    n_rows = ag_prod.shape[0]
    if n_msg == 0 or n_rows == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    step = max(1, _FANOUT_CHUNK_CELLS // n_rows)
    msg_parts, row_parts = [], []
    for lo in range(0, n_msg, step):
        hi = min(lo + step, n_msg)
        p = msg_prod[lo:hi, None]
        t = msg_topic[lo:hi, None]
        ts = msg_ts[lo:hi, None]
        mask = (p == ag_prod) & (t == ag_topic) & (ts >= ag_start) & (ts < ag_end)
        mi, ri = np.nonzero(mask)
        msg_parts.append(mi.astype(np.int64) + lo)
        row_parts.append(ri.astype(np.int64))
    return np.concatenate(msg_parts), np.concatenate(row_parts)


def _fanout_loop(msg_prod, msg_topic, msg_ts, ag_prod, ag_topic, ag_start, ag_end):
    n_msg = msg_prod.shape[0]
    n_rows = ag_prod.shape[0]
    total = 0
    for i in range(n_msg):
        for r in range(n_rows):
            if (msg_prod[i] == ag_prod[r] and msg_topic[i] == ag_topic[r]
                    and ag_start[r] <= msg_ts[i] and msg_ts[i] < ag_end[r]):
                total += 1
    out_msg = np.empty(total, np.int64)
    out_row = np.empty(total, np.int64)
    k = 0
    for i in range(n_msg):
        for r in range(n_rows):
            if (msg_prod[i] == ag_prod[r] and msg_topic[i] == ag_topic[r]
                    and ag_start[r] <= msg_ts[i] and msg_ts[i] < ag_end[r]):
                out_msg[k] = i
                out_row[k] = r
                k += 1
    return out_msg, out_row


# --------------------------------------------------------------------------
# keyed counting over a half-open timestamp range
# --------------------------------------------------------------------------

def _count_keys_numpy(codes, ts, start, end):
    sel = codes[(ts >= start) & (ts < end)]
    if sel.shape[0] == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    keys, counts = np.unique(sel, return_counts=True)
    return keys.astype(np.int64), counts.astype(np.int64)


def _count_keys_loop(codes, ts, start, end):
    n = codes.shape[0]
    buf = np.empty(n, np.int64)
    m = 0
    lo, hi = 0, -1
    for i in range(n):
        if start <= ts[i] and ts[i] < end:
            c = codes[i]
            if m == 0 or c < lo:
                lo = c
            if m == 0 or c > hi:
                hi = c
            buf[m] = c
            m += 1
    if m == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    span = hi - lo + 1
    if span <= 4 * m + 65536:
        # dense code range: histogram instead of sorting
        hist = np.zeros(span, np.int64)
        for i in range(m):
            hist[buf[i] - lo] += 1
        u = 0
        for j in range(span):
            if hist[j]:
                u += 1
        keys = np.empty(u, np.int64)
        counts = np.empty(u, np.int64)
        u = 0
        for j in range(span):
            if hist[j]:
                keys[u] = j + lo
                counts[u] = hist[j]
                u += 1
        return keys, counts
    sel = np.sort(buf[:m])
    keys = np.empty(m, np.int64)
    counts = np.empty(m, np.int64)
    u = -1
    for i in range(m):
        if u < 0 or sel[i] != keys[u]:
            u += 1
            keys[u] = sel[i]
            counts[u] = 1
        else:
            counts[u] += 1
    return keys[:u + 1].copy(), counts[:u + 1].copy()


# --------------------------------------------------------------------------
# deterministic per-delivery loss: splitmix64(seed, message, consumer)
# --------------------------------------------------------------------------

def _mix_numpy(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _delivery_hash_numpy(seed, msg_ids, consumer_codes):
    h = _mix_numpy(np.full(msg_ids.shape[0], seed, np.uint64))
    h = _mix_numpy(h ^ msg_ids.astype(np.uint64))
    return _mix_numpy(h ^ consumer_codes.astype(np.uint64))


def _mix_scalar(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _delivery_hash_loop(seed, msg_ids, consumer_codes):
    n = msg_ids.shape[0]
    out = np.empty(n, np.uint64)
    s = _mix_scalar(np.uint64(seed))
    for i in range(n):
        h = _mix_scalar(s ^ np.uint64(msg_ids[i]))
        out[i] = _mix_scalar(h ^ np.uint64(consumer_codes[i]))
    return out


if USE_NUMBA:
    _mix_scalar = numba.njit(cache=True)(_mix_scalar)
    _fanout_numba = numba.njit(cache=True)(_fanout_loop)
    _count_keys_numba = numba.njit(cache=True)(_count_keys_loop)
    _delivery_hash_numba = numba.njit(cache=True)(_delivery_hash_loop)
else:
    _fanout_numba = _fanout_loop
    _count_keys_numba = _count_keys_loop

    def _delivery_hash_numba(seed, msg_ids, consumer_codes):
        # uncompiled numpy scalars warn on the intended 64-bit wraparound
        with np.errstate(over="ignore"):
            return _delivery_hash_loop(seed, msg_ids, consumer_codes)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def fanout(msg_prod, msg_topic, msg_ts, ag_prod, ag_topic, ag_start, ag_end):
    """Match messages against agreement rows.

    Returns ``(message_index, row_index)`` pairs, ordered by message then row,
    for every row whose producer and topic match and whose ``[start, end)``
    contains the message timestamp.
    """
    args = tuple(_i64(a) for a in (msg_prod, msg_topic, msg_ts, ag_prod, ag_topic, ag_start, ag_end))
    if USE_NUMBA:
        return _fanout_numba(*args)
    return _fanout_numpy(*args)


def count_keys(codes, ts, start: int, end: int):
    """Sorted distinct ``codes`` with ``start <= ts < end`` and their multiplicities."""
    codes, ts = _i64(codes), _i64(ts)
    if USE_NUMBA:
        return _count_keys_numba(codes, ts, np.int64(start), np.int64(end))
    return _count_keys_numpy(codes, ts, start, end)


def delivery_hash(seed: int, msg_ids, consumer_codes):
    """Uniform 64-bit hash per delivery, stable across runs and platforms."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    msg_ids, consumer_codes = _i64(msg_ids), _i64(consumer_codes)
    if USE_NUMBA:
        return _delivery_hash_numba(np.uint64(seed), msg_ids, consumer_codes)
    return _delivery_hash_numpy(np.uint64(seed), msg_ids, consumer_codes)
