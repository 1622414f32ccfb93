"""Pure-Python (numpy) versions of the compiled kernels."""
import numpy as np

# pairs processed per vectorised DP sweep
_CHUNK = 1 << 16


def dtw(a, b, band=-1):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, m = len(a), len(b)
    inf = float("inf")
    prev = [inf] * m
    for i in range(n):
        cur = [inf] * m
        lo, hi = 0, m
        if band >= 0:
            lo, hi = max(0, i - band), min(m, i + band + 1)
        ai = float(a[i])
        for j in range(lo, hi):
            c = abs(ai - float(b[j]))
            if i == 0 and j == 0:
                cur[j] = c
                continue
            best = inf
            if i > 0 and prev[j] < best:
                best = prev[j]
            if j > 0 and cur[j - 1] < best:
                best = cur[j - 1]
            if i > 0 and j > 0 and prev[j - 1] < best:
                best = prev[j - 1]
            cur[j] = c + best
        prev = cur
    return prev[m - 1]


def _dtw_batch(A, B, band):
    """DTW for row-aligned batches of equal-length series, shape (P, L)."""
    P, L = A.shape
    inf = np.full(P, np.inf)
    prev = [inf] * L
    for i in range(L):
        cur = [inf] * L
        lo, hi = 0, L
        if band >= 0:
            lo, hi = max(0, i - band), min(L, i + band + 1)
        ai = A[:, i]
        for j in range(lo, hi):
            c = np.abs(ai - B[:, j])
            if i == 0 and j == 0:
                cur[j] = c
                continue
            if i > 0 and j > 0:
                best = np.minimum(np.minimum(prev[j], cur[j - 1]), prev[j - 1])
            elif i > 0:
                best = prev[j]
            else:
                best = cur[j - 1]
            cur[j] = c + best
        prev = cur
    return prev[L - 1]


def dtw_cost_matrices(signals, delta, band=-1):
    signals = np.asarray(signals, dtype=np.float64)
    n, length = signals.shape
    steps = length - delta + 1
    out = np.zeros((steps, n, n))
    iu, ju = np.triu_indices(n, k=1)
    if len(iu) == 0 or steps <= 0:
        return out
    # windows[s, i] is the slice of stock i ending at step s
    windows = np.lib.stride_tricks.sliding_window_view(signals, delta, axis=1)
    windows = windows.transpose(1, 0, 2)
    s_idx = np.repeat(np.arange(steps), len(iu))
    i_idx = np.tile(iu, steps)
    j_idx = np.tile(ju, steps)
    for start in range(0, len(s_idx), _CHUNK):
        sl = slice(start, start + _CHUNK)
        c = _dtw_batch(windows[s_idx[sl], i_idx[sl]], windows[s_idx[sl], j_idx[sl]], band)
        out[s_idx[sl], i_idx[sl], j_idx[sl]] = c
        out[s_idx[sl], j_idx[sl], i_idx[sl]] = c
    return out


def fft_radix2(x):
    v = np.array(x, dtype=np.complex128)
    n = len(v)
    if n & (n - 1):
        raise ValueError("length must be a power of two")
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((np.arange(n) >> b) & 1) << (bits - 1 - b)
    v = v[rev]
    length = 2
    while length <= n:
        half = length // 2
        w = np.exp(-2j * np.pi * np.arange(half) / length)
        blocks = v.reshape(-1, length)
        u = blocks[:, :half].copy()
        t = w * blocks[:, half:]
        blocks[:, :half] = u + t
        blocks[:, half:] = u - t
        v = blocks.reshape(-1)
        length <<= 1
    return v
