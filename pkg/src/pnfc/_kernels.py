"""Numba kernels for per-pixel temporal statistics.

Each pixel is accumulated frame by frame in a fixed order, and rows are
distributed across threads, so results are bit-identical for any thread
count.
"""

import os

import numba
import numpy as np

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is too old for numba and only produces warnings
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@numba.njit(parallel=True, cache=True)
def temporal_stats(frames):
    n, h, w = frames.shape
    mean = np.empty((h, w))
    lag1 = np.empty((h, w))
    autocov = np.empty((h, w))
    var = np.empty((h, w))
    for r in numba.prange(h):
        s = np.zeros(w)
        for k in range(n):
            for c in range(w):
                s[c] += frames[k, r, c]
        for c in range(w):
            s[c] /= n
        p = np.zeros(w)
        a = np.zeros(w)
        v = np.zeros(w)
        for k in range(n - 1):
            for c in range(w):
                x0 = frames[k, r, c]
                x1 = frames[k + 1, r, c]
                d0 = x0 - s[c]
                d1 = x1 - s[c]
                p[c] += x0 * x1
                a[c] += d0 * d1
                v[c] += d0 * d0
        for c in range(w):
            dl = frames[n - 1, r, c] - s[c]
            v[c] += dl * dl
            mean[r, c] = s[c]
            lag1[r, c] = p[c] / (n - 1)
            autocov[r, c] = a[c] / (n - 1)
            var[r, c] = v[c] / (n - 1)
    return mean, lag1, autocov, var
