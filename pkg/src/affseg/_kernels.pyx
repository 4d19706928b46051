# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled clustering kernels.

Each edge's score sum is produced by exactly one thread, iterating the
driver node's voxels in ascending order, so results do not depend on the
thread count.
"""
import numpy as np

from cython.parallel cimport prange
from libc.math cimport isnan
from libc.stdint cimport int64_t


cdef inline bint _in_range(const int64_t[::1] arr, int64_t lo, int64_t hi, int64_t key) noexcept nogil:
    cdef int64_t end = hi
    cdef int64_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    return lo < end and arr[lo] == key


def edge_pair_sums(const int64_t[::1] ea, const int64_t[::1] eb,
                   const int64_t[::1] node_ptr, const int64_t[::1] node_vox,
                   const int64_t[::1] vox_ptr, const int64_t[::1] vox_node,
                   const int64_t[:, ::1] nbr, const double[:, ::1] fused,
                   int threads=1):
    cdef Py_ssize_t E = ea.shape[0]
    sums_arr = np.zeros(E, dtype=np.float64)
    counts_arr = np.zeros(E, dtype=np.int64)
    cdef double[::1] sums = sums_arr
    cdef int64_t[::1] counts = counts_arr
    cdef Py_ssize_t e
    cdef int64_t x, y, t, i, v, u, d, cnt
    cdef double acc, f
    cdef int nthreads = threads if threads > 0 else 1
    if E == 0:
        return sums_arr, counts_arr
    for e in prange(E, nogil=True, num_threads=nthreads, schedule="dynamic", chunksize=256):
        x = ea[e]
        y = eb[e]
        if node_ptr[y + 1] - node_ptr[y] < node_ptr[x + 1] - node_ptr[x]:
            t = x
            x = y
            y = t
        acc = 0.0
        cnt = 0
        for i in range(node_ptr[x], node_ptr[x + 1]):
            v = node_vox[i]
            for d in range(6):
                u = nbr[v, d]
                if u < 0:
                    continue
                f = fused[v, d]
                if isnan(f):
                    continue
                if _in_range(vox_node, vox_ptr[u], vox_ptr[u + 1], y):
                    acc = acc + f
                    cnt = cnt + 1
        sums[e] = acc
        counts[e] = cnt
    return sums_arr, counts_arr


def best_neighbors(Py_ssize_t n, const int64_t[::1] ea, const int64_t[::1] eb,
                   const double[::1] aff, double threshold):
    targets_arr = np.arange(n, dtype=np.int64)
    best_arr = np.full(n, -np.inf)
    cdef int64_t[::1] targets = targets_arr
    cdef double[::1] best = best_arr
    cdef Py_ssize_t e
    cdef int64_t a, b
    cdef double w
    with nogil:
        for e in range(ea.shape[0]):
            w = aff[e]
            if not w > threshold:
                continue
            a = ea[e]
            b = eb[e]
            if w > best[a] or (w == best[a] and b < targets[a]):
                best[a] = w
                targets[a] = b
            if w > best[b] or (w == best[b] and a < targets[b]):
                best[b] = w
                targets[b] = a
    return targets_arr


cdef inline int64_t _find(int64_t[::1] parent, int64_t v) noexcept nogil:
    cdef int64_t root = v, nxt
    while parent[root] != root:
        root = parent[root]
    while parent[v] != root:
        nxt = parent[v]
        parent[v] = root
        v = nxt
    return root


def components(Py_ssize_t n, a, b):
    """Union-find; every vertex is labelled with its component's minimum index."""
    cdef const int64_t[::1] av = np.ascontiguousarray(a, dtype=np.int64)
    cdef const int64_t[::1] bv = np.ascontiguousarray(b, dtype=np.int64)
    parent_arr = np.arange(n, dtype=np.int64)
    cdef int64_t[::1] parent = parent_arr
    cdef Py_ssize_t e, i
    cdef int64_t ra, rb
    with nogil:
        for e in range(av.shape[0]):
            ra = _find(parent, av[e])
            rb = _find(parent, bv[e])
            if ra < rb:
                parent[rb] = ra
            elif rb < ra:
                parent[ra] = rb
        for i in range(n):
            parent[i] = _find(parent, i)
    return parent_arr
