"""Pure numpy implementations of the clustering kernels.

Used when the compiled extension is unavailable. Results are bit-identical
to ``_kernels``: per-edge score sums are accumulated in the same order
(driver node's voxels ascending, then direction) by ``np.bincount``, which
adds sequentially.
"""
import numpy as np


def edge_pair_sums(ea, eb, node_ptr, node_vox, vox_ptr, vox_node, nbr, fused, threads=1):
    n = len(node_ptr) - 1
    E = len(ea)
    if E == 0 or len(node_vox) == 0:
        return np.zeros(E), np.zeros(E, dtype=np.int64)
    deg = np.diff(node_ptr)
    ent_node = np.repeat(np.arange(n, dtype=np.int64), deg)
    m = len(node_vox)

    i = np.repeat(np.arange(m, dtype=np.int64), 6)
    d = np.tile(np.arange(6, dtype=np.int64), m)
    v = node_vox[i]
    u = nbr[v, d]
    f = fused[v, d]
    keep = (u >= 0) & ~np.isnan(f)
    i, d, u, f = i[keep], d[keep], u[keep], f[keep]

    occ = vox_ptr[u + 1] - vox_ptr[u]
    rep = np.repeat(np.arange(len(u), dtype=np.int64), occ)
    first = np.cumsum(occ) - occ
    y = vox_node[np.repeat(vox_ptr[u], occ) + (np.arange(len(rep), dtype=np.int64) - np.repeat(first, occ))]
    i, d, f = i[rep], d[rep], f[rep]
    x = ent_node[i]

    keep = x != y
    x, y, i, d, f = x[keep], y[keep], i[keep], d[keep], f[keep]
    lo, hi = np.minimum(x, y), np.maximum(x, y)
    ekeys = ea * n + eb
    qk = lo * n + hi
    pos = np.minimum(np.searchsorted(ekeys, qk), E - 1)
    hit = ekeys[pos] == qk
    driver = np.where(deg[ea] <= deg[eb], ea, eb)
    hit &= driver[pos] == x
    eidx, i, d, f = pos[hit], i[hit], d[hit], f[hit]

    order = np.lexsort((d, i, eidx))
    sums = np.bincount(eidx[order], weights=f[order], minlength=E)
    counts = np.bincount(eidx, minlength=E).astype(np.int64)
    return sums, counts


def best_neighbors(n, ea, eb, aff, threshold):
    targets = np.arange(n, dtype=np.int64)
    sel = aff > threshold
    if not np.any(sel):
        return targets
    src = np.concatenate([ea[sel], eb[sel]])
    dst = np.concatenate([eb[sel], ea[sel]])
    w = np.concatenate([aff[sel], aff[sel]])
    order = np.lexsort((dst, -w, src))
    src, dst = src[order], dst[order]
    first = np.ones(len(src), dtype=bool)
    first[1:] = src[1:] != src[:-1]
    targets[src[first]] = dst[first]
    return targets


def components(n, a, b):
    """Label every vertex with the smallest vertex index in its component."""
    labels = np.arange(n, dtype=np.int64)
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if len(a) == 0:
        return labels
    while True:
        la, lb = labels[a], labels[b]
        if np.array_equal(la, lb):
            return labels
        lo = np.minimum(la, lb)
        hooked = labels.copy()
        np.minimum.at(hooked, la, lo)
        np.minimum.at(hooked, lb, lo)
        while True:
            jumped = hooked[hooked]
            if np.array_equal(jumped, hooked):
                break
            hooked = jumped
        labels = hooked
