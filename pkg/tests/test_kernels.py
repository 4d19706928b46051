from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from affseg import kernels

from conftest import DisjointSet

BACKENDS = sorted(kernels.BACKENDS)


def test_compiled_backend_built():
    # the package is meant to ship with the extension; the fallback is only a safety net
    assert kernels.DEFAULT_BACKEND == "cython"


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("seed", range(20))
def test_components_match_union_find(backend, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 300))
    m = int(rng.integers(0, 2 * n))
    a, b = rng.integers(0, n, m), rng.integers(0, n, m)
    got = kernels.get(backend).components(n, a.astype(np.int64), b.astype(np.int64))
    ds = DisjointSet(n)
    for x, y in zip(a.tolist(), b.tolist()):
        ds.union(x, y)
    assert got.tolist() == [ds.find(i) for i in range(n)]


@pytest.mark.parametrize("backend", BACKENDS)
def test_best_neighbours(backend):
    k = kernels.get(backend)
    ea = np.array([0, 0, 1, 2], dtype=np.int64)
    eb = np.array([1, 2, 3, 3], dtype=np.int64)
    aff = np.array([0.8, 0.8, 0.5, 0.51])
    assert k.best_neighbors(4, ea, eb, aff, 0.5).tolist() == [1, 0, 0, 2]


@pytest.mark.parametrize("seed", range(10))
def test_best_neighbours_agree(seed):
    rng = np.random.default_rng(seed)
    n = 200
    e = np.unique(np.sort(rng.integers(0, n, (600, 2)), axis=1), axis=0)
    e = e[e[:, 0] != e[:, 1]]
    aff = rng.choice([0.2, 0.5, 0.6, 0.7, 0.9], len(e))
    ea, eb = np.ascontiguousarray(e[:, 0]), np.ascontiguousarray(e[:, 1])
    outs = [kernels.get(b).best_neighbors(n, ea, eb, aff, 0.5) for b in BACKENDS]
    # oracle: scan neighbours in id order, keep first strict maximum
    want = np.arange(n)
    best = np.full(n, 0.5)
    for i in np.lexsort((np.r_[eb, ea], np.r_[ea, eb])):
        src, dst, w = np.r_[ea, eb][i], np.r_[eb, ea][i], np.r_[aff, aff][i]
        if w > best[src]:
            best[src], want[src] = w, dst
    for o in outs:
        assert o.tolist() == want.tolist()


def test_env_forces_fallback():
    code = "from affseg import kernels; print(kernels.DEFAULT_BACKEND, sorted(kernels.BACKENDS))"
    env = dict(os.environ, AFFSEG_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split()[0] == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get("fortran")
