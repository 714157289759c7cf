"""Numerical hot loops, JIT-compiled with numba when available.

Set FOLDMIX_DISABLE_NUMBA=1 to force the pure-numpy/python fallbacks
(useful for debugging and for the benchmark in benchmarks/bench_kernels.py).
FOLDMIX_THREADS caps the numba thread pool.
"""

import os

import numpy as np

# the image's TBB is too old for numba; pick a working layer before numba
# is imported anywhere
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")


def _want_numba():
    flag = os.environ.get("FOLDMIX_DISABLE_NUMBA", "0").strip().lower()
    if flag not in ("", "0", "false", "no"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _want_numba()

if NUMBA_ENABLED:
    import numba
    from numba import njit, prange

    _nthreads = os.environ.get("FOLDMIX_THREADS")
    if _nthreads:
        numba.set_num_threads(max(1, int(_nthreads)))
else:
    prange = range

    def njit(*args, **kwargs):
        # transparent no-op decorator, mirrors the numba call signatures
        if args and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(f):
            return f

        return wrap


def monomial_features_numpy(X, idx):
    """Row-wise monomials prod_r X[i, idx[c, r]] -> (n, n_coords).

    Pure-numpy path: one in-place multiply per tensor slot, so peak memory
    is a single (n, n_coords) block.
    """
    out = X[:, idx[:, 0]].astype(np.float64, copy=True)
    for r in range(1, idx.shape[1]):
        out *= X[:, idx[:, r]]
    return out


@njit(parallel=True, cache=True)
def _monomial_features_jit(X, idx):
    n = X.shape[0]
    nc = idx.shape[0]
    m = idx.shape[1]
    out = np.empty((n, nc))
    for i in prange(n):
        for c in range(nc):
            v = 1.0
            for r in range(m):
                v *= X[i, idx[c, r]]
            out[i, c] = v
    return out


def monomial_features(X, idx):
    """Dispatch on the backend flag; both paths agree to fp rounding."""
    if idx.shape[1] == 0:
        return np.ones((X.shape[0], idx.shape[0]))
    if NUMBA_ENABLED:
        return _monomial_features_jit(np.ascontiguousarray(X, dtype=np.float64),
                                      np.ascontiguousarray(idx, dtype=np.int64))
    return monomial_features_numpy(X, idx)


def _match_impl(adj):
    # Kuhn's augmenting-path maximum bipartite matching, iterative DFS.
    # adj is a (K, K) boolean matrix; returns (size, col -> row array).
    K = adj.shape[0]
    match_col = np.full(K, -1, np.int64)
    stack_row = np.empty(K + 1, np.int64)
    next_col = np.empty(K + 1, np.int64)
    cur_col = np.empty(K + 1, np.int64)
    size = 0
    for start in range(K):
        visited = np.zeros(K, np.bool_)
        top = 0
        stack_row[0] = start
        next_col[0] = 0
        augmented = False
        while top >= 0 and not augmented:
            row = stack_row[top]
            advanced = False
            for c in range(next_col[top], K):
                if adj[row, c] and not visited[c]:
                    visited[c] = True
                    next_col[top] = c + 1
                    cur_col[top] = c
                    if match_col[c] == -1:
                        for t in range(top, -1, -1):
                            match_col[cur_col[t]] = stack_row[t]
                        augmented = True
                    else:
                        top += 1
                        stack_row[top] = match_col[c]
                        next_col[top] = 0
                    advanced = True
                    break
            if not advanced:
                top -= 1
        if augmented:
            size += 1
    return size, match_col


_match_jit = njit(cache=True)(_match_impl)


def max_bipartite_matching(adj):
    """Maximum matching of the threshold graph; (size, column -> row)."""
    adj = np.ascontiguousarray(adj, dtype=np.bool_)
    if NUMBA_ENABLED:
        return _match_jit(adj)
    return _match_impl(adj)
