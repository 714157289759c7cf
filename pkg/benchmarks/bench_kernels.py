#!/usr/bin/env python3
"""Benchmark the numba-jitted hot kernels against their pure-numpy/python
fallbacks.

The backend is frozen at import time, so this script runs each path in a
subprocess (FOLDMIX_DISABLE_NUMBA=1 selects the fallback).  Typical output
on a 2-core container:

    monomial features n=200000 d=2 m=4 ........ numba x2-4 vs numpy
    bipartite matching K=48 x300 .............. numba x20+ vs python
"""

import json
import os
import subprocess
import sys
import time

WORKLOADS = """
import json, time
import numpy as np
from foldmix._kernels import NUMBA_ENABLED, max_bipartite_matching, monomial_features
from foldmix.symtensor import index_array

rng = np.random.default_rng(0)
results = {"backend": "numba" if NUMBA_ENABLED else "numpy"}

# warm-up (JIT compile, cache priming)
X = rng.standard_normal((1000, 2))
monomial_features(X, index_array(2, 4))
max_bipartite_matching(rng.random((8, 8)) < 0.5)

X = rng.standard_normal((200000, 2))
idx = index_array(2, 4)
t0 = time.perf_counter()
for _ in range(20):
    monomial_features(X, idx)
results["monomials_n200k_d2_m4"] = (time.perf_counter() - t0) / 20

X = rng.standard_normal((50000, 4))
idx = index_array(4, 6)
t0 = time.perf_counter()
for _ in range(5):
    monomial_features(X, idx)
results["monomials_n50k_d4_m6"] = (time.perf_counter() - t0) / 5

C = rng.random((48, 48))
adjs = [C <= r for r in np.quantile(C, np.linspace(0.02, 0.5, 300))]
t0 = time.perf_counter()
for adj in adjs:
    max_bipartite_matching(adj)
results["matching_K48_x300"] = time.perf_counter() - t0

print(json.dumps(results))
"""


def run(disable_numba):
    env = dict(os.environ, FOLDMIX_DISABLE_NUMBA="1" if disable_numba else "0")
    out = subprocess.run([sys.executable, "-c", WORKLOADS], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    fast = run(disable_numba=False)
    slow = run(disable_numba=True)
    print(f"{'workload':32s} {'numba':>10s} {'fallback':>10s} {'speedup':>8s}")
    for key in fast:
        if key == "backend":
            continue
        a, b = fast[key], slow[key]
        print(f"{key:32s} {a * 1e3:9.2f}ms {b * 1e3:9.2f}ms {b / a:7.2f}x")


if __name__ == "__main__":
    main()
