"""Distances on the quotient: minimum-alignment orbit distance, multiset
Hausdorff loss, and bottleneck matching with its exactness flag.

The factor-2 comparison between the two multiset losses is NOT asserted
anywhere: the instance A={0,2,10}, B={1,9,11} under the trivial group has
d_H = 1 but bottleneck value 7, so only the lower bound d_H <= bottleneck
is reliable.  The ratio is logged for inspection.
"""

import logging
from dataclasses import dataclass

import numpy as np

from ._kernels import max_bipartite_matching
from .groups import canonical_rep

log = logging.getLogger(__name__)

ORBIT_EQ_TOL = 1e-9


def orbit_distance(group, theta, theta2):
    """min over g of ||theta - g*theta2||_2 (equals the Hausdorff distance
    between the two orbits for isometric actions)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (group.p,):
        raise ValueError(f"expected vectors of length {group.p}")
    images = group.orbit(theta2)
    return float(np.min(np.linalg.norm(images - theta, axis=1)))


@dataclass
class OrbitMultiset:
    """K orbit representatives (stored canonically) under a common group."""

    group: object
    reps: np.ndarray

    def __post_init__(self):
        reps = np.atleast_2d(np.asarray(self.reps, dtype=float))
        if reps.shape[1] != self.group.p:
            raise ValueError("representative length does not match the group dimension")
        self.reps = np.stack([canonical_rep(self.group, r) for r in reps])

    def __len__(self):
        return self.reps.shape[0]


def orbit_cost_matrix(group, A, B):
    """Pairwise orbit distances c_ij between the rows of A and B."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    orbits = [group.orbit(b) for b in B]
    C = np.empty((A.shape[0], B.shape[0]))
    for i, a in enumerate(A):
        for j, ob in enumerate(orbits):
            C[i, j] = np.min(np.linalg.norm(ob - a, axis=1))
    return C


def hausdorff_multiset(C):
    """max( max_i min_j c_ij , max_j min_i c_ij ) from a cost matrix."""
    C = np.asarray(C, dtype=float)
    if C.size == 0:
        raise ValueError("empty cost matrix")
    return float(max(C.min(axis=1).max(), C.min(axis=0).max()))


def bottleneck_matching(C):
    """Bottleneck assignment via threshold search on the sorted costs.

    Returns (value, assignment, exact_at_hausdorff) where assignment[i] is
    the column matched to row i and exact_at_hausdorff says whether a
    perfect matching already exists at radius hausdorff_multiset(C).
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError("cost matrix must be square")
    K = C.shape[0]
    d_h = hausdorff_multiset(C)

    thresholds = np.unique(C)
    lo, hi = 0, len(thresholds) - 1
    # smallest threshold admitting a perfect matching; the max always works
    best = hi
    best_match = None
    while lo <= hi:
        mid = (lo + hi) // 2
        size, match_col = max_bipartite_matching(C <= thresholds[mid])
        if size == K:
            best, best_match = mid, match_col
            hi = mid - 1
        else:
            lo = mid + 1
    if best_match is None:
        size, best_match = max_bipartite_matching(C <= thresholds[best])
    value = float(thresholds[best])

    assignment = np.empty(K, dtype=np.int64)
    assignment[best_match] = np.arange(K)

    exact = value <= d_h
    if d_h > 0:
        log.debug("bottleneck/hausdorff ratio %.6g (d_H=%.6g, bottleneck=%.6g)",
                  value / d_h, d_h, value)
    return value, assignment, exact


def orbit_multiset_distances(group, A, B):
    """Convenience wrapper: cost matrix, d_H, bottleneck value/assignment."""
    C = orbit_cost_matrix(group, A, B)
    d_h = hausdorff_multiset(C)
    value, assignment, exact = bottleneck_matching(C)
    return C, d_h, value, assignment, exact
