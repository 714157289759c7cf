"""Dense symmetric tensors in canonical coordinates, the Reynolds projector,
and orthonormal bases of the invariant subspaces.

A symmetric order-m tensor over R^d is stored as the vector of its values at
the canonical nondecreasing multi-indices (i_1 <= ... <= i_m), of length
C(d+m-1, m).  The canonical inner product carries the multinomial
multiplicity of each index so that <T, U> equals the full m-way array inner
product; this is what makes the Reynolds projector literally self-adjoint.
"""

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SYM_DIM_GUARD = 100_000
RANK_CUTOFF = 1e-9  # invariant projectors have 0/1 spectra; any cutoff in
                    # (1e-6, 1e-12) selects the same subspace


def sym_dim(d, m):
    return math.comb(d + m - 1, m)


@lru_cache(maxsize=None)
def canonical_indices(d, m):
    """Tuple of nondecreasing multi-indices, and an index array view."""
    idx = tuple(itertools.combinations_with_replacement(range(d), m))
    return idx


@lru_cache(maxsize=None)
def index_array(d, m):
    idx = canonical_indices(d, m)
    return np.array(idx, dtype=np.int64).reshape(len(idx), m)


@lru_cache(maxsize=None)
def index_position(d, m):
    return {alpha: i for i, alpha in enumerate(canonical_indices(d, m))}


@lru_cache(maxsize=None)
def multiplicities(d, m):
    """Number of distinct permutations of each canonical multi-index."""
    out = np.empty(sym_dim(d, m))
    for i, alpha in enumerate(canonical_indices(d, m)):
        counts = {}
        for a in alpha:
            counts[a] = counts.get(a, 0) + 1
        mult = math.factorial(m)
        for c in counts.values():
            mult //= math.factorial(c)
        out[i] = mult
    return out


@dataclass
class SymTensor:
    """Order-m symmetric tensor over R^d in canonical coordinates."""

    d: int
    m: int
    coords: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if self.coords.shape != (sym_dim(self.d, self.m),):
            raise ValueError("coordinate vector has the wrong length")

    @classmethod
    def zeros(cls, d, m):
        return cls(d, m, np.zeros(sym_dim(d, m)))

    @classmethod
    def basis(cls, d, m, alpha):
        """Unit canonical coordinate at multi-index alpha."""
        coords = np.zeros(sym_dim(d, m))
        coords[index_position(d, m)[tuple(sorted(alpha))]] = 1.0
        return cls(d, m, coords)

    def to_full(self):
        """Expand to the full d^m array (fully symmetric by construction)."""
        full = np.zeros((self.d,) * self.m) if self.m > 0 else np.zeros(())
        if self.m == 0:
            return full + self.coords[0]
        for i, alpha in enumerate(canonical_indices(self.d, self.m)):
            for perm in set(itertools.permutations(alpha)):
                full[perm] = self.coords[i]
        return full

    @classmethod
    def from_full(cls, arr):
        arr = np.asarray(arr, dtype=float)
        m = arr.ndim
        d = arr.shape[0] if m > 0 else 1
        coords = np.array([arr[alpha] for alpha in canonical_indices(d, m)]) \
            if m > 0 else np.array([float(arr)])
        return cls(d, m, coords)

    def inner(self, other):
        """Canonical (multiplicity-weighted) inner product."""
        w = multiplicities(self.d, self.m)
        return float(np.dot(w * self.coords, other.coords))

    def norm(self):
        return math.sqrt(self.inner(self))


def _induced_signed_perm(perm, signs, d, m):
    """Exact induced matrix on canonical coordinates for a signed permutation."""
    n = sym_dim(d, m)
    M = np.zeros((n, n))
    if m == 0:
        M[0, 0] = 1.0
        return M
    q = np.argsort(perm)  # Q e_j = signs[q_j] e_{q_j}
    pos = index_position(d, m)
    for col, alpha in enumerate(canonical_indices(d, m)):
        target = tuple(sorted(q[a] for a in alpha))
        val = 1.0
        for a in alpha:
            val *= signs[q[a]]
        M[pos[target], col] = val
    return M


def _induced_dense(Q, d, m):
    """Induced matrix on canonical coordinates for a dense orthogonal Q."""
    n = sym_dim(d, m)
    if m == 0:
        return np.eye(1)
    # stack of basis tensors as full arrays, transformed mode by mode
    stack = np.zeros((n,) + (d,) * m)
    for i, alpha in enumerate(canonical_indices(d, m)):
        for perm in set(itertools.permutations(alpha)):
            stack[(i,) + perm] = 1.0
    for _ in range(m):
        # contract the last tensor axis with Q's input index; axes cycle
        stack = np.tensordot(stack, Q, axes=(1, 1))
    flat = stack.reshape(n, d ** m)
    strides = d ** np.arange(m - 1, -1, -1)
    flat_pos = index_array(d, m) @ strides
    return flat[:, flat_pos].T


def induced_matrix(element, d, m):
    if element.is_signed_perm:
        return _induced_signed_perm(element.perm, element.signs, d, m)
    return _induced_dense(element.matrix, d, m)


_REYNOLDS_CACHE = {}


def reynolds_matrix(group, m):
    """|G|^{-1} sum_g of the induced action on canonical coordinates."""
    key = (group.family, group.p, m)
    if key not in _REYNOLDS_CACHE:
        if sym_dim(group.p, m) > SYM_DIM_GUARD:
            raise ValueError("symmetric tensor space exceeds the sizing guard")
        R = np.zeros((sym_dim(group.p, m),) * 2)
        for e in group.elements:
            R += induced_matrix(e, group.p, m)
        _REYNOLDS_CACHE[key] = R / group.order
    return _REYNOLDS_CACHE[key]


def reynolds_project(group, T):
    """Group-average a symmetric tensor; idempotent and self-adjoint."""
    if T.d != group.p:
        raise ValueError("tensor dimension does not match the group")
    R = reynolds_matrix(group, T.m)
    return SymTensor(T.d, T.m, R @ T.coords)


@dataclass
class InvariantBasis:
    """Orthonormal basis (canonical inner product) of the degree-m invariants.

    vectors has shape (sym_dim, dim); column j holds basis tensor j.  For a
    tensor with canonical coordinates t, its invariant-subspace coordinates
    are project(t) = vectors.T @ (mult * t).
    """

    d: int
    m: int
    vectors: np.ndarray
    dim: int

    def project(self, coords):
        w = multiplicities(self.d, self.m)
        return self.vectors.T @ (w * coords)

    def reconstruct(self, y):
        """Canonical coordinates of sum_j y_j * basis_j."""
        return self.vectors @ y

    def tensors(self):
        return [SymTensor(self.d, self.m, self.vectors[:, j]) for j in range(self.dim)]


def invariant_basis(group, d, m):
    """Extract an orthonormal basis of the G-invariant subspace of Sym^m."""
    if d != group.p:
        raise ValueError("dimension does not match the group")
    if sym_dim(d, m) > SYM_DIM_GUARD:
        raise ValueError("symmetric tensor space exceeds the sizing guard")
    R = reynolds_matrix(group, m)
    w = multiplicities(d, m)
    s = np.sqrt(w)
    # conjugating by D^{1/2} makes the projector symmetric; spectrum is {0,1}
    P = (s[:, None] * R) / s[None, :]
    P = 0.5 * (P + P.T)
    evals, evecs = np.linalg.eigh(P)
    keep = evals > RANK_CUTOFF
    dim = int(np.count_nonzero(keep))
    trace_dim = int(round(float(np.trace(R))))
    if dim != trace_dim:
        raise ValueError(f"numerical rank {dim} disagrees with projector trace {trace_dim}")
    U = evecs[:, keep] / s[:, None]
    # deterministic sign convention: largest-magnitude entry positive
    for j in range(dim):
        k = int(np.argmax(np.abs(U[:, j])))
        if U[k, j] < 0:
            U[:, j] = -U[:, j]
    return InvariantBasis(d, m, U, dim)
