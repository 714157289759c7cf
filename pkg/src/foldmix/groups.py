"""Finite orthogonal matrix groups acting on R^p.

Elements are stored either as signed permutations (exact, compact) or as
dense orthogonal matrices (dihedral and weighted-cyclic rotations).  The
action convention is y = Q x with Q[i, perm[i]] = signs[i], i.e.
y[i] = signs[i] * x[perm[i]].

Group specification grammar (config files and the CLI):

    "trivial:d"            identity only on R^d
    "signflips:d"          (+-1)^d componentwise sign flips
    "sym:d"                permutations S_d
    "hyperoct:d"           signed permutations B_d = (+-1)^d x| S_d
    "dihedral:m"           D_m <= O(2), rotations by 2*pi*k/m plus reflections
    "cyclic:M:w1,w2,..."   order-M cyclic group, weight w_j acting by rotation
                           angle 2*pi*k*w_j/M on its own block
    "product:specA;specB"  block-diagonal direct product
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-10
MAX_GROUP_ORDER = 10_000_000


class GroupOrderError(ValueError):
    """Requested family would enumerate more than MAX_GROUP_ORDER elements."""


@dataclass
class GroupElement:
    """One group element: signed permutation or dense orthogonal matrix."""

    perm: np.ndarray | None = None
    signs: np.ndarray | None = None
    mat: np.ndarray | None = None

    def __post_init__(self):
        if self.mat is not None:
            self.mat = np.asarray(self.mat, dtype=float)
            Q = self.mat
            if np.max(np.abs(Q.T @ Q - np.eye(Q.shape[0]))) > ORTHO_TOL:
                raise ValueError("group element matrix is not orthogonal")
        else:
            self.perm = np.asarray(self.perm, dtype=np.int64)
            self.signs = np.asarray(self.signs, dtype=np.int64)
            if sorted(self.perm.tolist()) != list(range(len(self.perm))):
                raise ValueError("perm must be a permutation of 0..p-1")
            if not np.all(np.abs(self.signs) == 1):
                raise ValueError("signs must be +-1")

    @property
    def is_signed_perm(self):
        return self.mat is None

    @property
    def dim(self):
        return len(self.perm) if self.is_signed_perm else self.mat.shape[0]

    @property
    def matrix(self):
        """Dense p x p representation (exact for signed permutations)."""
        if self.mat is not None:
            return self.mat
        p = len(self.perm)
        Q = np.zeros((p, p))
        Q[np.arange(p), self.perm] = self.signs
        return Q

    @classmethod
    def from_matrix(cls, Q):
        """Wrap a matrix, compacting to signed-perm form when exact."""
        Q = np.asarray(Q, dtype=float)
        is_sp = np.all(np.isin(Q, (-1.0, 0.0, 1.0))) and \
            np.all(np.sum(Q != 0, axis=0) == 1) and np.all(np.sum(Q != 0, axis=1) == 1)
        if is_sp:
            perm = np.argmax(Q != 0, axis=1)
            signs = Q[np.arange(Q.shape[0]), perm].astype(np.int64)
            return cls(perm=perm, signs=signs)
        return cls(mat=Q)

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"dimension mismatch: element acts on R^{self.dim}, "
                             f"got vector of length {x.shape[-1]}")
        if self.is_signed_perm:
            return self.signs * x[..., self.perm]
        return x @ self.mat.T

    def compose(self, other):
        """g.compose(h) represents x -> g(h(x))."""
        if self.is_signed_perm and other.is_signed_perm:
            perm = other.perm[self.perm]
            signs = self.signs * other.signs[self.perm]
            return GroupElement(perm=perm, signs=signs)
        return GroupElement.from_matrix(self.matrix @ other.matrix)

    def inverse(self):
        if self.is_signed_perm:
            q = np.argsort(self.perm)
            return GroupElement(perm=q, signs=self.signs[q])
        return GroupElement(mat=self.matrix.T)

    def close_to(self, other, tol=ORTHO_TOL):
        return np.max(np.abs(self.matrix - other.matrix)) <= tol


@dataclass
class FiniteGroup:
    """Fully enumerated finite subgroup of O(p); identity at index 0."""

    elements: list
    p: int
    family: str
    order: int = field(init=False)

    def __post_init__(self):
        self.order = len(self.elements)
        self._perms = None
        self._signs = None
        self._mats = None
        if all(e.is_signed_perm for e in self.elements):
            self._perms = np.stack([e.perm for e in self.elements])
            self._signs = np.stack([e.signs for e in self.elements]).astype(float)

    @property
    def is_signed_perm(self):
        return self._perms is not None

    @property
    def matrices(self):
        """(order, p, p) dense stack, built lazily."""
        if self._mats is None:
            if self.order * self.p * self.p > 2e8:
                raise GroupOrderError("dense matrix stack would exceed the memory guard")
            self._mats = np.stack([e.matrix for e in self.elements])
        return self._mats

    def orbit(self, x):
        """All images g*x, shape (order, p)."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.p,):
            raise ValueError(f"expected vector of length {self.p}, got shape {x.shape}")
        if self.is_signed_perm:
            return self._signs * x[self._perms]
        return self.matrices @ x

    def element_index(self, Q, tol=ORTHO_TOL):
        """Index of the element matching matrix Q to tol, or -1."""
        Q = np.asarray(Q, dtype=float)
        diffs = np.max(np.abs(self.matrices - Q), axis=(1, 2))
        i = int(np.argmin(diffs))
        return i if diffs[i] <= tol else -1


def apply(g, x):
    """Group action y = Q x; preserves the Euclidean norm."""
    return g.apply(x)


def _check_order(n):
    if n > MAX_GROUP_ORDER:
        raise GroupOrderError(f"group order {n} exceeds the cap {MAX_GROUP_ORDER}")


def _trivial(d):
    return [GroupElement(perm=np.arange(d), signs=np.ones(d, dtype=np.int64))]


def _sign_flips(d):
    _check_order(2 ** d)
    elems = []
    for signs in itertools.product((1, -1), repeat=d):
        elems.append(GroupElement(perm=np.arange(d), signs=np.array(signs)))
    return elems


def _symmetric(d):
    _check_order(math.factorial(d))
    elems = []
    for perm in itertools.permutations(range(d)):
        elems.append(GroupElement(perm=np.array(perm), signs=np.ones(d, dtype=np.int64)))
    return elems


def _hyperoctahedral(d):
    _check_order((2 ** d) * math.factorial(d))
    elems = []
    for perm in itertools.permutations(range(d)):
        for signs in itertools.product((1, -1), repeat=d):
            elems.append(GroupElement(perm=np.array(perm), signs=np.array(signs)))
    return elems


def _rotation(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def _dihedral(m):
    if m < 2:
        raise ValueError("dihedral family requires m >= 2")
    _check_order(2 * m)
    elems = [GroupElement(mat=_rotation(2 * math.pi * k / m)) for k in range(m)]
    refl = np.diag([1.0, -1.0])
    elems += [GroupElement(mat=_rotation(2 * math.pi * k / m) @ refl) for k in range(m)]
    return elems


def _cyclic_weighted(M, weights):
    # Real orthogonal realization: weight w acts on its own block by the
    # rotation angle 2*pi*k*w/M; the block is 1x1 when that angle is always
    # 0 or pi (i.e. 2w = 0 mod M), else 2x2.
    if M < 1:
        raise ValueError("cyclic family requires M >= 1")
    _check_order(M)
    elems = []
    for k in range(M):
        blocks = []
        for w in weights:
            ang = 2 * math.pi * ((k * w) % M) / M
            if (2 * w) % M == 0:
                blocks.append(np.array([[round(math.cos(ang))]], dtype=float))
            else:
                blocks.append(_rotation(ang))
        Q = _block_diag(blocks)
        elems.append(GroupElement.from_matrix(Q))
    return elems


def _block_diag(blocks):
    p = sum(b.shape[0] for b in blocks)
    Q = np.zeros((p, p))
    o = 0
    for b in blocks:
        Q[o:o + b.shape[0], o:o + b.shape[0]] = b
        o += b.shape[0]
    return Q


def _product(factors):
    order = 1
    for g in factors:
        order *= g.order
    _check_order(order)
    all_sp = all(g.is_signed_perm for g in factors)
    dims = [g.p for g in factors]
    offsets = np.cumsum([0] + dims)
    elems = []
    for combo in itertools.product(*[g.elements for g in factors]):
        if all_sp:
            perm = np.concatenate([e.perm + offsets[i] for i, e in enumerate(combo)])
            signs = np.concatenate([e.signs for e in combo])
            elems.append(GroupElement(perm=perm, signs=signs))
        else:
            elems.append(GroupElement.from_matrix(_block_diag([e.matrix for e in combo])))
    return elems


def build_group(family, *params):
    """Enumerate a group family; see the module docstring for the tags."""
    if family == "trivial":
        (d,) = params
        if d < 1:
            raise ValueError("dimension must be >= 1")
        return FiniteGroup(_trivial(d), d, f"trivial:{d}")
    if family == "sign_flips":
        (d,) = params
        if d < 1:
            raise ValueError("dimension must be >= 1")
        return FiniteGroup(_sign_flips(d), d, f"signflips:{d}")
    if family == "sym":
        (d,) = params
        if d < 1:
            raise ValueError("dimension must be >= 1")
        return FiniteGroup(_symmetric(d), d, f"sym:{d}")
    if family == "hyperoctahedral":
        (d,) = params
        if d < 1:
            raise ValueError("dimension must be >= 1")
        return FiniteGroup(_hyperoctahedral(d), d, f"hyperoct:{d}")
    if family == "dihedral":
        (m,) = params
        return FiniteGroup(_dihedral(m), 2, f"dihedral:{m}")
    if family == "cyclic_weighted":
        M, weights = params
        weights = tuple(int(w) for w in weights)
        elems = _cyclic_weighted(M, weights)
        p = elems[0].dim
        spec = f"cyclic:{M}:" + ",".join(str(w) for w in weights)
        return FiniteGroup(elems, p, spec)
    if family == "product":
        (factors,) = params
        factors = list(factors)
        elems = _product(factors)
        p = sum(g.p for g in factors)
        spec = "product:" + ";".join(g.family for g in factors)
        return FiniteGroup(elems, p, spec)
    raise ValueError(f"unknown group family {family!r}")


def parse_group_spec(spec):
    """Parse the string grammar into an enumerated FiniteGroup."""
    spec = spec.strip()
    head, _, rest = spec.partition(":")
    if head == "trivial":
        return build_group("trivial", int(rest))
    if head == "signflips":
        return build_group("sign_flips", int(rest))
    if head == "sym":
        return build_group("sym", int(rest))
    if head == "hyperoct":
        return build_group("hyperoctahedral", int(rest))
    if head == "dihedral":
        return build_group("dihedral", int(rest))
    if head == "cyclic":
        M_str, _, w_str = rest.partition(":")
        weights = tuple(int(w) for w in w_str.split(","))
        return build_group("cyclic_weighted", int(M_str), weights)
    if head == "product":
        factors = [parse_group_spec(s) for s in rest.split(";")]
        return build_group("product", factors)
    raise ValueError(f"cannot parse group spec {spec!r}")


def canonical_rep(group, theta):
    """Map theta to the canonical representative of its orbit.

    Family rules: sign flips -> componentwise abs; S_d -> sort descending;
    B_d -> abs then sort descending; dihedral -> polar angle folded into
    [0, pi/m]; everything else -> lexicographic argmin over the full orbit.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (group.p,):
        raise ValueError(f"expected vector of length {group.p}, got shape {theta.shape}")
    fam = group.family.split(":")[0]
    if fam == "trivial":
        return theta.copy()
    if fam == "signflips":
        return np.abs(theta)
    if fam == "sym":
        return np.sort(theta)[::-1]
    if fam == "hyperoct":
        return np.sort(np.abs(theta))[::-1]
    if fam == "dihedral":
        m = int(group.family.split(":")[1])
        r = math.hypot(theta[0], theta[1])
        if r == 0.0:
            return np.zeros(2)
        phi = math.atan2(theta[1], theta[0]) % (2 * math.pi)
        sector = 2 * math.pi / m
        t = phi % sector
        if t > sector / 2:
            t = sector - t
        return np.array([r * math.cos(t), r * math.sin(t)])
    # cyclic_weighted, product: deterministic lexicographic argmin
    images = group.orbit(theta)
    order = np.lexsort(images.T[::-1])
    return images[order[0]].copy()
