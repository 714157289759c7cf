"""The folded-Gaussian mixture family: sampler, density, analytic moment
tensors (Isserlis expansion with mean), and the invariant coordinate map.

Component covariances are known and diagonal (scalar = isotropic).  The
diagonal must be invariant under the chosen group, which is exactly the
condition making the folded density depend on the mean only through its
orbit.  Because projection commutes with group averaging, the invariant
coordinates of the folded law equal those of the base Gaussian, so all
analytic maps below work with plain Gaussian moments.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .symtensor import (SymTensor, canonical_indices, invariant_basis,
                        multiplicities, sym_dim)

ISSERLIS_MAX_ORDER = 8


@dataclass
class MixtureParams:
    """K component means on R^d plus simplex weights and the known sigma^2."""

    thetas: np.ndarray
    weights: np.ndarray
    sigma2: float | np.ndarray

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.thetas.shape[0],):
            raise ValueError("one weight per component required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must lie on the simplex")
        sig = np.asarray(self.sigma2, dtype=float)
        if np.any(sig <= 0):
            raise ValueError("sigma2 entries must be positive")

    @property
    def K(self):
        return self.thetas.shape[0]

    @property
    def d(self):
        return self.thetas.shape[1]

    def sigma_diag(self):
        sig = np.asarray(self.sigma2, dtype=float)
        if sig.ndim == 0:
            return np.full(self.d, float(sig))
        if sig.shape != (self.d,):
            raise ValueError("diagonal sigma2 must have length d")
        return sig


def sigma_diag_vector(sigma2, d):
    sig = np.asarray(sigma2, dtype=float)
    if sig.ndim == 0:
        return np.full(d, float(sig))
    if sig.shape != (d,):
        raise ValueError("diagonal sigma2 must have length d")
    return sig


def check_sigma_invariant(group, sigma2, tol=1e-9):
    """Reject diagonal covariances that the group does not permute to itself."""
    sig = sigma_diag_vector(sigma2, group.p)
    S = np.diag(sig)
    for e in group.elements:
        Q = e.matrix
        if np.max(np.abs(Q @ S @ Q.T - S)) > tol:
            raise ValueError("sigma2 diagonal is not invariant under the group; "
                             "the folded density would not be orbit-constant")
    return sig


def sample(params, group, n, seed):
    """Draw n folded observations: z ~ N(mu_k, Sigma), emit g*z with g uniform.

    Deterministic given seed (single RNG stream, fixed draw order).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    sig = check_sigma_invariant(group, params.sigma2)
    rng = np.random.default_rng(seed)
    ks = rng.choice(params.K, size=n, p=params.weights)
    z = params.thetas[ks] + rng.standard_normal((n, params.d)) * np.sqrt(sig)
    gi = rng.integers(0, group.order, size=n)
    if group.is_signed_perm:
        perms = group._perms[gi]
        signs = group._signs[gi]
        return signs * np.take_along_axis(z, perms, axis=1)
    return np.einsum("nij,nj->ni", group.matrices[gi], z)


def folded_density(params, group, x):
    """Mixture of group-averaged Gaussian densities at a single point."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.d,):
        raise ValueError(f"expected a point in R^{params.d}")
    sig = check_sigma_invariant(group, params.sigma2)
    norm = np.prod(2 * np.pi * sig) ** -0.5
    total = 0.0
    for k in range(params.K):
        images = group.orbit(params.thetas[k])  # N(g^-1 x; mu) = N(x; g mu)
        z2 = np.sum((x - images) ** 2 / sig, axis=1)
        total += params.weights[k] * norm * np.mean(np.exp(-0.5 * z2))
    return float(total)


@lru_cache(maxsize=None)
def _moment_plan(alpha):
    """All pair/singleton splits of the index multiset alpha.

    Returns a tuple of (pairs, singles) terms; the Gaussian moment is the
    sum over terms of prod Sigma[a,b] * prod mu[s].
    """
    if len(alpha) == 0:
        return (((), ()),)
    first, rest = alpha[0], alpha[1:]
    terms = []
    for pairs, singles in _moment_plan(rest):
        terms.append((pairs, (first,) + singles))
    for j in range(len(rest)):
        sub = rest[:j] + rest[j + 1:]
        for pairs, singles in _moment_plan(sub):
            terms.append((((first, rest[j]),) + pairs, singles))
    return tuple(terms)


@lru_cache(maxsize=None)
def _moment_eval_arrays(d, m):
    """Pairing plans compiled to exponent arrays for vectorized evaluation.

    Terms with off-diagonal pairs vanish for diagonal covariances and are
    dropped at build time.  Returns (PC, SC, IND): sigma exponents (T, d),
    mu exponents (T, d), and the term-to-coordinate indicator (T, n_coords).
    """
    pc_rows, sc_rows, coord_of = [], [], []
    for i, alpha in enumerate(canonical_indices(d, m)):
        for pairs, singles in _moment_plan(alpha):
            if any(a != b for a, b in pairs):
                continue
            pc = [0] * d
            sc = [0] * d
            for a, _ in pairs:
                pc[a] += 1
            for s in singles:
                sc[s] += 1
            pc_rows.append(pc)
            sc_rows.append(sc)
            coord_of.append(i)
    T = len(pc_rows)
    nc = sym_dim(d, m)
    IND = np.zeros((T, nc))
    IND[np.arange(T), coord_of] = 1.0
    return (np.array(pc_rows, dtype=np.int64).reshape(T, d),
            np.array(sc_rows, dtype=np.int64).reshape(T, d),
            IND)


def _gaussian_moment_coords_batch(mus, sig, m):
    """Canonical moment coordinates for a batch of means, shape (B, n_coords)."""
    PC, SC, IND = _moment_eval_arrays(mus.shape[1], m)
    terms = (sig[None, None, :] ** PC[None]) * (mus[:, None, :] ** SC[None])
    return terms.prod(axis=2) @ IND


def gaussian_moment_tensor(mu, sigma2, m):
    """E[X^{tensor m}] for X ~ N(mu, diag(sigma2)) via the Isserlis pairing
    expansion (disjoint pairs contribute Sigma entries, singletons mu)."""
    if m > ISSERLIS_MAX_ORDER:
        raise ValueError(f"moment order {m} exceeds the Isserlis guard "
                         f"({ISSERLIS_MAX_ORDER})")
    mu = np.asarray(mu, dtype=float)
    d = mu.shape[0]
    sig = sigma_diag_vector(sigma2, d)
    coords = _gaussian_moment_coords_batch(mu[None], sig, m)[0]
    return SymTensor(d, m, coords)


@dataclass
class StackBasis:
    """Per-degree invariant bases backing an invariant coordinate stack."""

    group: object
    degrees: tuple
    bases: tuple
    D_inv: int
    offsets: tuple  # slice starts per degree, last entry = D_inv

    def slices(self):
        return {m: slice(self.offsets[i], self.offsets[i + 1])
                for i, m in enumerate(self.degrees)}


_STACK_CACHE = {}


def stack_basis(group, degrees):
    """Build (and cache) the invariant bases for the given degrees."""
    degrees = tuple(int(m) for m in degrees)
    if any(m < 1 for m in degrees) or len(set(degrees)) != len(degrees):
        raise ValueError("degrees must be distinct integers >= 1")
    key = (group.family, degrees)
    if key not in _STACK_CACHE:
        bases = tuple(invariant_basis(group, group.p, m) for m in degrees)
        offsets, o = [0], 0
        for b in bases:
            o += b.dim
            offsets.append(o)
        _STACK_CACHE[key] = StackBasis(group, degrees, bases, o, tuple(offsets))
    return _STACK_CACHE[key]


def degrees_up_to(m_star):
    return tuple(range(1, m_star + 1))


@dataclass
class InvariantStack:
    """Invariant coordinates of moment tensors over the basis's degrees."""

    basis: StackBasis
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.basis.D_inv,):
            raise ValueError("stack length does not match the basis")

    @property
    def m_star(self):
        return max(self.basis.degrees)

    @property
    def D_inv(self):
        return self.basis.D_inv


def phi_values_batch(group, thetas, sigma2, degrees):
    """Invariant stack values for a batch of means, shape (B, D_inv)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    basis = stack_basis(group, degrees)
    sig = sigma_diag_vector(sigma2, group.p)
    out = np.empty((thetas.shape[0], basis.D_inv))
    for i, m in enumerate(basis.degrees):
        b = basis.bases[i]
        if b.dim == 0:
            continue
        sl = slice(basis.offsets[i], basis.offsets[i + 1])
        coords = _gaussian_moment_coords_batch(thetas, sig, m)
        proj = multiplicities(group.p, m)[:, None] * b.vectors
        out[:, sl] = coords @ proj
    return out


def phi_values(group, theta, sigma2, degrees):
    """Invariant coordinates of the per-degree Gaussian moment tensors."""
    return phi_values_batch(group, np.asarray(theta, dtype=float)[None],
                            sigma2, degrees)[0]


def phi_theta(group, theta, sigma2, m_star, degrees=None):
    """The stacked invariant map Phi as an InvariantStack."""
    theta = np.asarray(theta, dtype=float)
    check_sigma_invariant(group, sigma2)
    degrees = tuple(degrees) if degrees is not None else degrees_up_to(m_star)
    basis = stack_basis(group, degrees)
    return InvariantStack(basis, phi_values(group, theta, sigma2, degrees))


def phi_jacobian(group, theta, sigma2, m_star, degrees=None):
    """Central finite-difference Jacobian of phi, shape (D_inv, d).

    Step h_i = 1e-5 * (1 + |theta_i|); all 2d evaluations go through one
    batched call.
    """
    theta = np.asarray(theta, dtype=float)
    degrees = tuple(degrees) if degrees is not None else degrees_up_to(m_star)
    d = theta.shape[0]
    h = 1e-5 * (1.0 + np.abs(theta))
    pts = np.tile(theta, (2 * d, 1))
    pts[np.arange(d), np.arange(d)] += h
    pts[d + np.arange(d), np.arange(d)] -= h
    vals = phi_values_batch(group, pts, sigma2, degrees)
    return (vals[:d] - vals[d:]).T / (2 * h)


def mixture_stack_values(group, thetas, weights, sigma2, degrees):
    """Population stack of a mixture: the convex combination of component maps."""
    thetas = np.atleast_2d(thetas)
    out = np.zeros(stack_basis(group, degrees).D_inv)
    for k in range(thetas.shape[0]):
        out += weights[k] * phi_values(group, thetas[k], sigma2, degrees)
    return out
