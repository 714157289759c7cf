"""Empirical invariant stacks: per-observation features, plain / median-of-
means / Catoni aggregation, and iid or Newey-West (Bartlett) covariance."""

import warnings
from dataclasses import dataclass

import numpy as np

from ._kernels import monomial_features
from .model import InvariantStack, degrees_up_to, stack_basis
from .symtensor import index_array, multiplicities


def parse_estimator(spec):
    """'mean' | 'mom:B' | 'catoni:delta' -> (name, param)."""
    if isinstance(spec, tuple):
        return spec
    name, _, arg = spec.partition(":")
    if name == "mean":
        return ("mean", None)
    if name == "mom":
        return ("mom", int(arg))
    if name == "catoni":
        return ("catoni", float(arg))
    raise ValueError(f"unknown estimator spec {spec!r}")


def feature_matrix(group, data, m_star, degrees=None):
    """Per-observation invariant features psi(x_i), shape (n, D_inv).

    Degree-m block: canonical coordinates of x^{tensor m} are the monomials
    prod_r x[idx_r]; projecting onto the invariant basis is one matmul.
    The monomial sweep is the hot kernel (numba-backed, numpy fallback).
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    degrees = tuple(degrees) if degrees is not None else degrees_up_to(m_star)
    basis = stack_basis(group, degrees)
    n = data.shape[0]
    out = np.empty((n, basis.D_inv))
    for i, m in enumerate(basis.degrees):
        b = basis.bases[i]
        if b.dim == 0:
            continue
        sl = slice(basis.offsets[i], basis.offsets[i + 1])
        idx = index_array(group.p, m)
        monoms = monomial_features(data, idx)
        proj = multiplicities(group.p, m)[:, None] * b.vectors
        out[:, sl] = monoms @ proj
    return out


def mom_mean(values, B):
    """Median of B contiguous block means, per coordinate.

    Blocks have size floor(n/B); trailing remainder indices are discarded.
    np.median averages the two central values on even counts.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    n = values.shape[0]
    if not 1 <= B <= n:
        raise ValueError(f"need 1 <= B <= n, got B={B}, n={n}")
    bs = n // B
    block_means = values[:B * bs].reshape(B, bs, -1).mean(axis=1)
    return np.median(block_means, axis=0)


def _catoni_psi(x):
    return np.sign(x) * np.log1p(np.abs(x) + 0.5 * x * x)


def catoni_mean(values, delta, c=1.0, tol=1e-10):
    """Catoni M-estimator per coordinate.

    Solves sum_i psi(alpha (x_i - u)) = 0 with the narrowest influence
    psi(x) = sign(x) log(1 + |x| + x^2/2) and alpha = c sqrt(log(2D/delta)/n).
    The sum is strictly decreasing in u, so the root is unique; we bracket
    on [min - 1, max + 1], bisect, then polish with Newton.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    n, D = values.shape
    if n < 2:
        raise ValueError("catoni_mean needs n >= 2")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    alpha = c * np.sqrt(np.log(2 * D / delta) / n)

    lo = values.min(axis=0) - 1.0
    hi = values.max(axis=0) + 1.0
    const = np.all(values == values[0], axis=0)  # degenerate bracket short-circuit

    def S(u):
        return _catoni_psi(alpha * (values - u)).sum(axis=0)

    for _ in range(60):
        mid = 0.5 * (lo + hi)
        pos = S(mid) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
        if np.max(hi - lo) < tol:
            break
    u = 0.5 * (lo + hi)
    for _ in range(4):
        z = alpha * (values - u)
        az = np.abs(z)
        dpsi = (1.0 + az) / (1.0 + az + 0.5 * z * z)
        deriv = -alpha * dpsi.sum(axis=0)
        step = S(u) / deriv
        u_new = u - step
        inside = (u_new > lo) & (u_new < hi)
        u = np.where(inside, u_new, u)
        if np.max(np.abs(step)) < tol:
            break
    return np.where(const, values[0], u)


def empirical_stack(group, data, m_star, estimator="mean", degrees=None):
    """Aggregate per-observation features with the chosen estimator."""
    name, param = parse_estimator(estimator)
    rows = feature_matrix(group, data, m_star, degrees=degrees)
    if name == "mean":
        values = rows.mean(axis=0)
    elif name == "mom":
        values = mom_mean(rows, param)
    else:
        values = catoni_mean(rows, param)
    basis = stack_basis(group, tuple(degrees) if degrees is not None
                        else degrees_up_to(m_star))
    return InvariantStack(basis, values)


@dataclass
class CovEstimate:
    """Feature covariance with mode tag and the ridge actually applied."""

    matrix: np.ndarray
    mode: str
    bandwidth: int | None
    ridge: float


def default_hac_bandwidth(n):
    return int(np.floor(4.0 * (n / 100.0) ** (2.0 / 9.0)))


def covariance(group, data, m_star, mode="iid", ridge=None, degrees=None):
    """iid sample covariance or Bartlett/Newey-West long-run covariance.

    mode: "iid" | "hac" | ("hac", bandwidth).  A ridge (default
    1e-8 * trace / D) is always added so downstream inversions stay sane.
    """
    rows = feature_matrix(group, data, m_star, degrees=degrees)
    n, D = rows.shape
    if n <= D:
        warnings.warn(f"covariance from n={n} rows in D={D} dims is rank-deficient")
    if isinstance(mode, str) and mode.startswith("hac:"):
        mode = ("hac", int(mode.split(":")[1]))
    Z = rows - rows.mean(axis=0)
    gamma0 = Z.T @ Z / n
    if mode == "iid" or mode == ("iid", None):
        S, tag, b = gamma0, "iid", None
    else:
        if mode == "hac":
            b = default_hac_bandwidth(n)
        else:
            _, b = mode
            b = default_hac_bandwidth(n) if b is None else int(b)
        S = gamma0.copy()
        for ell in range(1, b + 1):
            g = Z[ell:].T @ Z[:-ell] / n
            S += (1.0 - ell / (b + 1.0)) * (g + g.T)
        tag = f"hac({b})"
    if ridge is None:
        ridge = 1e-8 * np.trace(S) / D
    S = S + ridge * np.eye(D)
    S = 0.5 * (S + S.T)
    return CovEstimate(S, tag, b, float(ridge))
