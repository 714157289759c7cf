"""Selecting the number of components from the invariant embedding:
warm-started residual curves, the thresholded selector, simplex margins,
Caratheodory support reduction, and dual certificates of uniqueness."""

import math
from dataclasses import dataclass, field

import numpy as np

from .gmm import FitConfig, fit, weight_step
from .model import degrees_up_to, stack_basis

AFFINE_TOL = 1e-9


class DegenerateSimplexError(ValueError):
    """Vertices are affinely dependent."""

    code = "DEGENERATE_SIMPLEX"


@dataclass
class ResidualCurve:
    Ks: list
    residuals: list                 # ||psi_hat - Psi(fit_K)||_W per K
    fits: list                      # FitReport per K (None on failure)
    eta: float | None = None
    K_hat: int | None = None
    failures: dict = field(default_factory=dict)


def residual_curve(psi_hat, group, K_max, sigma2, m_star, config=None,
                   degrees=None, W=None):
    """Best-fit residual per K = 1..K_max, warm-starting K+1 from K.

    Residuals are ||psi_hat - Psi(fit_K)||_W.  W defaults to the identity
    (plain Euclidean geometry); passing the inverse feature covariance runs
    the selector in the whitened norm, where the threshold formula of
    select_k is scale-free.  Warm starts nest the feasible sets, so the
    curve is nonincreasing up to solver slack; this is asserted.
    """
    psi_hat = np.asarray(psi_hat, dtype=float)
    degrees = tuple(degrees) if degrees is not None else degrees_up_to(m_star)
    D = stack_basis(group, degrees).D_inv
    W = np.eye(D) if W is None else np.asarray(W, dtype=float)
    base = config or FitConfig()
    rng = np.random.default_rng(base.seed)
    curve = ResidualCurve([], [], [])
    prev_thetas = None
    for K in range(1, K_max + 1):
        inits = []
        if base.init_thetas is not None and np.atleast_2d(
                np.asarray(base.init_thetas))[..., :].shape[-2] == K:
            inits.append(np.asarray(base.init_thetas, dtype=float))
        if prev_thetas is not None:
            lo, hi = base.init_box if base.init_box is not None else (-1.0, 1.0)
            for _ in range(3):
                new_atom = rng.uniform(lo, hi, size=(1, group.p))
                inits.append(np.vstack([prev_thetas, new_atom]))
        cfg = FitConfig(max_iter=base.max_iter, grad_tol=base.grad_tol,
                        theta_step=base.theta_step, restarts=base.restarts,
                        seed=int(rng.integers(0, 2 ** 63 - 1)),
                        align_every=base.align_every,
                        init_thetas=np.stack(inits) if inits else None,
                        init_box=base.init_box)
        try:
            rep = fit(psi_hat, W, group, K, sigma2, None, config=cfg,
                      degrees=degrees)
        except Exception as exc:  # propagate per-K failures into the record
            curve.Ks.append(K)
            curve.residuals.append(np.inf)
            curve.fits.append(None)
            curve.failures[K] = repr(exc)
            continue
        curve.Ks.append(K)
        curve.residuals.append(math.sqrt(2.0 * rep.objective))
        curve.fits.append(rep)
        prev_thetas = rep.params.thetas
    finite = [r for r in curve.residuals if np.isfinite(r)]
    for a, b in zip(finite, finite[1:]):
        if b > a + 1e-9 * (1.0 + a):
            raise AssertionError("residual curve increased despite warm starts")
    return curve


def selection_threshold(n, D_inv, tau=2.0, t=None):
    t = math.log(n) if t is None else t
    x = (D_inv + t) / n
    return tau * (math.sqrt(x) + x)


def select_k(curve, n, D_inv, tau=2.0, t=None):
    """Smallest K with residual below the threshold; K_max+1 sentinel."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    eta = selection_threshold(n, D_inv, tau, t)
    curve.eta = eta
    for K, r in zip(curve.Ks, curve.residuals):
        if r <= eta:
            curve.K_hat = K
            return K
    curve.K_hat = curve.Ks[-1] + 1
    return curve.K_hat


def simplex_margin(vertices, w):
    """Per-facet distances w_j * h_j of the mixture point, and their minimum.

    h_j is the height of vertex j over the affine hull of the others.  For a
    single vertex there are no facets; the margin is infinite by convention.
    """
    V = np.atleast_2d(np.asarray(vertices, dtype=float))
    w = np.asarray(w, dtype=float)
    K = V.shape[0]
    if K == 1:
        return np.empty(0), np.inf
    diffs = V[:-1] - V[-1]
    sv = np.linalg.svd(diffs, compute_uv=False)
    scale = max(1.0, float(sv[0]))
    if len(sv) < K - 1 or sv[-1] <= AFFINE_TOL * scale:
        raise DegenerateSimplexError("vertices are affinely dependent")
    dists = np.empty(K)
    for j in range(K):
        others = np.delete(V, j, axis=0)
        u0 = others[0]
        rel = V[j] - u0
        if K > 2:
            Z = (others[1:] - u0).T  # columns span the facet directions
            coef, *_ = np.linalg.lstsq(Z, rel, rcond=None)
            rel = rel - Z @ coef
        dists[j] = np.linalg.norm(rel)
    facet = w * dists
    return facet, float(facet.min())


def caratheodory_reduce(atoms, weights, tol=1e-12):
    """Reduce a convex representation to support size <= D+1.

    Exact duplicate atoms are merged first; then the constructive null-vector
    elimination runs until the support is small enough.  The represented
    point is preserved to 1e-10 throughout.
    """
    V = np.atleast_2d(np.asarray(atoms, dtype=float)).copy()
    w = np.asarray(weights, dtype=float).copy()
    D = V.shape[1]
    point = w @ V

    # merge duplicates (sums their weights, cannot move the point)
    keep = []
    for i in range(V.shape[0]):
        for j in keep:
            if np.max(np.abs(V[i] - V[j])) <= tol * (1.0 + np.max(np.abs(V[j]))):
                w[j] += w[i]
                break
        else:
            keep.append(i)
    V, w = V[keep], w[keep]

    while V.shape[0] > D + 1:
        m = V.shape[0]
        Aug = np.vstack([V.T, np.ones(m)])
        _, _, vh = np.linalg.svd(Aug)
        beta = vh[-1]
        if beta.max() <= 0:
            beta = -beta
        pos = beta > 1e-14
        tstar = np.min(w[pos] / beta[pos])
        w = w - tstar * beta
        w = np.where(w < 1e-14, 0.0, w)
        live = w > 0
        V, w = V[live], w[live]
        if np.max(np.abs(w @ V - point)) > 1e-10 * (1.0 + np.max(np.abs(point))):
            raise AssertionError("elimination moved the represented point")
    return V, w


@dataclass
class DualCertificate:
    lam: np.ndarray      # unit normal of the supporting functional
    offset: float        # face level in the unit-normal gauge
    eta: float           # slab gap in the <lam, v_k> = 1 gauge


def dual_certificate(F_vertices, probe_points, tol=1e-9):
    """Linear functional certifying uniqueness of the K-sparse face.

    Tries the minimum-norm solution of <lam, v_k> = 1 first; if that
    functional does not separate, searches for the max-margin one by linear
    programming (the min-norm candidate routinely fails to certify exposed
    faces of moment varieties).  The gap is eta = 1 - max <lam, probe> over
    probes off the face; returns None when no functional achieves eta > 0,
    raises DegenerateSimplexError when the equality system is inconsistent.
    """
    V = np.atleast_2d(np.asarray(F_vertices, dtype=float))
    K, D = V.shape
    probes = np.atleast_2d(np.asarray(probe_points, dtype=float))
    lam, *_ = np.linalg.lstsq(V, np.ones(K), rcond=None)
    scale = max(1.0, float(np.max(np.abs(V))))
    if np.max(np.abs(V @ lam - 1.0)) > tol * scale:
        raise DegenerateSimplexError("no functional takes value 1 on all vertices")

    off_face = []
    eye = np.eye(D)
    for pnt in probes:
        wts = weight_step(V.T, pnt, eye)
        if np.linalg.norm(V.T @ wts - pnt) > tol * scale:
            off_face.append(pnt)
    if off_face:
        P = np.stack(off_face)
        eta = float(1.0 - (P @ lam).max())
        if eta <= 0:
            lam, eta = _max_margin_functional(V, P, lam, eta)
    else:
        eta = 1.0
    if eta <= 0:
        return None
    norm = float(np.linalg.norm(lam))
    return DualCertificate(lam / norm, 1.0 / norm, eta)


def _max_margin_functional(V, P, lam0, eta0):
    """max eta s.t. <lam, v_k> = 1 and <lam, p> <= 1 - eta on the probes."""
    from scipy.optimize import linprog
    K, D = V.shape
    cost = np.zeros(D + 1)
    cost[-1] = -1.0
    res = linprog(cost,
                  A_ub=np.column_stack([P, np.ones(P.shape[0])]),
                  b_ub=np.ones(P.shape[0]),
                  A_eq=np.column_stack([V, np.zeros(K)]),
                  b_eq=np.ones(K),
                  bounds=[(None, None)] * D + [(None, 1.0)],
                  method="highs")
    if not res.success:
        return lam0, eta0
    return res.x[:D], float(-res.fun)
