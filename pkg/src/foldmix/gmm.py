"""Invariant-moment GMM fitting on the slice.

Alternates an exact simplex-constrained weight step (active-set KKT solve)
with a damped Gauss-Newton or Armijo projected-gradient step on the
component means, aligning to canonical orbit representatives as it goes.
One-step efficient update, curvature bias correction, quotient-Fisher
diagnostics, overidentification test, confidence radii, and greedy moment
selection live here too.
"""

import math
from dataclasses import dataclass

import numpy as np

from .chi2 import chi2_quantile, chi2_sf
from .groups import canonical_rep
from .model import (MixtureParams, degrees_up_to, phi_jacobian, phi_values,
                    phi_values_batch, stack_basis)

COND_LIMIT = 1e12
BIAS_COND_LIMIT = 1e10


class CollinearAtomsError(RuntimeError):
    """Atoms collide on invariants: the Gram/Jacobian system is singular."""

    code = "COLLINEAR"


def weight_step(M, psi_hat, W, return_active=False):
    """Exact minimizer of 0.5 ||psi_hat - M w||_W^2 over the simplex.

    Active-set scheme: solve the equality-constrained KKT system on the free
    coordinates, clamp the most negative coordinate while any is negative
    (at most K-1 clamps), then reinstate clamped coordinates whose KKT
    multiplier comes out negative (loop capped at 3K).
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    K = M.shape[1]
    if K == 1:
        w = np.ones(1)
        return (w, ()) if return_active else w
    G = M.T @ W @ M
    b = M.T @ W @ psi_hat
    free = np.ones(K, dtype=bool)
    w = np.full(K, 1.0 / K)
    lam = 0.0
    for _ in range(3 * K):
        idx = np.flatnonzero(free)
        nf = len(idx)
        kkt = np.zeros((nf + 1, nf + 1))
        kkt[:nf, :nf] = G[np.ix_(idx, idx)]
        kkt[:nf, nf] = 1.0
        kkt[nf, :nf] = 1.0
        rhs = np.concatenate([b[idx], [1.0]])
        sol = _solve_or_collinear(kkt, rhs, G)
        wf, lam = sol[:nf], sol[nf]
        if np.any(wf < -1e-12) and nf > 1:
            free[idx[int(np.argmin(wf))]] = False
            continue
        w = np.zeros(K)
        w[idx] = np.maximum(wf, 0.0)
        # reduced gradient on clamped coordinates must be >= 0 at a KKT point
        grad = G @ w - b + lam
        clamped = np.flatnonzero(~free)
        if clamped.size:
            worst = clamped[int(np.argmin(grad[clamped]))]
            if grad[worst] < -1e-10:
                free[worst] = True
                continue
        break
    if return_active:
        return w, tuple(np.flatnonzero(~free).tolist())
    return w


def _solve_or_collinear(kkt, rhs, G):
    try:
        sol = np.linalg.solve(kkt, rhs)
        if np.all(np.isfinite(sol)):
            return sol
    except np.linalg.LinAlgError:
        pass
    ridge = 1e-12 * (np.trace(G) / G.shape[0] + 1.0)
    kkt2 = kkt.copy()
    nf = kkt.shape[0] - 1
    kkt2[:nf, :nf] += ridge * np.eye(nf)
    try:
        sol = np.linalg.solve(kkt2, rhs)
    except np.linalg.LinAlgError:
        raise CollinearAtomsError("weight-step Gram matrix is singular") from None
    if not np.all(np.isfinite(sol)):
        raise CollinearAtomsError("weight-step Gram matrix is singular")
    return sol


@dataclass
class FitConfig:
    max_iter: int = 200
    grad_tol: float = 1e-8
    step_rule: str = "armijo"          # "armijo" | "fixed"
    eta: float = 1.0                   # step size for the fixed rule
    armijo_beta: float = 0.5
    armijo_c: float = 1e-4
    theta_step: str = "gauss_newton"   # "gauss_newton" | "gradient"
    nu0: float = 1e-3                  # initial Levenberg damping
    restarts: int = 20
    seed: int = 0
    align_every: int = 1
    init_thetas: np.ndarray | None = None   # (K, d) or (R, K, d)
    init_box: tuple | None = None           # (lo, hi) arrays, length d


@dataclass
class FitReport:
    params: MixtureParams
    converged: bool
    iterations: int
    objective: float
    grad_norm: float
    trajectory: np.ndarray            # rows (objective, grad_norm, ||r||_W)
    active_set_history: list
    group: object
    degrees: tuple
    iq_sigma_min: float | None = None
    iq_cond: float | None = None
    J: float | None = None
    df: int | None = None
    p_value: float | None = None
    n_restarts: int = 1
    collinear: bool = False


def _phi_cols(group, thetas, sigma2, degrees):
    return phi_values_batch(group, thetas, sigma2, degrees).T


def _profiled(psi_hat, W, group, thetas, sigma2, degrees):
    M = _phi_cols(group, thetas, sigma2, degrees)
    w, active = weight_step(M, psi_hat, W, return_active=True)
    r = psi_hat - M @ w
    obj = 0.5 * float(r @ W @ r)
    return obj, w, M, r, active


def init_box_from_data(data):
    """Componentwise restart box from the 95% quantiles of |data|."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    hi = np.quantile(np.abs(data), 0.95, axis=0) + 1e-6
    return (-hi, hi)


def _initial_thetas(config, K, d, psi_hat):
    inits = []
    if config.init_thetas is not None:
        arr = np.asarray(config.init_thetas, dtype=float)
        if arr.ndim == 2:
            arr = arr[None]
        inits.extend(list(arr))
    rng = np.random.default_rng(config.seed)
    if config.init_box is not None:
        lo, hi = config.init_box
    else:
        s = 1.0 + float(np.max(np.abs(psi_hat))) ** 0.5
        lo, hi = -s * np.ones(d), s * np.ones(d)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (d,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (d,))
    for _ in range(config.restarts):
        inits.append(rng.uniform(lo, hi, size=(K, d)))
    return inits


def _fit_single(psi_hat, W, group, theta0, sigma2, degrees, config):
    thetas = np.atleast_2d(np.asarray(theta0, dtype=float)).copy()
    K, d = thetas.shape
    nu = config.nu0
    trajectory = []
    active_hist = []
    converged = False
    it = 0
    obj, w, M, r, active = _profiled(psi_hat, W, group, thetas, sigma2, degrees)
    obj_floor = 1e-24 * (1.0 + float(psi_hat @ psi_hat))
    stalls = 0
    for it in range(1, config.max_iter + 1):
        Jk = [phi_jacobian(group, thetas[k], sigma2, None, degrees=degrees)
              for k in range(K)]
        grad = np.concatenate([-w[k] * (Jk[k].T @ (W @ r)) for k in range(K)])
        gn = float(np.linalg.norm(grad))
        trajectory.append((obj, gn, math.sqrt(2.0 * obj)))
        active_hist.append(active)
        if gn <= config.grad_tol or obj <= obj_floor:
            converged = True
            break

        obj_prev = obj
        stepped = False
        if config.theta_step == "gauss_newton":
            stepped, thetas, obj, w, M, r, active, nu = _gauss_newton_step(
                psi_hat, W, group, thetas, sigma2, degrees, w, M, r, obj, nu, Jk)
        if not stepped:
            res = _armijo_step(psi_hat, W, group, thetas, sigma2, degrees,
                               grad.reshape(K, d), obj, config)
            if res is None:
                converged = gn <= 10 * config.grad_tol
                break
            thetas, obj, w, M, r, active = res
        # numerically stationary: objective no longer moves at fp resolution
        stalls = stalls + 1 if obj_prev - obj <= 1e-14 * (1.0 + abs(obj_prev)) else 0
        if stalls >= 3:
            converged = True
            break
        if config.align_every and it % config.align_every == 0:
            aligned = np.stack([canonical_rep(group, th) for th in thetas])
            thetas = aligned
    trajectory = np.array(trajectory if trajectory else [(obj, 0.0, math.sqrt(2 * obj))])
    return thetas, w, obj, converged, it, trajectory, active_hist


def _gauss_newton_step(psi_hat, W, group, thetas, sigma2, degrees, w, M, r, obj,
                       nu, Jk):
    """Levenberg-damped Gauss-Newton on the weight-profiled residual."""
    K, d = thetas.shape
    Jbar = np.column_stack([w[k] * Jk[k] for k in range(K)])
    # profile out the feasible weight directions M * (1-perp); the affine
    # constraint leaves only K-1 of them (none at K = 1)
    if K > 1:
        B = np.vstack([np.eye(K - 1), -np.ones((1, K - 1))])
        C = M @ B
        CWC = C.T @ W @ C
        try:
            P = np.eye(M.shape[0]) - C @ np.linalg.solve(CWC, C.T @ W)
        except np.linalg.LinAlgError:
            return False, thetas, obj, w, M, r, None, nu
    else:
        P = np.eye(M.shape[0])
    WP = W @ P
    A = Jbar.T @ WP @ Jbar
    A = 0.5 * (A + A.T)
    g2 = Jbar.T @ (WP @ r)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(g2))):
        return False, thetas, obj, w, M, r, None, nu
    beta = 2.0
    scale = max(float(np.trace(A)) / A.shape[0], 1e-300)
    for _ in range(25):
        if nu > 1e12:
            break
        try:
            delta = np.linalg.solve(A + nu * scale * np.eye(A.shape[0]), g2)
        except np.linalg.LinAlgError:
            nu *= beta
            beta *= 2.0
            continue
        pred = float(delta @ g2) - 0.5 * float(delta @ A @ delta)
        if not np.isfinite(pred) or pred <= 0:
            nu *= beta
            beta *= 2.0
            continue
        cand = thetas + delta.reshape(K, d)
        obj2, w2, M2, r2, active2 = _profiled(psi_hat, W, group, cand, sigma2, degrees)
        actual = obj - obj2 if np.isfinite(obj2) else -np.inf
        rho = actual / pred
        if rho > 1e-4:
            # Nielsen's damping update: shrink on good ratios, never ratchet
            nu = max(nu * max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3), 1e-14)
            return True, cand, obj2, w2, M2, r2, active2, nu
        nu *= beta
        beta *= 2.0
    return False, thetas, obj, w, M, r, None, min(nu, 1e12)


def _armijo_step(psi_hat, W, group, thetas, sigma2, degrees, grad, obj, config):
    """Backtracking line search along the negative profiled gradient."""
    g2 = float(np.sum(grad * grad))
    if g2 == 0.0:
        return None
    t = config.eta
    for _ in range(60):
        cand = thetas - t * grad
        obj2, w2, M2, r2, active2 = _profiled(psi_hat, W, group, cand, sigma2, degrees)
        if np.isfinite(obj2) and obj2 <= obj - config.armijo_c * t * g2:
            return cand, obj2, w2, M2, r2, active2
        if config.step_rule == "fixed":
            return None
        t *= config.armijo_beta
    return None


def _canonical_sorted(group, thetas, weights):
    reps = np.stack([canonical_rep(group, th) for th in thetas])
    order = sorted(range(len(weights)), key=lambda k: tuple(reps[k]))
    return reps[order], np.asarray(weights)[order]


def fit(psi_hat, W, group, K, sigma2, m_star, config=None, degrees=None):
    """Run the alternating invariant-GMM solver with restarts.

    Restarts are ranked by objective, ties broken by the lexicographically
    smallest canonical parameter vector.  The report's trajectory covers the
    winning run only.
    """
    psi_hat = np.asarray(psi_hat, dtype=float)
    config = config or FitConfig()
    degrees = tuple(degrees) if degrees is not None else degrees_up_to(m_star)
    basis = stack_basis(group, degrees)
    if psi_hat.shape != (basis.D_inv,):
        raise ValueError(f"psi_hat must have length {basis.D_inv}")
    W = np.asarray(W, dtype=float)
    best = None
    collinear = False
    inits = _initial_thetas(config, K, group.p, psi_hat)
    for theta0 in inits:
        try:
            res = _fit_single(psi_hat, W, group, theta0, sigma2, degrees, config)
        except CollinearAtomsError:
            collinear = True
            continue
        thetas, w, obj, conv, its, traj, active = res
        reps, w_sorted = _canonical_sorted(group, thetas, w)
        key = (obj, tuple(reps.ravel()) + tuple(w_sorted))
        if best is None or key < best[0]:
            best = (key, reps, w_sorted, obj, conv, its, traj, active)
    if best is None:
        raise CollinearAtomsError("all restarts hit collinear atoms")
    _, reps, w_sorted, obj, conv, its, traj, active = best
    params = MixtureParams(reps, w_sorted, sigma2)
    report = FitReport(params=params, converged=conv, iterations=its,
                       objective=obj, grad_norm=float(traj[-1, 1]),
                       trajectory=traj, active_set_history=active,
                       group=group, degrees=degrees,
                       n_restarts=len(inits), collinear=collinear)
    try:
        qf = chart_fisher(group, reps, w_sorted, sigma2, degrees, W)
        report.iq_sigma_min = qf.sigma_min
        report.iq_cond = qf.cond
    except np.linalg.LinAlgError:
        pass
    return report


# ---------------------------------------------------------------------------
# joint chart (all component means plus K-1 free weights; last weight
# eliminated) used by the one-step update, bias correction and diagnostics


def chart_pack(thetas, weights):
    thetas = np.atleast_2d(thetas)
    return np.concatenate([thetas.ravel(), np.asarray(weights)[:-1]])


def chart_unpack(xi, K, d):
    thetas = xi[:K * d].reshape(K, d)
    a = xi[K * d:]
    return thetas, np.concatenate([a, [1.0 - a.sum()]])


def chart_psi(group, xi, K, sigma2, degrees):
    thetas, w = chart_unpack(xi, K, group.p)
    out = np.zeros(stack_basis(group, degrees).D_inv)
    for k in range(K):
        out += w[k] * phi_values(group, thetas[k], sigma2, degrees)
    return out


def chart_jacobian(group, thetas, weights, sigma2, degrees):
    """G = [w_1 J_1 ... w_K J_K | v_1 - v_K ... v_{K-1} - v_K]."""
    thetas = np.atleast_2d(thetas)
    K = thetas.shape[0]
    blocks = [weights[k] * phi_jacobian(group, thetas[k], sigma2, None, degrees=degrees)
              for k in range(K)]
    cols = [np.column_stack(blocks)] if K else []
    if K > 1:
        v = [phi_values(group, thetas[k], sigma2, degrees) for k in range(K)]
        cols.append(np.column_stack([v[i] - v[K - 1] for i in range(K - 1)]))
    return np.column_stack(cols)


def one_step(thetas, weights, psi_hat, W_hat, group, sigma2, m_star, degrees=None):
    """Single Newton-type correction in the joint chart.

    Weights are clamped at zero and renormalized if the step exits the
    simplex.  Raises CollinearAtomsError on a rank-deficient chart Jacobian.
    """
    degrees = tuple(degrees) if degrees is not None else degrees_up_to(m_star)
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    weights = np.asarray(weights, dtype=float)
    K, d = thetas.shape
    G = chart_jacobian(group, thetas, weights, sigma2, degrees)
    A = G.T @ W_hat @ G
    A = 0.5 * (A + A.T)
    evals = np.linalg.eigvalsh(A)
    if evals[0] <= 0 or evals[-1] / evals[0] > COND_LIMIT:
        raise CollinearAtomsError("chart Jacobian is rank deficient")
    A += 1e-13 * (np.trace(A) / A.shape[0]) * np.eye(A.shape[0])
    xi = chart_pack(thetas, weights)
    resid = psi_hat - chart_psi(group, xi, K, sigma2, degrees)
    xi = xi + np.linalg.solve(A, G.T @ (W_hat @ resid))
    new_thetas, new_w = chart_unpack(xi, K, d)
    new_w = np.maximum(new_w, 0.0)
    s = new_w.sum()
    new_w = new_w / s if s > 0 else np.full(K, 1.0 / K)
    return new_thetas, new_w


@dataclass
class BiasCorrection:
    applied: bool
    correction: np.ndarray | None = None
    b: np.ndarray | None = None
    reason: str = ""


def bias_correct(thetas, weights, sigma_hat, group, sigma2, m_star, n, degrees=None):
    """Remove the (1/n) curvature bias of the efficient GMM estimator.

    b = 0.5 sum_r (G' Sigma^-1 e_r) tr(H_r I_Q^-1) with H_r the chart-map
    Hessians by central second differences.  The second-order expansion of
    the normal equations gives E[xi_hat - xi*] = -(1/n) I_Q^-1 b, so the
    correction is *added*; the 1-d folded normal (bias -Sigma/(8 mu^3 n))
    pins the sign.  Skipped (with a diagnostic) when I_Q is ill-conditioned.
    """
    degrees = tuple(degrees) if degrees is not None else degrees_up_to(m_star)
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    weights = np.asarray(weights, dtype=float)
    K, d = thetas.shape
    G = chart_jacobian(group, thetas, weights, sigma2, degrees)
    SG = np.linalg.solve(sigma_hat, G)          # Sigma^-1 G
    IQ = G.T @ SG
    IQ = 0.5 * (IQ + IQ.T)
    evals = np.linalg.eigvalsh(IQ)
    if evals[0] <= 0 or evals[-1] / evals[0] > BIAS_COND_LIMIT:
        info = BiasCorrection(False, reason="I_Q condition number above 1e10")
        return MixtureParams(thetas, weights, sigma2), info

    xi = chart_pack(thetas, weights)
    q = xi.shape[0]
    D = G.shape[0]
    h = 1e-4 * (1.0 + np.abs(xi))

    def psi_at(v):
        return chart_psi(group, v, K, sigma2, degrees)

    f0 = psi_at(xi)
    H = np.empty((D, q, q))
    plus = np.empty((q, D))
    minus = np.empty((q, D))
    for i in range(q):
        e = np.zeros(q)
        e[i] = h[i]
        plus[i] = psi_at(xi + e)
        minus[i] = psi_at(xi - e)
        H[:, i, i] = (plus[i] - 2 * f0 + minus[i]) / h[i] ** 2
    for i in range(q):
        for j in range(i + 1, q):
            ei = np.zeros(q)
            ej = np.zeros(q)
            ei[i] = h[i]
            ej[j] = h[j]
            val = (psi_at(xi + ei + ej) - psi_at(xi + ei - ej)
                   - psi_at(xi - ei + ej) + psi_at(xi - ei - ej)) / (4 * h[i] * h[j])
            H[:, i, j] = val
            H[:, j, i] = val

    IQinv = np.linalg.inv(IQ)
    traces = np.einsum("rij,ji->r", H, IQinv)
    b = 0.5 * (SG.T @ traces)
    correction = np.linalg.solve(IQ, b) / n
    xi_bc = xi + correction
    new_thetas, new_w = chart_unpack(xi_bc, K, d)
    new_w = np.maximum(new_w, 0.0)
    s = new_w.sum()
    new_w = new_w / s if s > 0 else np.full(K, 1.0 / K)
    info = BiasCorrection(True, correction=correction, b=b)
    return MixtureParams(new_thetas, new_w, sigma2), info


@dataclass
class QuotientFisher:
    IQ: np.ndarray
    sigma_min: float
    cond: float
    stability: float   # 2 / sigma_min, the local Lipschitz constant scale


def chart_fisher(group, thetas, weights, sigma2, degrees, W_hat):
    G = chart_jacobian(group, np.atleast_2d(thetas), weights, sigma2, degrees)
    IQ = G.T @ W_hat @ G
    IQ = 0.5 * (IQ + IQ.T)
    evals = np.linalg.eigvalsh(IQ)
    smin = float(evals[0])
    cond = float(evals[-1] / evals[0]) if evals[0] > 0 else np.inf
    stability = 2.0 / smin if smin > 0 else np.inf
    return QuotientFisher(IQ, smin, cond, stability)


def quotient_fisher_diag(report, W_hat):
    """Quotient Fisher diagnostics at a fit's parameters (never raises on
    degenerate spectra; they are reported as inf condition numbers)."""
    p = report.params
    qf = chart_fisher(report.group, p.thetas, p.weights, p.sigma2,
                      report.degrees, W_hat)
    report.iq_sigma_min = qf.sigma_min
    report.iq_cond = qf.cond
    return qf


@dataclass
class JTestResult:
    J: float
    df: int
    p_value: float | None


def j_df(D_inv, K, d):
    """Overidentification degrees of freedom: D_inv - K d - (K - 1)."""
    return D_inv - K * d - (K - 1)


def j_test(report, psi_hat, W_hat, n):
    """J = n r' W r with r the fitted residual; upper chi^2_df tail."""
    p = report.params
    M = _phi_cols(report.group, p.thetas, p.sigma2, report.degrees)
    r = np.asarray(psi_hat, dtype=float) - M @ p.weights
    J = float(n * r @ W_hat @ r)
    df = j_df(M.shape[0], p.K, p.d)
    p_value = chi2_sf(J, df) if df > 0 else None
    report.J, report.df, report.p_value = J, df, p_value
    return JTestResult(J, df, p_value)


def confidence_radius(s_min, D_inv, n, alpha):
    """Hausdorff confidence radius s_min^{-1} sqrt(chi2_{D,1-alpha} / n)."""
    if s_min <= 0:
        raise ValueError("s_min must be positive")
    return float(np.sqrt(chi2_quantile(1.0 - alpha, D_inv) / n) / s_min)


def greedy_moment_select(group, candidate_degrees, base_set, budget, sigma2,
                         probe_thetas, probe_weights, W=None, psi_hat=None,
                         n=None, kappa=None):
    """Greedy degree-block selection maximizing sigma_min(G' W G).

    W and psi_hat, when given, live on the *universe* stack (all candidate
    and base degrees, sorted ascending) and are sliced per subset.  The IC
    column J + kappa*df (kappa defaults to log n) is filled only when
    psi_hat and n are available; sigma_min and df are always reported.
    """
    base = tuple(sorted(set(int(m) for m in base_set)))
    if not base:
        raise ValueError("base_set must be nonempty")
    cands = sorted(set(int(m) for m in candidate_degrees) - set(base))
    universe = tuple(sorted(set(base) | set(cands)))
    uni_basis = stack_basis(group, universe)
    uni_slices = uni_basis.slices()
    probe_thetas = np.atleast_2d(np.asarray(probe_thetas, dtype=float))
    probe_weights = np.asarray(probe_weights, dtype=float)
    K, d = probe_thetas.shape
    if kappa is None and n is not None:
        kappa = math.log(n)

    def subset_indices(degs):
        return np.concatenate([np.arange(uni_slices[m].start, uni_slices[m].stop)
                               for m in degs])

    def evaluate(degs):
        basis = stack_basis(group, degs)
        G = chart_jacobian(group, probe_thetas, probe_weights, sigma2, degs)
        idx = subset_indices(degs)
        Ws = W[np.ix_(idx, idx)] if W is not None else np.eye(len(idx))
        IQ = G.T @ Ws @ G
        evals = np.linalg.eigvalsh(0.5 * (IQ + IQ.T))
        smin = float(evals[0]) if evals.size else 0.0
        df = j_df(basis.D_inv, K, d)
        row = {"degrees": degs, "sigma_min": smin, "df": df,
               "D_inv": basis.D_inv, "J": None, "gmm_ic": None}
        if psi_hat is not None and n is not None:
            r = np.asarray(psi_hat, dtype=float)[idx] - \
                sum(probe_weights[k] * phi_values(group, probe_thetas[k], sigma2, degs)
                    for k in range(K))
            J = float(n * r @ Ws @ r)
            row["J"] = J
            row["gmm_ic"] = J + kappa * df
        return row

    selected = base
    table = [evaluate(selected)]
    for _ in range(budget):
        remaining = [m for m in cands if m not in selected]
        if not remaining:
            break
        scored = []
        for m in remaining:
            degs = tuple(sorted(selected + (m,)))
            row = evaluate(degs)
            dim_m = stack_basis(group, (m,)).D_inv
            scored.append((row["sigma_min"], dim_m, -m, row, degs))
        scored.sort(reverse=True)
        _, _, _, row, degs = scored[0]
        selected = degs
        table.append(row)
    return selected, table
