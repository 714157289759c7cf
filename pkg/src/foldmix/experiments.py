"""Monte Carlo experiment harness: reproducible desk-scale studies of the
concentration rate, J-test calibration, K-selection, contamination, and the
nonasymptotic error bound."""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .gmm import FitConfig, chart_jacobian, chart_pack, fit, j_test
from .groups import parse_group_spec
from .metrics import bottleneck_matching, orbit_cost_matrix
from .model import MixtureParams, degrees_up_to, mixture_stack_values, sample
from .selection import residual_curve, select_k
from .stacks import covariance, empirical_stack

_MASK = (1 << 64) - 1


def derive_seed(master, r):
    """64-bit splitmix of (master, replicate); adding replicates never
    perturbs earlier ones."""
    x = (int(master) + 0x9E3779B97F4A7C15 * (int(r) + 1)) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


KINDS = ("rate_check", "j_calibration", "k_consistency",
         "contamination_sweep", "bound_check")


@dataclass
class ExperimentSpec:
    kind: str
    model: dict
    ns: list
    replicates: int
    seed: int
    eps: list = field(default_factory=lambda: [0.0])
    estimators: list = field(default_factory=lambda: ["mean"])
    cov: str = "iid"
    tau: float = 2.0
    K_max: int = 3
    contam_value: float = 0.0
    restarts: int = 5
    oracle_init: bool = True
    sigma_min_floor: float = 0.0
    out: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        ns = [int(n) for n in self.ns]
        if any(n <= 0 for n in ns) or ns != sorted(ns):
            raise ValueError("n values must be positive and increasing")
        self.ns = ns

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))


def model_from_dict(m):
    group = parse_group_spec(m["group"])
    params = MixtureParams(np.asarray(m["thetas"], dtype=float),
                           np.asarray(m["weights"], dtype=float),
                           m["sigma2"])
    return group, params, int(m["m_star"])


def orbit_error(group, true_thetas, est_thetas):
    """Bottleneck matching distance between the two orbit multisets."""
    C = orbit_cost_matrix(group, np.atleast_2d(true_thetas),
                          np.atleast_2d(est_thetas))
    value, assignment, _ = bottleneck_matching(C)
    return value, assignment


def aligned_chart_diff(group, true_thetas, true_w, est_thetas, est_w):
    """Chart difference xi_hat - xi_star after orbit/permutation alignment.

    Estimated components are permuted by the bottleneck assignment and each
    is replaced by its orbit image nearest the matched true component.
    """
    true_thetas = np.atleast_2d(true_thetas)
    est_thetas = np.atleast_2d(est_thetas)
    _, assignment = orbit_error(group, true_thetas, est_thetas)
    aligned = np.empty_like(est_thetas)
    new_w = np.empty_like(np.asarray(est_w, dtype=float))
    for i in range(true_thetas.shape[0]):
        j = int(assignment[i])
        images = group.orbit(est_thetas[j])
        k = int(np.argmin(np.linalg.norm(images - true_thetas[i], axis=1)))
        aligned[i] = images[k]
        new_w[i] = est_w[j]
    return chart_pack(aligned, new_w) - chart_pack(true_thetas, true_w)


def _loglog_slope(ns, meds):
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(meds, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def _fit_config(spec, group, params, data, seed):
    init = params.thetas if spec.oracle_init else None
    from .gmm import init_box_from_data
    return FitConfig(restarts=spec.restarts, seed=seed, init_thetas=init,
                     init_box=init_box_from_data(data))


def _run_rate_check(spec):
    group, params, m_star = model_from_dict(spec.model)
    degrees = degrees_up_to(m_star)
    psi_star = mixture_stack_values(group, params.thetas, params.weights,
                                    params.sigma2, degrees)
    estimator = spec.estimators[0]
    rows = []
    for n in spec.ns:
        for r in range(spec.replicates):
            data = sample(params, group, n, derive_seed(spec.seed, r * 1000003 + n))
            est = empirical_stack(group, data, m_star, estimator=estimator)
            err = float(np.linalg.norm(est.values - psi_star))
            rows.append({"n": n, "replicate": r, "error": err})
    meds = [float(np.median([row["error"] for row in rows if row["n"] == n]))
            for n in spec.ns]
    summary = {"kind": spec.kind, "ns": spec.ns, "median_error": meds,
               "loglog_slope": _loglog_slope(spec.ns, meds) if len(spec.ns) > 1 else None}
    return rows, summary


def _run_j_calibration(spec):
    group, params, m_star = model_from_dict(spec.model)
    n = spec.ns[0]
    rows = []
    for r in range(spec.replicates):
        seed = derive_seed(spec.seed, r)
        data = sample(params, group, n, seed)
        psi_hat = empirical_stack(group, data, m_star).values
        cov = covariance(group, data, m_star, mode=spec.cov)
        W = np.linalg.inv(cov.matrix)
        rep = fit(psi_hat, W, group, params.K, params.sigma2, m_star,
                  config=_fit_config(spec, group, params, data, seed))
        jt = j_test(rep, psi_hat, W, n)
        rows.append({"replicate": r, "n": n, "J": jt.J, "df": jt.df,
                     "p_value": jt.p_value if jt.p_value is not None else ""})
    Js = [row["J"] for row in rows]
    ps = [row["p_value"] for row in rows if row["p_value"] != ""]
    summary = {"kind": spec.kind, "n": n, "mean_J": float(np.mean(Js)),
               "df": rows[0]["df"],
               "rejection_rate_5pct": float(np.mean([p < 0.05 for p in ps]))}
    return rows, summary


def _run_k_consistency(spec):
    group, params, m_star = model_from_dict(spec.model)
    degrees = degrees_up_to(m_star)
    D = len(mixture_stack_values(group, params.thetas, params.weights,
                                 params.sigma2, degrees))
    n = spec.ns[0]
    rows = []
    for r in range(spec.replicates):
        seed = derive_seed(spec.seed, r)
        data = sample(params, group, n, seed)
        psi_hat = empirical_stack(group, data, m_star).values
        W = np.linalg.inv(covariance(group, data, m_star).matrix)
        from .gmm import init_box_from_data
        cfg = FitConfig(restarts=spec.restarts, seed=seed,
                        init_box=init_box_from_data(data))
        curve = residual_curve(psi_hat, group, spec.K_max, params.sigma2,
                               m_star, config=cfg, W=W)
        K_hat = select_k(curve, n, D, tau=spec.tau)
        row = {"replicate": r, "n": n, "K_hat": K_hat, "eta": curve.eta}
        for K, res in zip(curve.Ks, curve.residuals):
            row[f"r{K}"] = res
        rows.append(row)
    khats = [row["K_hat"] for row in rows]
    summary = {"kind": spec.kind, "n": n, "K_true": params.K, "tau": spec.tau,
               "frequency": {str(k): khats.count(k) / len(khats)
                             for k in sorted(set(khats))},
               "P_correct": khats.count(params.K) / len(khats)}
    return rows, summary


def _run_contamination_sweep(spec):
    group, params, m_star = model_from_dict(spec.model)
    degrees = degrees_up_to(m_star)
    psi_star = mixture_stack_values(group, params.thetas, params.weights,
                                    params.sigma2, degrees)
    n = spec.ns[0]
    rows = []
    for eps in spec.eps:
        for est in spec.estimators:
            for r in range(spec.replicates):
                seed = derive_seed(spec.seed, r)
                data = sample(params, group, n, seed)
                n_bad = int(math.floor(eps * n))
                if n_bad:
                    # leading rows, matching the deterministic contiguous
                    # MOM blocks
                    data[:n_bad] = spec.contam_value
                stack = empirical_stack(group, data, m_star, estimator=est)
                err = float(np.linalg.norm(stack.values - psi_star))
                rows.append({"eps": eps, "estimator": est, "replicate": r,
                             "n": n, "error": err})
    summary = {"kind": spec.kind, "n": n, "contam_value": spec.contam_value,
               "median_error": {}}
    for eps in spec.eps:
        for est in spec.estimators:
            errs = [row["error"] for row in rows
                    if row["eps"] == eps and row["estimator"] == est]
            summary["median_error"][f"{est}@eps={eps}"] = float(np.median(errs))
    return rows, summary


def _run_bound_check(spec):
    group, params, m_star = model_from_dict(spec.model)
    degrees = degrees_up_to(m_star)
    psi_star = mixture_stack_values(group, params.thetas, params.weights,
                                    params.sigma2, degrees)
    G_star = chart_jacobian(group, params.thetas, params.weights,
                            params.sigma2, degrees)
    n = spec.ns[0]
    rows = []
    for r in range(spec.replicates):
        seed = derive_seed(spec.seed, r)
        data = sample(params, group, n, seed)
        psi_hat = empirical_stack(group, data, m_star).values
        cov = covariance(group, data, m_star)
        Sinv = np.linalg.inv(cov.matrix)
        IQ = G_star.T @ Sinv @ G_star
        lam_min = float(np.linalg.eigvalsh(0.5 * (IQ + IQ.T))[0])
        rhs = 4.0 / lam_min * float(np.linalg.norm(G_star.T @ Sinv @ (psi_hat - psi_star)))
        rep = fit(psi_hat, Sinv, group, params.K, params.sigma2, m_star,
                  config=_fit_config(spec, group, params, data, seed))
        diff = aligned_chart_diff(group, params.thetas, params.weights,
                                  rep.params.thetas, rep.params.weights)
        lhs = float(np.linalg.norm(diff))
        rows.append({"replicate": r, "n": n, "lhs": lhs, "rhs": rhs,
                     "holds": int(lhs <= rhs), "lambda_min": lam_min,
                     "sigma_min_IQ": rep.iq_sigma_min})
    ok = [row for row in rows if row["sigma_min_IQ"] is not None
          and row["sigma_min_IQ"] >= spec.sigma_min_floor]
    summary = {"kind": spec.kind, "n": n,
               "fraction_holds": float(np.mean([row["holds"] for row in rows])),
               "fraction_holds_well_conditioned":
                   float(np.mean([row["holds"] for row in ok])) if ok else None,
               "n_well_conditioned": len(ok),
               "sigma_min_floor": spec.sigma_min_floor}
    return rows, summary


_RUNNERS = {
    "rate_check": _run_rate_check,
    "j_calibration": _run_j_calibration,
    "k_consistency": _run_k_consistency,
    "contamination_sweep": _run_contamination_sweep,
    "bound_check": _run_bound_check,
}


def run_experiment(spec):
    """Run the replicate grid; returns (rows, summary), both deterministic
    given spec.seed.  Row order follows replicate indices."""
    return _RUNNERS[spec.kind](spec)


def write_rows_csv(path, rows):
    fieldnames = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def rows_csv_bytes(rows):
    import io
    fieldnames = list(rows[0].keys())
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue().encode()
