"""Command-line front end: simulate, fit, select-k, molien, dist, experiment.

Exit codes: 0 success, 2 usage error, 1 runtime failure.  Every randomized
subcommand takes --seed and is bit-reproducible.
"""

import argparse
import json
import sys

import numpy as np

from . import __version__
from .experiments import (ExperimentSpec, model_from_dict, run_experiment,
                          write_rows_csv)
from .gmm import (FitConfig, chart_jacobian, confidence_radius, fit,
                  init_box_from_data, j_test)
from .groups import parse_group_spec
from .metrics import bottleneck_matching, hausdorff_multiset, orbit_cost_matrix
from .model import degrees_up_to, sample
from .molien import dim_budget, molien_family, molien_generic
from .selection import residual_curve, select_k, simplex_margin
from .stacks import covariance, empirical_stack, parse_estimator


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _emit(payload, out):
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _read_csv(path, header=False):
    return np.loadtxt(path, delimiter=",", ndmin=2, skiprows=1 if header else 0)


def _parse_sigma(s):
    parts = [float(x) for x in s.split(",")]
    return parts[0] if len(parts) == 1 else np.array(parts)


def _parse_cov(s):
    if s == "iid":
        return "iid"
    if s == "hac":
        return "hac"
    name, _, b = s.partition(":")
    if name == "hac":
        return ("hac", int(b))
    raise ValueError(f"unknown covariance mode {s!r}")


def _load_model(path):
    with open(path) as fh:
        m = json.load(fh)
    group, params, m_star = model_from_dict(m)
    return group, params, m_star


def cmd_simulate(args):
    group, params, m_star = _load_model(args.model)
    data = sample(params, group, args.n, args.seed)
    np.savetxt(args.out, data, delimiter=",")
    return 0


def cmd_fit(args):
    data = _read_csv(args.data, args.header)
    group = parse_group_spec(args.group)
    sigma2 = _parse_sigma(args.sigma)
    m_star = args.mstar
    n = data.shape[0]
    psi_hat = empirical_stack(group, data, m_star, estimator=args.estimator).values
    cov = covariance(group, data, m_star, mode=_parse_cov(args.cov))
    W = np.eye(len(psi_hat)) if args.identity_w else np.linalg.inv(cov.matrix)
    cfg = FitConfig(restarts=args.restarts, seed=args.seed,
                    init_box=init_box_from_data(data))
    rep = fit(psi_hat, W, group, args.K, sigma2, m_star, config=cfg)
    jt = j_test(rep, psi_hat, W, n)
    G = chart_jacobian(group, rep.params.thetas, rep.params.weights,
                       sigma2, degrees_up_to(m_star))
    # slice Jacobian whitened by the feature covariance, so the radius
    # formula is scale-free
    L = np.linalg.cholesky(cov.matrix)
    s_min = float(np.linalg.svd(np.linalg.solve(L, G), compute_uv=False)[-1])
    D = len(psi_hat)
    radius = confidence_radius(s_min, D, n, args.alpha) if s_min > 0 else None
    payload = {
        "params": {"group": group.family, "K": args.K,
                   "thetas": rep.params.thetas, "weights": rep.params.weights,
                   "sigma2": sigma2, "m_star": m_star},
        "weights": rep.params.weights,
        "converged": rep.converged,
        "iterations": rep.iterations,
        "objective": rep.objective,
        "sigma_min_IQ": rep.iq_sigma_min,
        "cond_IQ": rep.iq_cond,
        "J": jt.J,
        "df": jt.df,
        "p_value": jt.p_value,
        "radius_95": radius,
        "estimator": args.estimator,
        "cov": cov.mode,
        "n": n,
    }
    name, param = parse_estimator(args.estimator)
    if name == "mom":
        payload["estimator_note"] = (
            f"mom uses {param} contiguous blocks of {n // param}; "
            f"{n % param} trailing rows discarded")
    _emit(payload, args.out)
    return 0


def cmd_select_k(args):
    data = _read_csv(args.data, args.header)
    group = parse_group_spec(args.group)
    sigma2 = _parse_sigma(args.sigma)
    n = data.shape[0]
    psi_hat = empirical_stack(group, data, args.mstar).values
    W = None
    if args.norm == "whitened":
        W = np.linalg.inv(covariance(group, data, args.mstar).matrix)
    cfg = FitConfig(restarts=args.restarts, seed=args.seed,
                    init_box=init_box_from_data(data))
    curve = residual_curve(psi_hat, group, args.K_max, sigma2, args.mstar,
                           config=cfg, W=W)
    K_hat = select_k(curve, n, len(psi_hat), tau=args.tau)
    payload = {"residuals": curve.residuals, "eta_n": curve.eta,
               "K_hat": K_hat, "n": n, "tau": args.tau, "norm": args.norm}
    if 2 <= K_hat <= args.K_max:
        rep = curve.fits[K_hat - 1]
        from .model import phi_values
        V = np.stack([phi_values(group, th, sigma2, degrees_up_to(args.mstar))
                      for th in rep.params.thetas])
        try:
            _, gamma = simplex_margin(V, rep.params.weights)
            payload["margin_oracle"] = gamma
        except ValueError:
            payload["margin_oracle"] = None
    _emit(payload, args.out)
    return 0


def cmd_molien(args):
    if args.group:
        group = parse_group_spec(args.group)
        series = molien_generic(group, args.max_degree)
        label = group.family
    else:
        head, _, rest = args.family.partition(":")
        fam_map = {"signflips": "sign_flips", "sym": "sym",
                   "hyperoct": "hyperoctahedral", "dihedral": "dihedral",
                   "platonic": "platonic", "gmpn": "gmpn"}
        if head not in fam_map:
            raise ValueError(f"unknown family {args.family!r}")
        if head == "platonic":
            params = rest
        elif head == "gmpn":
            params = tuple(int(x) for x in rest.split(","))
        else:
            params = int(rest)
        series = molien_family(fam_map[head], params, args.max_degree)
        label = args.family
    budgets = {str(m): dict(zip(("inclusive", "exclusive"),
                                dim_budget(series, m)))
               for m in range(args.max_degree + 1)}
    _emit({"group": label, "coeffs": series.coeffs, "source": series.source,
           "budgets": budgets}, args.out)
    return 0


def cmd_dist(args):
    group = parse_group_spec(args.group)
    A = _read_csv(args.a, args.header)
    B = _read_csv(args.b, args.header)
    C = orbit_cost_matrix(group, A, B)
    d_h = hausdorff_multiset(C)
    value, assignment, exact = bottleneck_matching(C)
    _emit({"cost_matrix": C, "d_H": d_h, "bottleneck": value,
           "assignment": assignment, "exact_at_hausdorff": bool(exact)},
          args.out)
    return 0


def cmd_experiment(args):
    spec = ExperimentSpec.from_json(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    rows, summary = run_experiment(spec)
    out_base = args.out or spec.out
    if out_base:
        write_rows_csv(out_base + ".csv", rows)
        with open(out_base + ".json", "w") as fh:
            json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        print(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="foldmix",
                                description="invariant-moment estimation for "
                                            "group-folded mixtures")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw folded mixture data to CSV")
    s.add_argument("--model", required=True, help="model JSON path")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="invariant-GMM fit from data")
    s.add_argument("--data", required=True)
    s.add_argument("--group", required=True)
    s.add_argument("--K", type=int, required=True)
    s.add_argument("--mstar", type=int, required=True)
    s.add_argument("--sigma", required=True, help="scalar or comma-separated diagonal")
    s.add_argument("--estimator", default="mean", help="mean|mom:B|catoni:delta")
    s.add_argument("--cov", default="iid", help="iid|hac|hac:b")
    s.add_argument("--identity-w", action="store_true",
                   help="debugging: W = identity instead of inverse covariance")
    s.add_argument("--restarts", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--header", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("select-k", help="select the number of components")
    s.add_argument("--data", required=True)
    s.add_argument("--group", required=True)
    s.add_argument("--K-max", dest="K_max", type=int, default=3)
    s.add_argument("--mstar", type=int, required=True)
    s.add_argument("--sigma", required=True)
    s.add_argument("--tau", type=float, default=2.0)
    s.add_argument("--norm", choices=("whitened", "euclidean"),
                   default="whitened",
                   help="whitened: residuals in the inverse-covariance norm, "
                        "where the tau=2 threshold is scale-free")
    s.add_argument("--restarts", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--header", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_select_k)

    s = sub.add_parser("molien", help="Molien coefficients and budgets")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--group", help="enumerated group spec (generic average)")
    g.add_argument("--family", help="closed form, e.g. dihedral:5, platonic:T, gmpn:2,1,2")
    s.add_argument("--max-degree", type=int, default=6)
    s.add_argument("--out")
    s.set_defaults(func=cmd_molien)

    s = sub.add_parser("dist", help="orbit multiset distances between two CSVs")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--group", required=True)
    s.add_argument("--header", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_dist)

    s = sub.add_parser("experiment", help="run a Monte Carlo experiment spec")
    s.add_argument("--spec", required=True, help="ExperimentSpec JSON path")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="basename for .csv rows and .json summary")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        return args.func(args)
    except Exception as exc:  # runtime failure -> exit 1
        print(f"foldmix: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
