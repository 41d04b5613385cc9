"""Command-line front end.

Machine-readable CSV goes to stdout; progress and human commentary go to
stderr. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .bounds import (
    BoundInputs,
    exponential_bound_general,
    exponential_bound_routing,
    exponential_bound_separable,
)
from .cvar import RiskLevel, SampleBatch, empirical_cvar, empirical_cvar_lp
from .harness import (
    ExperimentResult,
    RepRecord,
    build_configured_game,
    compare_bounds,
    default_config_text,
    load_config,
    parse_config,
    routing_bound_inputs,
    run_experiment,
)
from .routing import path_cost_field, sample_path_kappa, solve_cwe, true_path_kappa

__all__ = ["main", "build_parser"]


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _default_output_dir() -> str:
    return os.environ.get("CVARVI_OUTPUT_DIR", "cvarvi_out")


def _load_experiment_config(args):
    if args.config is None:
        return parse_config(default_config_text())
    return load_config(args.config)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvarvi",
        description="CVaR estimation, risk-averse equilibrium solves, "
        "sample-size bounds, and convergence experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_est = sub.add_parser("estimate", help="empirical CVaR of a sample CSV")
    p_est.add_argument("samples", help="CSV file with a `value` header, or - for stdin")
    p_est.add_argument("--alpha", type=float, required=True)
    p_est.add_argument("--method", choices=["order_statistic", "lp"], default="order_statistic")

    p_solve = sub.add_parser("solve", help="equilibrium flow for a configured game")
    p_solve.add_argument("--config", default=None, help="experiment config (default: builtin)")
    p_solve.add_argument("--method", choices=["extragradient", "lemke", "qp"], default="lemke")
    p_solve.add_argument("--kappa", choices=["empirical", "reference"], default="empirical")
    p_solve.add_argument("--n-samples", type=int, default=5000)
    p_solve.add_argument("--seed", type=int, default=0)

    p_bounds = sub.add_parser("bounds", help="gamma/beta constants and sample sizes")
    p_bounds.add_argument("--formula", choices=["general", "separable", "routing"], required=True)
    p_bounds.add_argument("--config", default=None, help="game config for --formula routing")
    p_bounds.add_argument("--zeta", type=float, default=0.05)
    p_bounds.add_argument("--epsilon", type=float, default=None)
    p_bounds.add_argument("--delta", type=float, default=None)
    p_bounds.add_argument("--n", type=int, default=None)
    p_bounds.add_argument("--alpha", type=float, default=None)
    p_bounds.add_argument("--ell", type=float, default=None)
    p_bounds.add_argument("--big-l", type=float, default=None)
    p_bounds.add_argument("--m", type=float, default=None, help="Lipschitz constant")
    p_bounds.add_argument("--diam", type=float, default=None)
    p_bounds.add_argument("--sigma", type=float, default=None)
    p_bounds.add_argument("--f-max", type=float, default=None)
    p_bounds.add_argument("--g-rge", type=float, default=None)

    p_exp = sub.add_parser("experiment", help="run the replication grid")
    p_exp.add_argument("--config", default=None)
    p_exp.add_argument("--output-dir", default=_default_output_dir())
    p_exp.add_argument("--jobs", type=int, default=1, help="worker process count")

    p_cmp = sub.add_parser("compare", help="empirical tail frequencies vs the bound")
    p_cmp.add_argument("--config", default=None)
    p_cmp.add_argument("--output-dir", default=_default_output_dir())
    return parser


def _cmd_estimate(args) -> int:
    text = sys.stdin.read() if args.samples == "-" else Path(args.samples).read_text()
    batch = SampleBatch.from_csv(text)
    alpha = RiskLevel(args.alpha)
    est = empirical_cvar_lp(batch, alpha) if args.method == "lp" else empirical_cvar(batch, alpha)
    print("cvar,t_star")
    print(f"{_fmt(est.value)},{_fmt(est.t_star)}")
    print(f"empirical CVaR of {len(batch.values)} draws at alpha={args.alpha}", file=sys.stderr)
    return 0


def _cmd_solve(args) -> int:
    config = _load_experiment_config(args)
    game = build_configured_game(config)
    if args.kappa == "reference":
        kappa = true_path_kappa(game, config.ref_samples, config.ref_seed)
    else:
        kappa = sample_path_kappa(game, args.n_samples, args.seed)
    sol = solve_cwe(game, kappa, method=args.method)
    costs = path_cost_field(game, kappa)(sol.x_star)
    print("path,od,flow,cost")
    for p, nodes in enumerate(game.path_set.paths):
        w = int(game.path_set.od_of_path[p])
        print(
            f"{'-'.join(str(v) for v in nodes)},{w},"
            f"{_fmt(float(sol.x_star[p]))},{_fmt(float(costs[p]))}"
        )
    print(
        f"method={args.method} residual={sol.residual:.3e} iterations={sol.iterations}",
        file=sys.stderr,
    )
    return 0


def _cmd_bounds(args) -> int:
    zeta = args.zeta
    if args.formula == "routing":
        config = _load_experiment_config(args)
        epsilon = args.epsilon if args.epsilon is not None else config.epsilon
        inputs = routing_bound_inputs(build_configured_game(config), epsilon, delta_eps=args.delta)
        report = exponential_bound_routing(inputs, zeta=zeta)
    else:
        required = {"n": args.n, "alpha": args.alpha, "ell": args.ell, "big_l": args.big_l}
        missing = [k for k, v in required.items() if v is None]
        if missing:
            raise SystemExit(f"--formula {args.formula} requires --{', --'.join(missing)}")
        inputs = BoundInputs(
            n=args.n,
            alpha=RiskLevel(args.alpha),
            ell=args.ell,
            big_l=args.big_l,
            m_lip=args.m,
            diam_x=args.diam,
            epsilon=args.epsilon,
            delta_eps=args.delta,
            sigma=args.sigma,
            f_max=args.f_max,
            g_rge=args.g_rge,
        )
        fn = exponential_bound_general if args.formula == "general" else exponential_bound_separable
        report = fn(inputs, zeta=zeta)
    print("formula,gamma,ln_gamma,beta,n_samples")
    print(
        f"{report.formula_id},{_fmt(report.gamma)},{_fmt(report.ln_gamma)},"
        f"{_fmt(report.beta)},{report.n_samples}"
    )
    return 0


def _cmd_experiment(args) -> int:
    config = _load_experiment_config(args)

    def progress(done, total):
        if done % 100 == 0 or done == total:
            print(f"replications {done}/{total}", file=sys.stderr)

    result = run_experiment(config, args.output_dir, workers=args.jobs, progress=progress)
    print("n_samples,mean_deviation,p90_deviation,failures")
    for n in config.sample_sizes:
        devs = result.deviations(n)
        fails = sum(1 for r in result.records if r.n_samples == n and r.status != "ok")
        print(f"{n},{_fmt(float(devs.mean()))},{_fmt(float(np.percentile(devs, 90)))},{fails}")
    print(f"wrote {result.results_path}", file=sys.stderr)
    return 0


def _read_results_csv(path: Path) -> list[RepRecord]:
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "n_samples,rep,deviation,residual,status":
        raise RuntimeError(f"{path} is not a results table")
    records = []
    for line in lines[1:]:
        n, rep, dev, res, status = line.split(",", 4)
        records.append(RepRecord(int(n), int(rep), float(dev), float(res), status))
    return records


def _cmd_compare(args) -> int:
    config = _load_experiment_config(args)
    results_path = Path(args.output_dir) / "results.csv"
    if not results_path.exists():
        raise RuntimeError(f"no results at {results_path}; run `cvarvi experiment` first")
    records = _read_results_csv(results_path)
    result = ExperimentResult(config=config, h_ref=np.zeros(0), records=records)
    print("n_samples,empirical_freq,bound,consistent")
    ok = True
    for row in compare_bounds(result):
        print(
            f"{row.n_samples},{_fmt(row.empirical_freq)},{_fmt(row.bound_value)},"
            f"{str(row.consistent).lower()}"
        )
        ok = ok and row.consistent
    return 0 if ok else 1


_COMMANDS = {
    "estimate": _cmd_estimate,
    "solve": _cmd_solve,
    "bounds": _cmd_bounds,
    "experiment": _cmd_experiment,
    "compare": _cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except SystemExit:
        raise
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
