"""Command-line entry point.

Exit codes: 0 success, 1 other package error, 2 infeasible LMI, 3 bad config.
"""

import argparse
import sys

import numpy as np

from .analysis import privacy_epsilon, schedule_spectral_radii, solve_steady_state
from .config import load_config
from .errors import BudgetUndefined, ConfigError, Infeasible, PrivSmeError
from .estimator import design_gains
from .simulation import fmt, metrics, run_simulation, write_csvs
from .system import privacy_second_moment

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_CONFIG = 0, 1, 2, 3


def _simulate(args):
    cfg = load_config(args.config)
    log = run_simulation(cfg, args.seed, args.horizon)
    out = write_csvs(log, args.out or cfg.output_dir)
    s = metrics(log)
    print(f"seed {log.seed}: {len(log.steps)} steps, {s.violations} containment violations, "
          f"trigger rate {s.overall.trigger_rate:.3f}; CSVs in {out}")


def _steady_state(args):
    cfg = load_config(args.config)
    p = cfg.plant
    M0 = privacy_second_moment(p.privacy, 0) * np.eye(p.n_x)
    rep = solve_steady_state(p.C(0), p.F(0), M0, p.process_noise.shape, args.tol, args.max_iter)
    print(f"spectral_radius {fmt(rep.spectral_radius)}")
    print(f"converged {rep.converged}")
    print(f"iterations {rep.iterations}")
    print(f"residual {fmt(rep.residual)}")
    for row in rep.g:
        print("g " + " ".join(fmt(v) for v in row))
    radii = schedule_spectral_radii(p.C, range(args.period))
    print("rho(C_k), k=0.." + str(args.period - 1) + ": " + " ".join(f"{r:.6f}" for r in radii))


def _privacy_budget(args):
    print(fmt(privacy_epsilon(args.varsigma, args.c, args.q, args.a_hat)))


def _check_lmi(args):
    cfg = load_config(args.config)
    _, ctx = run_simulation(cfg, args.seed, max(cfg.horizon, args.step + 1), stop_at=args.step)
    gains = design_gains(ctx, cfg.objective, backend=cfg.backend)
    print(f"step {args.step}: lambda_max residual {fmt(gains.residual)}, "
          f"trace_U_next {fmt(gains.trace_U_next)}")


def build_parser():
    ap = argparse.ArgumentParser(prog="privsme", description="Private event-triggered set-membership estimation")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one seed and write CSVs")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_simulate)

    p = sub.add_parser("steady-state", help="second-moment fixed point of the frozen plant")
    p.add_argument("--config", required=True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--period", type=int, default=7, help="number of k values for rho(C_k)")
    p.set_defaults(func=_steady_state)

    p = sub.add_parser("privacy-budget", help="epsilon of a decaying Laplace schedule")
    p.add_argument("--varsigma", type=float, required=True)
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--a-hat", type=float, required=True)
    p.set_defaults(func=_privacy_budget)

    p = sub.add_parser("check-lmi", help="solve one step's LMI and print its residual")
    p.add_argument("--config", required=True)
    p.add_argument("--step", type=int, default=0)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_check_lmi)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Infeasible as exc:
        print(f"infeasible at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (BudgetUndefined, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except PrivSmeError as exc:
        print(f"error at step {getattr(exc, 'step', None)}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
