"""Command-line entry point.

    seaoco run --config cfg.json [--trials N] [--seed S] [--out DIR]
    seaoco bounds --theorem {1,2,3,6} --G 1 --D 2 --L 1 [...]
    seaoco verify-lemmas [--n 10000] [--seed S]
"""

from __future__ import annotations

import argparse
import sys

from .geometry import ProblemParams
from .harness import ConfigurationError, ExperimentError, emit, load_config, run_experiment
from .metrics import bound_value, fuzz_lemmas, nonsmooth_bound_forms


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seaoco", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("--config", required=True, help="path to the experiment config")
    p_run.add_argument("--trials", type=int, default=None, help="override trial count")
    p_run.add_argument("--seed", type=int, default=None, help="override the seed")
    p_run.add_argument("--out", default=None, help="override the output directory")

    p_bounds = sub.add_parser("bounds", help="print a closed-form guarantee value")
    p_bounds.add_argument("--theorem", required=True, choices=["1", "2", "3", "6"])
    p_bounds.add_argument("--G", type=float, required=True)
    p_bounds.add_argument("--D", type=float, required=True)
    p_bounds.add_argument("--L", type=float, required=True)
    p_bounds.add_argument("--lam", type=float, default=None)
    p_bounds.add_argument("--alpha", type=float, default=None)
    p_bounds.add_argument("--sigma-max-sq", type=float, default=None)
    p_bounds.add_argument("--Sigma-max-sq", type=float, default=None)
    p_bounds.add_argument("--sigma-cum", type=float, default=0.0,
                          help="cumulative variance (sup-form for theorem 6)")
    p_bounds.add_argument("--Sigma-cum", type=float, default=0.0)
    p_bounds.add_argument("--dim", type=int, default=None, help="decision dimension (theorem 3)")

    p_lem = sub.add_parser("verify-lemmas", help="fuzz the inequality oracles")
    p_lem.add_argument("--n", type=int, default=10_000)
    p_lem.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_run(args) -> int:
    overrides = {"trials": args.trials, "seed": args.seed, "out_dir": args.out}
    try:
        config = load_config(args.config, overrides)
        summary = run_experiment(config)
    except (ConfigurationError, ExperimentError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    written = emit(summary, config.out_dir)
    final = summary["final"]
    print(f"config hash   {summary['config_hash']}")
    print(f"expected regret (mean over {final['trials_ok']} trials)  {final['expected_regret_mean']:.6g}")
    if final["dynamic_regret_mean"] is not None:
        print(f"dynamic regret mean  {final['dynamic_regret_mean']:.6g}")
    if final["bound_value"] is not None:
        flag = "" if final["sigma_is_exact"] else "  [variance estimated]"
        print(f"guarantee value      {final['bound_value']:.6g}{flag}")
        print(f"margin               {final['bound_margin']:.6g}")
    for fmt, path in written.items():
        print(f"wrote {fmt}: {path}")
    return 0


def _cmd_bounds(args) -> int:
    try:
        params = ProblemParams(
            G=args.G,
            D=args.D,
            L=args.L,
            lam=args.lam,
            alpha=args.alpha,
            sigma_max_sq=args.sigma_max_sq,
            Sigma_max_sq=args.Sigma_max_sq,
        )
        value = bound_value(args.theorem, params, args.sigma_cum, args.Sigma_cum, dim=args.dim)
    except (ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{value:.17g}")
    if args.theorem == "6":
        forms = nonsmooth_bound_forms(params, args.sigma_cum, args.Sigma_cum)
        print(f"statement form: {forms['statement']:.17g}", file=sys.stderr)
    return 0


def _cmd_verify_lemmas(args) -> int:
    results = fuzz_lemmas(n=args.n, seed=args.seed)
    bad = 0
    for lemma, (n, violations, worst) in results.items():
        status = "ok" if violations == 0 else "FAIL"
        print(f"{lemma:22s} {n:6d} instances  {violations:3d} violations  worst slack {worst:+.3e}  {status}")
        bad += violations
    return 0 if bad == 0 else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "bounds":
        return _cmd_bounds(args)
    return _cmd_verify_lemmas(args)


if __name__ == "__main__":
    sys.exit(main())
