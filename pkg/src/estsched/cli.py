"""``estsched`` command line: run, validate, list-figures, score.

Settings are resolved flags first, then ``ESTSCHED_*`` environment variables,
then a ``--plan`` JSON file, then built-in defaults.  Exit codes: 0 success,
1 usage error, 2 finished with unconverged cells, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .experiments import FIGURES, ExperimentPlan, figure_table, run_plan, validate_plan
from .gittins import ErrorModel, gittins_score_exponent_form
from .policies import get_policy

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_RUNTIME = 0, 1, 2, 3
ENV_PREFIX = "ESTSCHED_"

log = logging.getLogger("estsched")


class UsageError(Exception):
    pass


def _floats(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _names(text):
    return [x.strip().upper() for x in str(text).split(",") if x.strip()]


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# flag dest -> (plan field, parser)
_RUN_SETTINGS = {
    "policy": ("policies", _names),
    "k": ("k_values", _floats),
    "sigma": ("sigma_values", _floats),
    "rho": ("rho_values", _floats),
    "horizon": ("horizon", int),
    "seed": ("seed_base", int),
    "max_runs": ("max_runs", int),
    "trace": ("trace", str),
    "speed": ("speed", float),
    "out": ("out", str),
    "jobs": ("jobs", int),
    "paired_seeds": ("paired_seeds", _bool),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="estsched",
                     description="Simulate preemptive scheduling with estimated job sizes.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def grid_flags(p):
        p.add_argument("--plan", help="JSON plan file (or a run manifest)")
        p.add_argument("--figure", choices=sorted(FIGURES))
        p.add_argument("--policy", help="comma-separated policy names")
        p.add_argument("--k", help="Weibull shape(s), comma-separated")
        p.add_argument("--sigma", help="log-normal error sigma(s), comma-separated")
        p.add_argument("--rho", help="offered load(s), comma-separated")
        p.add_argument("--horizon", help="jobs per run (default 10000)")
        p.add_argument("--seed", help="first seed; alone (no --max-runs) it means one run")
        p.add_argument("--max-runs", dest="max_runs", help="replication cap per cell")
        p.add_argument("--trace", help="trace CSV path, or 'sample' for the bundled one")
        p.add_argument("--speed", help="trace bytes per time unit")
        p.add_argument("--out", help="output CSV (default: stdout)")
        p.add_argument("--jobs", help="worker processes")
        p.add_argument("--paired-seeds", dest="paired_seeds", nargs="?", const="true",
                       help="common random numbers across policies (default true)")

    run = sub.add_parser("run", help="simulate a plan, a figure or a single cell")
    grid_flags(run)
    val = sub.add_parser("validate", help="check a plan without running it")
    grid_flags(val)
    sub.add_parser("list-figures", help="show the predefined figure grids")

    score = sub.add_parser("score", help="print a policy's score against attained service")
    score.add_argument("--policy", default="GITTINS")
    score.add_argument("--s-hat", dest="s_hat", type=float, default=20.0)
    score.add_argument("--sigma", type=float, default=0.5)
    score.add_argument("--a-max", dest="a_max", type=float, default=None,
                       help="largest attained service (default 5 * s_hat)")
    score.add_argument("--points", type=int, default=51)
    score.add_argument("--compare", action="store_true",
                       help="also print the exponent-form approximation of the index")
    return parser


def resolve_plan(args, environ=None) -> ExperimentPlan:
    """Merge defaults < plan file < environment < flags."""
    environ = os.environ if environ is None else environ
    figure = args.figure or environ.get(ENV_PREFIX + "FIGURE")
    if getattr(args, "plan", None):
        try:
            plan = ExperimentPlan.load(args.plan)
        except (OSError, ValueError, TypeError) as exc:
            raise UsageError(f"cannot read plan {args.plan}: {exc}") from None
        if figure:
            base = ExperimentPlan.from_figure(figure)
            plan.figure = figure
            plan.name = base.name
            plan.policies, plan.k_values = base.policies, base.k_values
            plan.sigma_values, plan.rho_values = base.sigma_values, base.rho_values
    elif figure:
        plan = ExperimentPlan.from_figure(figure)
    else:
        plan = ExperimentPlan()

    sources = []
    for dest, (fld, conv) in _RUN_SETTINGS.items():
        env = environ.get(ENV_PREFIX + dest.upper())
        if env is not None:
            sources.append((dest, fld, conv, env, f"${ENV_PREFIX}{dest.upper()}"))
    for dest, (fld, conv) in _RUN_SETTINGS.items():
        flag = getattr(args, dest, None)
        if flag is not None:
            sources.append((dest, fld, conv, flag, "--" + dest.replace("_", "-")))
    explicit = set()
    for dest, fld, conv, raw, origin in sources:
        try:
            setattr(plan, fld, conv(raw))
        except ValueError:
            raise UsageError(f"{origin}: invalid value {raw!r}") from None
        explicit.add(dest)
    # a bare --seed asks for one deterministic run per cell
    if "seed" in explicit and "max_runs" not in explicit:
        plan.single_seed = plan.seed_base
    elif "max_runs" in explicit:
        plan.single_seed = None
    return plan


def cmd_run(args) -> int:
    plan = resolve_plan(args)
    errors = validate_plan(plan)
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    result = run_plan(plan)
    if plan.out:
        csv_path, man = result.write(plan.out)
        print(f"wrote {csv_path} and {man}", file=sys.stderr)
    else:
        sys.stdout.write(result.to_csv())
    if not result.all_converged:
        bad = [r for r in result.rows if r.converged is False]
        print(f"warning: {len(bad)} cell(s) did not converge within {plan.max_runs} runs",
              file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_validate(args) -> int:
    plan = resolve_plan(args)
    errors = validate_plan(plan)
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    n = sum(1 for _ in plan.scenarios()) * len(plan.run_policies())
    print(f"ok: {plan.name}, {n} cells")
    return EXIT_OK


def cmd_list_figures(args) -> int:
    for fid, swept, values, policies, trace, title in figure_table():
        vals = ",".join(f"{v:g}" for v in values)
        extra = " (needs --trace and --speed)" if trace else ""
        print(f"{fid:<20} {swept}={vals}  policies={','.join(policies)}{extra}")
        print(f"{'':<20} {title}")
    return EXIT_OK


def cmd_score(args) -> int:
    if args.s_hat <= 0 or args.sigma < 0 or args.points < 2:
        raise UsageError("--s-hat must be > 0, --sigma >= 0 and --points >= 2")
    model = ErrorModel(sigma=args.sigma)
    try:
        policy = get_policy(args.policy, model)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    if policy.score is None:
        raise UsageError(f"{policy.name} has no score function")
    if policy.requires_true_size:
        raise UsageError(f"{policy.name} scores the true size; pick an estimate-based policy")
    a_max = 5.0 * args.s_hat if args.a_max is None else args.a_max
    header = ["a", "score"] + (["exponent_form"] if args.compare else [])
    print(",".join(header))
    for a in np.linspace(0.0, a_max, args.points):
        a = float(a)
        row = [repr(a), repr(float(policy.score(a, math.nan, args.s_hat)))]
        if args.compare:
            row.append(repr(gittins_score_exponent_form(a, args.s_hat, model)))
        print(",".join(row))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "list-figures": cmd_list_figures,
            "score": cmd_score}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - any failure inside a run maps to exit 3
        log.debug("run failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
