"""Command-line front end.

Subcommands: ``simulate``, ``bound``, ``tradeoff`` and ``solve``.  Parameters
come from a preset, optionally overlaid by a ``key = value`` config file, then
by command-line flags.  Exit status is 0 on success, 1 on usage or
configuration errors and 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import instance, report
from .bounds import FORMS, BoundInputs, bound_series, compare_published, us_preset
from .config import ConfigError, ExperimentConfig
from .sim import POLICIES, estimate_tradeoff, run
from .solver import OBJECTIVES, matched_counts, solve, solve_batched

OUTDIR_ENV = "KIDNEYFAIR_OUTDIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, sim: bool = True):
    p.add_argument("--preset", default=None, help="parameter preset (default us-2017)")
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a single parameter; repeatable")
    p.add_argument("--n", type=float, help="mean arrivals per step")
    p.add_argument("--tau", type=int, help="horizon (steps 0..tau)")
    p.add_argument("--out", help=f"output file; '-' for stdout (default: ${OUTDIR_ENV} or stdout)")
    p.add_argument("--no-plot", action="store_true", help="skip the figure written next to --out")
    if sim:
        p.add_argument("--seed", type=int)
        p.add_argument("--dense", action="store_true", help="edges follow ABO compatibility only")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kidneyfair", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate one run and write per-step CSV")
    _common(s)
    s.add_argument("--policy", choices=POLICIES)
    s.add_argument("--reps", type=int, help="replications (summary mode)")
    s.add_argument("--mode", choices=("per-step", "summary"))

    b = sub.add_parser("bound", help="tabulate the analytic loss bounds over tau = 0..T")
    _common(b, sim=False)
    b.add_argument("--form", choices=FORMS, default="printed")

    t = sub.add_parser("tradeoff", help="analytic and Monte Carlo tradeoff side by side")
    _common(t)
    t.add_argument("--reps", type=int)
    t.add_argument("--arms", default="sens,time", help="two comma-separated policies (default sens,time)")
    t.add_argument("--threads", type=int, default=None, help="worker processes (default: CPU count)")
    t.add_argument("--form", choices=FORMS, default="printed")

    v = sub.add_parser("solve", help="clear one instance file")
    v.add_argument("instance", type=Path)
    v.add_argument("--policy", choices=POLICIES, default="maxcard")
    return parser


def _config(args) -> ExperimentConfig:
    text = ""
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
    over: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = v.strip()
    flags = {
        "preset": args.preset,
        "n": args.n,
        "tau": args.tau,
        "seed": getattr(args, "seed", None),
        "policy": getattr(args, "policy", None),
        "reps": getattr(args, "reps", None),
        "mode": getattr(args, "mode", None),
        "output": args.out,
    }
    over.update({k: str(v) for k, v in flags.items() if v is not None})
    if getattr(args, "dense", False):
        over["crossmatch_noise"] = "false"
    return ExperimentConfig.loads(text, over)


def _destination(cfg: ExperimentConfig, default_name: str) -> Path | None:
    if cfg.output == "-":
        return None
    if cfg.output:
        return Path(cfg.output)
    outdir = os.environ.get(OUTDIR_ENV)
    return Path(outdir) / default_name if outdir else None


def _emit(text: str, dest: Path | None) -> None:
    if dest is None:
        sys.stdout.write(text)
        return
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(text)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    dest = _destination(cfg, f"simulate_{cfg.policy}_tau{cfg.tau}_seed{cfg.seed}.csv")
    if cfg.mode == "summary":
        from .rng import replication_seed

        rows = []
        for r in range(cfg.reps):
            sub = replication_seed(cfg.seed, r)
            rep = run(cfg.params, cfg.policy, cfg.tau, sub)
            rows.append((r, sub, rep.arrivals, rep.matched, rep.realized_loss, rep.expected_loss,
                         len(rep.final_pool.pairs)))
        head = [f"# schema: kidneyfair.summary/1", f"# policy: {cfg.policy}", f"# seed: {cfg.seed}",
                f"# tau: {cfg.tau}", *report._comment_params(cfg.params)]
        text = "\n".join(head) + "\n" + report._csv(
            rows, ("replication", "subseed", "arrivals", "matched", "cum_realized_loss",
                   "cum_expected_loss", "final_pool"))
        _emit(text, dest)
        return 0
    rep = run(cfg.params, cfg.policy, cfg.tau, cfg.seed)
    _emit(report.steps_csv(rep, cfg.params), dest)
    if dest is not None and not args.no_plot:
        report.plot_steps(rep, dest.with_suffix(".png"))
    return 0


def _published(b: BoundInputs, form: str):
    us = us_preset()
    same = all(getattr(b, f) == getattr(us, f) for f in
               ("mu_O", "mu_AB", "mu_H", "mu_C", "rho_C", "rho_NC", "eta_C"))
    return compare_published(b, form) if same else None


def cmd_bound(args) -> int:
    cfg = _config(args)
    b = BoundInputs.from_params(cfg.params)
    coeff = b.scaled(1.0)
    rows = bound_series(coeff, cfg.tau, args.form)
    comparison = _published(coeff, args.form)
    text = report.bounds_csv(b, rows, args.form, comparison)
    if comparison is None:
        text += "# published comparison skipped: inputs differ from the U.S. constants\n"
    dest = _destination(cfg, f"bound_tau{cfg.tau}.csv")
    _emit(text, dest)
    if dest is not None and not args.no_plot:
        report.plot_bounds(rows, dest.with_suffix(".png"))
    return 0


def cmd_tradeoff(args) -> int:
    cfg = _config(args)
    arms = tuple(a.strip() for a in args.arms.split(","))
    if len(arms) != 2 or any(a not in POLICIES for a in arms):
        raise ConfigError(f"--arms needs two of {', '.join(POLICIES)}, got {args.arms!r}")
    coeff = BoundInputs.from_params(cfg.params, n=1.0)
    series = bound_series(coeff, cfg.tau, args.form)[-1]
    analytic = None if series.ratio is None else (series.numerator, series.denominator, series.ratio)
    est = estimate_tradeoff(cfg.params, cfg.tau, cfg.reps, cfg.seed, arms, threads=args.threads)
    sys.stdout.write(report.tradeoff_text(est, analytic, _published(coeff, args.form)))
    dest = _destination(cfg, f"tradeoff_tau{cfg.tau}_seed{cfg.seed}.csv")
    if dest is not None:
        _emit(report.tradeoff_csv(est, cfg.params), dest)
        if not args.no_plot:
            report.plot_tradeoff(est, dest.with_suffix(".png"))
    return 0


def cmd_solve(args) -> int:
    try:
        text = args.instance.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read instance: {e}") from None
    try:
        pool, g = instance.loads(text)
    except instance.InstanceError as e:
        raise ConfigError(str(e)) from None
    m = solve_batched(g, pool) if args.policy == "batched" else solve(g, pool, OBJECTIVES[args.policy]())
    c = matched_counts(m, pool)
    out = [f"# policy: {args.policy}", f"matched {c.total} sensitized {c.sensitized} critical {c.critical}"]
    for i, cyc in enumerate(m.cycles):
        stage = f" stage {m.stages[i]}" if m.stages else ""
        out.append("cycle " + " ".join(map(str, cyc)) + stage)
    sys.stdout.write("\n".join(out) + "\n")
    return 0


COMMANDS = {"simulate": cmd_simulate, "bound": cmd_bound, "tradeoff": cmd_tradeoff, "solve": cmd_solve}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"kidneyfair: error: {e}", file=sys.stderr)
        return 1
    except (OSError, RuntimeError, ArithmeticError) as e:
        print(f"kidneyfair: runtime error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
