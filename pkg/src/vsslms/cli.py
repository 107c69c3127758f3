"""Command-line entry point: ``vsslms <command> [config] [options]``.

Exit status: 0 on success, 1 on usage or configuration errors, 2 when a
numerical failure (divergence or instability) occurred in any rule. The
``stability`` command reports instability as data and still exits 0.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import presets, theory
from .curves import to_db
from .errors import ConfigError, NumericalError
from .harness import (REPORT_HEADER, ExperimentConfig, compare_report, report_rows,
                      report_to_dict, simulate_rule, steady_state_estimate, theory_curve,
                      theory_steady_state, write_curve_csv, write_json, write_table_csv)

OUT_ENV = "VSSLMS_OUT"
DEFAULT_OUT = "vsslms-out"
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
PRESETS = ("fig1", "table5", "am-long")

log = logging.getLogger("vsslms")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--config", dest="config_opt", metavar="PATH", help="experiment config (JSON)")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--trials", type=int, help="Monte Carlo trials per rule")
    p.add_argument("--iters", type=int, help="iterations per trial / theory curve")
    p.add_argument("--seed", type=int, help="base seed; trial t uses seed + t")
    p.add_argument("--workers", type=int, help="parallel trial workers")
    p.add_argument("--engine", choices=theory.ENGINES, help="transient propagator")
    p.add_argument("--mu2-mode", choices=theory.MU2_MODES, help="E[mu^2] model")
    p.add_argument("-q", "--quiet", action="store_true", help="suppress the stdout table")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vsslms", description="Variable step-size LMS: theory vs simulation")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    helps = {
        "theory": "theory learning curves and steady-state values",
        "simulate": "Monte Carlo ensemble learning curves",
        "compare": "theory + simulation + comparison report",
        "steadystate": "steady-state MSD table (theory only)",
        "stability": "mean bound and steady-state spectral radius per rule",
    }
    for name, h in helps.items():
        p = sub.add_parser(name, help=h)
        p.add_argument("config", nargs="?", help="experiment config (JSON)")
        _common(p)
    p = sub.add_parser("reproduce", help="built-in reproduction presets")
    p.add_argument("preset", choices=PRESETS)
    _common(p)
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    run = cfg.run
    changes = {k: v for k, v in (("trials", args.trials), ("N", args.iters),
                                 ("base_seed", args.seed), ("workers", args.workers))
               if v is not None}
    if changes:
        run = replace(run, **changes)
    th = cfg.theory
    if args.engine:
        th = replace(th, engine=args.engine)
    if args.mu2_mode:
        th = replace(th, e_mu2_mode=args.mu2_mode)
    return replace(cfg, run=run, theory=th)


def _out_dir(cfg: ExperimentConfig, args) -> Path:
    return Path(args.out or cfg.outputs.directory or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def _load(args) -> ExperimentConfig:
    path = getattr(args, "config", None) or args.config_opt
    if not path:
        raise UsageError(f"vsslms {args.command}: error: a config file is required")
    return ExperimentConfig.load(path)


def _print_table(header, rows, quiet):
    if quiet:
        return
    def cell(x):
        if isinstance(x, float):
            return "nan" if math.isnan(x) else f"{x:.6g}"
        return str(x)
    table = [list(header)] + [[cell(x) for x in r] for r in rows]
    widths = [max(len(r[k]) for r in table) for k in range(len(header))]
    for r in table:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())


def cmd_theory(cfg, out, quiet):
    model = cfg.model.build()
    failed = False
    rows = []
    for entry in cfg.rules:
        row = [entry.name]
        try:
            curve = theory_curve(cfg, entry, model)
            if "csv" in cfg.outputs.formats:
                write_curve_csv(out / f"theory_{entry.name}.csv", curve)
        except NumericalError as exc:
            failed = True
            partial = getattr(exc, "partial", None)
            if partial is not None and "csv" in cfg.outputs.formats:
                write_curve_csv(out / f"theory_{entry.name}.csv", partial.curve(entry.name))
            log.error("%s: %s", entry.name, exc)
        try:
            ss = theory_steady_state(cfg, entry, model)
            row += [ss.mu_ss, float(to_db(ss.msd_ss)), float(to_db(ss.emse_ss)), ss.radius, "STABLE"]
        except NumericalError as exc:
            failed = True
            mu_ss = theory.steady_state_mu(entry.params, model.sigma_v2, cfg.theory.steady_mode)
            row += [mu_ss, math.nan, math.nan, getattr(exc, "radius", math.nan) or math.nan,
                    "UNSTABLE"]
        rows.append(row)
    header = ("rule", "mu_ss", "msd_ss_db", "emse_ss_db", "radius", "flag")
    write_table_csv(out / "steady_state.csv", header, rows)
    _print_table(header, rows, quiet)
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_simulate(cfg, out, quiet):
    model = cfg.model.build()
    failed = False
    rows = []
    for entry in cfg.rules:
        try:
            res = simulate_rule(model, entry, cfg.run)
        except NumericalError as exc:
            failed = True
            log.error("%s: %s", entry.name, exc)
            rows.append([entry.name, math.nan, cfg.run.trials, cfg.run.trials])
            continue
        if "csv" in cfg.outputs.formats:
            write_curve_csv(out / f"simulation_{entry.name}.csv", res.curve)
        rows.append([entry.name, steady_state_estimate(res.curve, cfg.run.tail_fraction),
                     res.trials, res.n_diverged])
        failed |= res.n_diverged > 0
    header = ("rule", "sim_ss_db", "trials", "diverged")
    write_table_csv(out / "simulation_summary.csv", header, rows)
    _print_table(header, rows, quiet)
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_compare(cfg, out, quiet, transient=True):
    model = cfg.model.build()
    th_curves, sim_curves, th_ss, notes = {}, {}, {}, {}
    failed = False
    for entry in cfg.rules:
        msgs = []
        th_curves[entry.name] = None
        try:
            if transient:
                th_curves[entry.name] = theory_curve(cfg, entry, model)
        except NumericalError as exc:
            msgs.append(f"theory curve: {exc}")
        try:
            th_ss[entry.name] = float(to_db(theory_steady_state(cfg, entry, model).msd_ss))
        except NumericalError as exc:
            th_ss[entry.name] = None
            msgs.append(f"steady state: {exc}")
        try:
            res = simulate_rule(model, entry, cfg.run)
            sim_curves[entry.name] = res.curve
            if res.n_diverged:
                msgs.append(f"{res.n_diverged}/{res.trials} trials diverged")
        except NumericalError as exc:
            sim_curves[entry.name] = None
            msgs.append(f"simulation: {exc}")
        failed |= bool(msgs)
        notes[entry.name] = "; ".join(msgs)
        if "csv" in cfg.outputs.formats:
            for curve in (th_curves[entry.name], sim_curves[entry.name]):
                if curve is not None:
                    write_curve_csv(out / f"{curve.source}_{curve.rule}.csv", curve)
    report = compare_report(th_curves, sim_curves, th_ss, cfg.tolerances, cfg.run.tail_fraction,
                            notes, check_transient=transient)
    rows = report_rows(report)
    write_table_csv(out / "summary.csv", REPORT_HEADER, rows)
    if "json" in cfg.outputs.formats:
        write_json(out / "report.json", {"config": cfg.to_dict(), **report_to_dict(report)})
    _print_table(REPORT_HEADER, rows, quiet)
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_steadystate(cfg, out, quiet, simulate=False):
    rows = presets.table5_rows(cfg, simulate=simulate)
    table = [[r[k] for k in presets.TABLE5_HEADER] for r in rows]
    write_table_csv(out / ("table5.csv" if simulate else "steady_state.csv"),
                    presets.TABLE5_HEADER, table)
    if "json" in cfg.outputs.formats and simulate:
        write_json(out / "table5.json", {"config": cfg.to_dict(), "rows": rows})
    _print_table(presets.TABLE5_HEADER, table, quiet)
    failed = any(math.isnan(r["theory_db"]) or (simulate and math.isnan(r["sim_db"]))
                 for r in rows)
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_stability(cfg, out, quiet):
    model = cfg.model.build()
    bound = theory.mean_stability_bound(model.spectral)
    rows = []
    for entry in cfg.rules:
        mu_ss = theory.steady_state_mu(entry.params, model.sigma_v2, cfg.theory.steady_mode)
        F = theory.f_matrix(mu_ss, mu_ss * mu_ss, model.spectral.lam)
        ms = theory.ms_stability_check(F)
        mean_ok = 0.0 < mu_ss < bound
        flag = "STABLE" if mean_ok and ms.stable else "UNSTABLE"
        rows.append([entry.name, mu_ss, bound, "yes" if mean_ok else "no", ms.radius,
                     "yes" if ms.stable else "no", flag])
    header = ("rule", "mu_ss", "mean_bound", "mean_stable", "radius", "ms_stable", "flag")
    write_table_csv(out / "stability.csv", header, rows)
    _print_table(header, rows, quiet)
    return EXIT_OK


COMMANDS = {
    "theory": cmd_theory,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "steadystate": cmd_steadystate,
    "stability": cmd_stability,
}


def _preset(name) -> ExperimentConfig:
    if name == "am-long":
        return presets.am_long_config()
    return presets.reference_config()


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if not argv:
            raise UsageError(parser.format_usage().strip())
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        if args.command == "reproduce":
            if args.config_opt:
                raise UsageError("vsslms reproduce: presets do not take a config")
            cfg = _apply_overrides(_preset(args.preset), args)
        else:
            cfg = _apply_overrides(_load(args), args)
        out = _out_dir(cfg, args)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "reproduce":
            if args.preset == "table5":
                return cmd_steadystate(cfg, out, args.quiet, simulate=True)
            # the long AM run is a steady-state check; its exact transient
            # recursion over ~10^7 steps would dominate the run time
            return cmd_compare(cfg, out, args.quiet, transient=args.preset != "am-long")
        return COMMANDS[args.command](cfg, out, args.quiet)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        print(parser.format_help(), file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"vsslms: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"vsslms: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
