"""Command-line entry point: validate, solve, analyze, pathway, fuzz."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from importlib import resources
from pathlib import Path

import tomli_w

from . import __version__
from .backends import ENV_BACKEND, get_backend
from .io import ModelFileError, load_model
from .lp import DISPATCH_ONLY, EXPANSION, FEAS_TOL, STAT_TOL, SolverError, build_lp, kkt_residuals, solve

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_BACKEND = 3

log = logging.getLogger("dualmerit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage problems share exit code 1 with validation failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclasses.dataclass
class RunManifest:
    command: str
    config: list
    backend: str
    tol_feas: float
    tol_stat: float
    out: str
    seed: int | None = None
    mode: str | None = None
    market_carrier: str | None = None
    version: str = __version__

    def write(self, out_dir) -> None:
        doc = {k: v for k, v in dataclasses.asdict(self).items() if v is not None}
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "manifest.toml").write_text(tomli_w.dumps(doc), encoding="utf-8")


def builtin_scenarios() -> list[str]:
    root = resources.files("dualmerit") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def resolve_config(ref: str) -> Path:
    """Accept a path or ``builtin:<name>`` for a bundled scenario."""
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if name not in builtin_scenarios():
            raise UsageError(f"unknown builtin scenario {name!r}; available: {', '.join(builtin_scenarios())}")
        return Path(str(resources.files("dualmerit") / "scenarios" / f"{name}.toml"))
    return Path(ref)


def _backend(args):
    try:
        return get_backend(args.backend)
    except ValueError as err:
        raise UsageError(str(err)) from err


def _backend_name(args) -> str:
    return _backend(args).name


def _load_valid(ref: str):
    from .model import validate

    path = resolve_config(ref)
    if not path.exists():
        raise UsageError(f"config not found: {path}")
    model = load_model(path)
    problems = validate(model)
    return path, model, problems


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args) -> int:
    try:
        path, model, problems = _load_valid(args.config)
    except ModelFileError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    for d in problems:
        print(f"{d.component}: {d.rule}: {d.message}", file=sys.stderr)
    if problems:
        return EXIT_USAGE
    print(f"{path}: ok ({model.n_snapshots} snapshots, {len(model.carriers)} carriers)")
    return EXIT_OK


def cmd_solve(args) -> int:
    from .reports import read_capacities, write_state

    if args.mode == DISPATCH_ONLY and not args.capacities:
        raise UsageError("--mode dispatch_only requires --capacities <csv>")
    try:
        path, model, problems = _load_valid(args.config)
    except ModelFileError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    if problems:
        for d in problems:
            print(f"{d.component}: {d.rule}: {d.message}", file=sys.stderr)
        return EXIT_USAGE
    fixed = read_capacities(args.capacities) if args.capacities else None
    backend = _backend(args)
    out = Path(args.out)
    try:
        problem = build_lp(model, args.mode, fixed)
        state = solve(problem, backend)
    except SolverError as err:
        print(f"backend failure: {err}", file=sys.stderr)
        return EXIT_BACKEND
    except ValueError as err:
        raise UsageError(str(err)) from err
    RunManifest("solve", [str(path)] + ([args.capacities] if args.capacities else []), backend.name,
                args.tol_feas, args.tol_stat, str(out), mode=args.mode).write(out)
    if not state.optimal:
        write_state(state, out)
        print(f"solver status {state.status}: {state.message}", file=sys.stderr)
        return EXIT_INFEASIBLE
    kkt = kkt_residuals(state, problem, args.tol_stat, args.tol_feas)
    write_state(state, out, kkt)
    print(f"objective {state.objective:.9g}")
    if state.co2_price is not None:
        print(f"co2_price {state.co2_price:.9g}")
    print(f"kkt {'PASS' if kkt.ok else 'FAIL'} (max stationarity {kkt.max_stationarity:.3e})")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .analysis import analyze
    from .reports import MissingOutputError, read_state, summary_lines, write_analysis

    src = Path(args.solved)
    try:
        state = read_state(src)
    except MissingOutputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    if not state.optimal:
        print(f"error: solve in {src} is {state.status}, no duals to analyze", file=sys.stderr)
        return EXIT_INFEASIBLE
    carrier = args.market_carrier
    if carrier is not None and carrier not in state.model.carrier_ids():
        raise UsageError(f"unknown market carrier {carrier!r}")
    out = Path(args.out) if args.out else src / "analysis"
    an = analyze(state, carrier, threads=args.threads)
    write_analysis(an, out, state.model.snapshots.timestamps)
    RunManifest("analyze", [str(src)], "n/a", args.tol_feas, args.tol_stat, str(out),
                market_carrier=an.market_carrier).write(out)
    print("\n".join(summary_lines(an)))
    return EXIT_OK


def cmd_pathway(args) -> int:
    from .pathway import PathwayError, load_pathway, run_myopic, run_short_term
    from .reports import write_analysis, write_csv, write_state

    path = resolve_config(args.config)
    try:
        cfg = load_pathway(path)
    except (ModelFileError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    backend = _backend(args)
    out = Path(args.out)
    try:
        result = run_myopic(cfg, backend, args.market_carrier, threads=args.threads)
    except PathwayError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverError as err:
        print(f"backend failure: {err}", file=sys.stderr)
        return EXIT_BACKEND

    summary = []
    for yr in result.years:
        ydir = out / yr.year
        kkt = kkt_residuals(yr.state, build_lp(yr.model), args.tol_stat, args.tol_feas)
        write_state(yr.state, ydir, kkt)
        write_analysis(yr.analysis, ydir / "analysis", yr.model.snapshots.timestamps)
        write_csv(ydir / "lower_bounds.csv", ["component", "lower_bound"], yr.lower_bounds.items())
        top = yr.analysis.top_setters(1)
        summary.append((yr.year, yr.state.objective, yr.co2_price, yr.analysis.pdc.zero_price_share,
                        f"{top[0][0]}/{top[0][1]}" if top else "undetermined"))
    write_csv(out / "pathway_summary.csv", ["year", "objective", "co2_price", "zero_price_share", "top_setter"],
              summary)

    if args.with_st:
        rows = []
        for yr in result.years:
            try:
                st = run_short_term(yr, backend, args.market_carrier, threads=args.threads)
            except PathwayError as err:
                print(f"error: {err}", file=sys.stderr)
                return EXIT_INFEASIBLE
            write_state(st.state, out / "st" / yr.year)
            write_analysis(st.analysis, out / "st" / yr.year / "analysis", yr.model.snapshots.timestamps)
            rows.append((yr.year, st.lt_opex, st.st_opex, st.opex_relative_diff, st.pdc_correlation,
                         st.setter_agreement))
        write_csv(out / "st" / "comparison.csv",
                  ["year", "lt_opex", "st_opex", "opex_relative_diff", "pdc_correlation", "setter_agreement"],
                  rows)
    RunManifest("pathway", [str(path)], backend.name, args.tol_feas, args.tol_stat, str(out),
                market_carrier=args.market_carrier).write(out)
    for row in summary:
        print(f"{row[0]}  objective {row[1]:.6g}  co2_price {row[2]:.4f}  zero_price_share {row[3]:.3f}  "
              f"top {row[4]}")
    return EXIT_OK


def cmd_fuzz(args) -> int:
    from .fuzz import run_fuzz

    report = run_fuzz(args.n, args.seed, _backend(args), inject=args.inject_failure,
                      tol_stat=args.tol_stat, tol_feas=args.tol_feas)
    print("\n".join(report.lines()))
    if args.out:
        RunManifest("fuzz", [], _backend_name(args), args.tol_feas, args.tol_stat, args.out,
                    seed=args.seed).write(args.out)
    return EXIT_OK if report.ok else EXIT_USAGE


def cmd_scenarios(args) -> int:
    for name in builtin_scenarios():
        print(f"builtin:{name}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--backend", default=None,
                        help=f"LP backend (highs, highspy); default from ${ENV_BACKEND} or highs")
    common.add_argument("--tol-feas", type=float, default=FEAS_TOL)
    common.add_argument("--tol-stat", type=float, default=STAT_TOL)
    common.add_argument("--threads", type=int, default=1, help="cap on analytics worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="dualmerit", description="Sector-coupled LP with dual-based merit-order analytics")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("validate", parents=[common], help="check a model file")
    s.add_argument("config_pos", nargs="?", metavar="CONFIG")
    s.add_argument("--config")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("solve", parents=[common], help="solve and write prices, dispatch and duals")
    s.add_argument("config_pos", nargs="?", metavar="CONFIG")
    s.add_argument("--config")
    s.add_argument("--mode", choices=[EXPANSION, DISPATCH_ONLY], default=EXPANSION)
    s.add_argument("--capacities", help="capacities.csv for dispatch_only")
    s.add_argument("--out", default="out")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("analyze", parents=[common], help="bids, price setters and curves from a solve")
    s.add_argument("solved", metavar="SOLVED_DIR")
    s.add_argument("--market-carrier")
    s.add_argument("--out", help="default: SOLVED_DIR/analysis")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("pathway", parents=[common], help="myopic multi-year run")
    s.add_argument("config_pos", nargs="?", metavar="CONFIG")
    s.add_argument("--config")
    s.add_argument("--out", default="out")
    s.add_argument("--market-carrier")
    s.add_argument("--with-st", action="store_true", help="also run the dispatch-only comparison")
    s.set_defaults(func=cmd_pathway)

    s = sub.add_parser("fuzz", parents=[common], help="LP duals against the clearing oracle")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--inject-failure", type=int, default=None, metavar="INDEX",
                   help="perturb the LP price of one instance (harness self-test)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_fuzz)

    s = sub.add_parser("scenarios", help="list bundled scenarios")
    s.set_defaults(func=cmd_scenarios)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if hasattr(args, "config_pos"):
        args.config = args.config or args.config_pos
        if not args.config:
            parser.error(f"{args.command}: a config is required (positional or --config)")
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
