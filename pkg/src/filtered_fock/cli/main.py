"""Command-line entry point: ``filtered-fock``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..fock import FockError
from .dsl import ScenarioError, Task, parse_scenario
from .runner import Report, ito_table_text, run_scenario, worker_count

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit with 2, as argparse does, but via our path
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, scenario: bool = True) -> None:
    if scenario:
        p.add_argument("scenario", type=Path, help="scenario file")
    p.add_argument("--report", choices=("csv", "json"), default="json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strict", action="store_true", help="stop at the first failing task")
    p.add_argument("--nmax", type=int, default=None, help="override the grid's particle cap")
    p.add_argument("--out", type=Path, default=None, help="write the report here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="filtered-fock", description="Filtered quantum stochastic calculus checks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("run", help="run every task of a scenario"))
    q = sub.add_parser("solve", help="Picard-solve each sde block")
    _common(q)
    q.add_argument("--tol", default="1e-9")
    q.add_argument("--probes", default="32")
    _common(sub.add_parser("check-unitarity", help="unitarity conditions for each sde block"))
    q = sub.add_parser("sweep-m", help="stabilization in m for each mfree block")
    _common(q)
    q.add_argument("--m", default=None, help="levels, e.g. 1,2,3 or 1..4")
    _common(sub.add_parser("verify-ito", help="run the scenario's Itô-formula tasks"))
    q = sub.add_parser("tables", help="verify the m-free Itô table cell by cell")
    _common(q, scenario=False)
    q.add_argument("--m", default="1,2,3")
    q.add_argument("--colors", type=int, default=3)
    q = sub.add_parser("ito-table", help="print a multiplication table")
    q.add_argument("--calculus", default="boson", help="boson or mfree:m")
    return p


def _emit(report: Report, args) -> None:
    text = report.to_csv() if args.report == "csv" else report.to_json()
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_bytes(text.encode("utf-8"))


def _failing_summary(report: Report) -> None:
    for r in report.results:
        if not r.passed:
            names = ", ".join(r.failing())
            print(f"FAIL task {r.index} {r.kind} {' '.join(r.args)}: {names}", file=sys.stderr)
            if r.error:
                print(f"  {r.error}", file=sys.stderr)


def _system_tasks(scenario, mfree: bool, kind: str, options) -> list[Task]:
    from .dsl import SystemDecl
    return [Task(kind, (d.name,), tuple(options)) for d in scenario.decls
            if isinstance(d, SystemDecl) and d.mfree == mfree]


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        worker_count()
        if args.command == "ito-table":
            sys.stdout.write(ito_table_text(args.calculus))
            return EXIT_OK
        if args.command == "tables":
            text = f"grid T=1 cells=2 colors={args.colors} nmax=3 h0=1\ntask tables m={args.m}\n"
            scenario, name = parse_scenario(text), "tables"
        else:
            try:
                text = args.scenario.read_text(encoding="utf-8")
            except OSError as e:
                print(f"filtered-fock: cannot read {args.scenario}: {e.strerror}", file=sys.stderr)
                return EXIT_USAGE
            scenario, name = parse_scenario(text), args.scenario.name
    except ScenarioError as e:
        where = f"{args.scenario}:" if getattr(args, "scenario", None) else ""
        print(f"{where}{e}", file=sys.stderr)
        return EXIT_USAGE
    except FockError as e:
        print(f"filtered-fock: {e}", file=sys.stderr)
        return EXIT_USAGE

    only, extra = None, None
    if args.command == "solve":
        only, extra = set(), _system_tasks(scenario, False, "solve",
                                           [("tol", args.tol), ("probes", args.probes)])
    elif args.command == "check-unitarity":
        only, extra = set(), _system_tasks(scenario, False, "check-unitarity", [])
    elif args.command == "sweep-m":
        opts = [("m", args.m)] if args.m else []
        only, extra = set(), _system_tasks(scenario, True, "sweep-m", opts)
    elif args.command == "verify-ito":
        only = {"verify-ito", "mfree-ito"}
    try:
        report = run_scenario(scenario, name, args.seed, args.nmax, args.strict, only, extra)
    except FockError as e:
        print(f"filtered-fock: {e}", file=sys.stderr)
        return EXIT_USAGE
    _emit(report, args)
    _failing_summary(report)
    return EXIT_OK if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
