"""Command-line harness: case generation, method runs, step-size sweeps,
and the executable property suite.

Subcommands: gen-case, validate, run, sweep-delta, check. Results land in
CSV files with a fixed column order so repeated runs with the same seeds
are comparable byte-for-byte (timing columns excepted, they measure the
actual run).
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .casegen import CaseRecipe, emit_case, generate_case
from .clearing import ClearingResult, clear_common, interface_price
from .errors import ContractError, FlexmktError
from .forwarding import (Outcome, run_bid_aggregation, run_bid_filtering,
                         run_sequential, run_three_layer, suboptimality_constant)
from .market_model import MarketCase, parse_case, validate_case

RESULT_COLUMNS = ["case_id", "seed", "method", "pricing", "delta_bar", "J_tot",
                  "J_com", "eta_pct", "safe", "lp_solves", "milp_nodes",
                  "wall_ms", "status"]

METHODS = ("three_layer", "filtering", "aggregation_primal", "aggregation_dual",
           "fragmented", "idealized", "sequential_raw")
PRICINGS = ("none", "optimal", "midpoint")


@dataclass(frozen=True)
class ExperimentConfig:
    """One batch run: cases x methods x pricing rules (x step sizes)."""

    cases: tuple[tuple[str, int, MarketCase], ...]  # (case id, seed, case)
    methods: tuple[str, ...]
    pricings: tuple[str, ...] = ("none",)
    deltas: tuple[float, ...] = ()
    refine_rounds: int = 0
    out_dir: str = "."
    workers: int = 1

    def __post_init__(self):
        if not self.cases or not self.methods:
            raise ContractError("experiment needs at least one case and one method")
        for m in self.methods:
            if m not in METHODS:
                raise ContractError(f"unknown method {m!r}")
        for p in self.pricings:
            if p not in PRICINGS:
                raise ContractError(f"unknown pricing rule {p!r}")
        if any(m.startswith("aggregation") for m in self.methods) and not self.deltas:
            raise ContractError("aggregation methods need at least one step size")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def _load_cases(args) -> list[tuple[str, int, MarketCase]]:
    cases = []
    if getattr(args, "case", None):
        for path in args.case:
            text = Path(path).read_text(encoding="utf-8")
            case = parse_case(text, name=Path(path).stem)
            cases.append((case.name, -1, case))
    if getattr(args, "recipe", None):
        recipe = CaseRecipe(style=args.recipe, n_dsos=args.dsos,
                            congestion=args.congestion)
        for seed in _parse_seeds(args.seed):
            case = generate_case(recipe, seed)
            cases.append((case.name, seed, case))
    if not cases:
        raise SystemExit("no cases: pass --case files and/or --recipe with --seed")
    return cases


def _parse_seeds(spec: str) -> list[int]:
    seeds: list[int] = []
    for chunk in spec.split(","):
        chunk = chunk.strip()
        if "-" in chunk[1:]:
            lo, hi = chunk.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif chunk:
            seeds.append(int(chunk))
    return seeds


def _run_method(case: MarketCase, method: str, pricing_kind: str,
                delta: float | None, refine: int,
                common: ClearingResult) -> Outcome:
    pricing = interface_price(case, pricing_kind, common)
    if method == "three_layer":
        return run_three_layer(case, pricing, common=common)
    if method == "filtering":
        return run_bid_filtering(case, pricing, common=common)
    if method == "aggregation_primal":
        return run_bid_aggregation(case, delta, refine, "primal", common=common)
    if method == "aggregation_dual":
        return run_bid_aggregation(case, delta, refine, "dual", common=common)
    if method == "fragmented":
        return run_sequential(case, pricing, "fragmented", common=common)
    if method == "idealized":
        return run_sequential(case, pricing, "idealized", common=common)
    if method == "sequential_raw":
        return run_sequential(case, pricing, "practical", common=common)
    raise SystemExit(f"unknown method {method}")


def _result_row(case_id: str, seed: int, method: str, pricing: str,
                delta: float | None, outcome: Outcome | None,
                error: str | None = None) -> dict:
    if outcome is None:
        return {**{c: "" for c in RESULT_COLUMNS}, "case_id": case_id,
                "seed": seed, "method": method, "pricing": pricing,
                "delta_bar": _fmt(delta), "status": error or "error"}
    return {
        "case_id": case_id, "seed": seed, "method": method, "pricing": pricing,
        "delta_bar": _fmt(delta), "J_tot": _fmt(outcome.total_cost),
        "J_com": _fmt(outcome.j_common), "eta_pct": _fmt(outcome.eta_pct),
        "safe": _fmt(outcome.safe), "lp_solves": outcome.lp_solves,
        "milp_nodes": outcome.milp_nodes, "wall_ms": _fmt(outcome.wall_ms),
        "status": outcome.status,
    }


def cmd_gen_case(args) -> int:
    recipe = CaseRecipe(style=args.recipe, n_dsos=args.dsos,
                        congestion=args.congestion)
    emit_case(recipe, args.seed, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_validate(args) -> int:
    case = parse_case(Path(args.case[0]).read_text(encoding="utf-8"))
    report = validate_case(case)
    for m in sorted(report.radial):
        print(f"DSO {m}: radial={report.radial[m]} "
              f"assumption1={report.assumption1[m]} "
              f"layer1_feasible={report.layer1_feasible[m]}")
    for note in report.warnings:
        print(f"warning: {note}")
    print("OK" if report.ok else "NOT OK")
    return 0 if report.ok else 1


def run_experiment(config: ExperimentConfig) -> Path:
    """Run every (case, method, pricing / step size) combination and append
    the outcome rows to ``results.csv`` in a deterministic order. Component
    errors become rows with a status message; the run continues."""
    jobs = []
    for case_id, seed, case in config.cases:
        for method in config.methods:
            for pricing in config.pricings:
                dlist = config.deltas if method.startswith("aggregation") else (None,)
                for delta in dlist:
                    jobs.append((case_id, seed, case, method, pricing, delta))

    common_cache: dict[str, ClearingResult] = {}
    for case_id, _, case in config.cases:
        common_cache[case_id] = clear_common(case)

    def work(job):
        case_id, seed, case, method, pricing, delta = job
        try:
            out = _run_method(case, method, pricing, delta, config.refine_rounds,
                              common_cache[case_id])
            return _result_row(case_id, seed, method, pricing, delta, out)
        except FlexmktError as exc:
            return _result_row(case_id, seed, method, pricing, delta, None,
                               error=f"error: {exc}")

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(work, jobs))
    else:
        rows = [work(j) for j in jobs]

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "results.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return path


def cmd_run(args) -> int:
    try:
        config = ExperimentConfig(
            cases=tuple(_load_cases(args)),
            methods=tuple(args.method or METHODS),
            pricings=tuple(args.pricing or ["none"]),
            deltas=tuple(args.delta or ()),
            refine_rounds=args.refine,
            out_dir=args.out,
            workers=args.workers,
        )
    except ContractError as exc:
        raise SystemExit(str(exc)) from exc
    path = run_experiment(config)
    rows = list(csv.DictReader(open(path, newline="", encoding="utf-8")))
    print(f"wrote {path} ({len(rows)} rows)")
    bad = [r for r in rows if str(r["status"]).startswith("error")]
    return 1 if bad else 0


def cmd_sweep_delta(args) -> int:
    cases = _load_cases(args)
    deltas = args.delta
    if not deltas:
        raise SystemExit("sweep-delta needs --delta values")
    variant = "dual" if args.method == "aggregation_dual" else "primal"
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "sweep.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case_id", "seed", "delta_bar", "eta_pct", "wall_ms"])
        for case_id, seed, case in cases:
            common = clear_common(case)
            for delta in sorted(deltas, reverse=True):
                out = run_bid_aggregation(case, delta, args.refine, variant,
                                          common=common)
                writer.writerow([case_id, seed, _fmt(delta), _fmt(out.eta_pct),
                                 _fmt(out.wall_ms)])
    print(f"wrote {path}")
    return 0


def cmd_check(args) -> int:
    """Executable property suite over seeded recipe cases."""
    failures: list[str] = []
    t0 = time.perf_counter()
    styles = [args.recipe] if args.recipe else list("ABCD")
    n_done = 0
    for seed in _parse_seeds(args.seed):
        style = styles[seed % len(styles)]
        case = generate_case(CaseRecipe(style=style, n_dsos=args.dsos,
                                        congestion=args.congestion), seed)
        common = clear_common(case)
        jc = common.objective
        pricing = interface_price(case, "none", common)
        scale = 1e-6 * (1.0 + abs(jc))

        ideal = run_sequential(case, pricing, "idealized", common=common)
        frag = run_sequential(case, pricing, "fragmented", common=common)
        if not ideal.total_cost <= frag.total_cost + scale:
            failures.append(f"{case.name}: idealized cost above fragmented")

        filt = run_bid_filtering(case, pricing, common=common)
        if filt.status != "ok" or not filt.safe:
            failures.append(f"{case.name}: filtering outcome not grid-safe")

        for variant in ("primal", "dual"):
            agg = run_bid_aggregation(case, args.delta[0] if args.delta else 1.0,
                                      args.refine, variant, common=common)
            if not agg.safe:
                failures.append(f"{case.name}: aggregation[{variant}] unsafe")
            if not agg.total_cost >= jc - scale:
                failures.append(f"{case.name}: aggregation[{variant}] beat the benchmark")
            if variant == "primal":
                bound = suboptimality_constant(case) * (args.delta[0] if args.delta else 1.0)
                if not agg.total_cost - jc <= bound + scale:
                    failures.append(f"{case.name}: step-size suboptimality bound violated")
        n_done += 1

    for line in failures:
        print(f"FAIL {line}")
    print(f"checked {n_done} cases in {time.perf_counter() - t0:.1f} s; "
          f"{len(failures)} failures")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flexmkt",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common_case_args(p, need_out=False):
        p.add_argument("--case", action="append", default=[],
                       help="case file (repeatable)")
        p.add_argument("--recipe", choices=list("ABCD"), help="recipe style")
        p.add_argument("--seed", default="0", help="seed list, e.g. 1,2,5-8")
        p.add_argument("--dsos", type=int, default=2)
        p.add_argument("--congestion", type=float, default=0.9)
        p.add_argument("--refine", type=int, default=0)
        p.add_argument("--delta", type=float, action="append",
                       help="aggregation step size (repeatable)")
        p.add_argument("--workers", type=int, default=1)
        if need_out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-case", help="write one generated case file")
    p.add_argument("--recipe", choices=list("ABCD"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dsos", type=int, default=2)
    p.add_argument("--congestion", type=float, default=0.9)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_case)

    p = sub.add_parser("validate", help="validate a case file")
    p.add_argument("--case", action="append", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run methods over cases, write results.csv")
    common_case_args(p, need_out=True)
    p.add_argument("--method", action="append", choices=list(METHODS))
    p.add_argument("--pricing", action="append", choices=list(PRICINGS))
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-delta", help="aggregation step-size sweep")
    common_case_args(p, need_out=True)
    p.add_argument("--method", default="aggregation_primal",
                   choices=["aggregation_primal", "aggregation_dual"])
    p.set_defaults(func=cmd_sweep_delta)

    p = sub.add_parser("check", help="run the executable property suite")
    common_case_args(p)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
