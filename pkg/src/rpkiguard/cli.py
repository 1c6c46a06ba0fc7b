"""Command-line entry points; batch, non-interactive, CSV in and out.

Exit codes: 0 success, 1 input problem (message names the file, line, or
flag), 2 internal error. Every stochastic subcommand takes ``--seed``;
when omitted a seed is chosen and printed to stderr so the run can be
reproduced.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import secrets
import sys
from typing import IO, Iterator, Sequence

from rpkiguard import coverage as coverage_mod
from rpkiguard.clients import CountryCensus, build_census, population_from_fractions
from rpkiguard.consensus import (
    ConsensusSnapshot,
    RouteData,
    guard_set,
    load_routes,
    parse_consensus,
    resolve_rpki,
)
from rpkiguard.discount import (
    DiscountParams,
    expected_utilization,
    optimal_discount,
    roa_bandwidth_split,
)
from rpkiguard.matching import (
    CATEGORY_ORDER,
    Category,
    LpConfig,
    RewardParams,
    expected_matched_rate,
    optimize_weights,
    vanilla_matched_rate,
)
from rpkiguard.rpki import RoaStore, RovRegistry, load_roas, load_rov
from rpkiguard.sim import DayInput, SimConfig, run_churn_timeline, run_many

log = logging.getLogger(__name__)


class CliInputError(Exception):
    """Bad or missing input; maps to exit code 1."""


def _open_input(path: str):
    try:
        return open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise CliInputError(f"{path}: {exc.strerror or exc}") from exc


@contextlib.contextmanager
def _open_output(path: str) -> Iterator[IO[str]]:
    if path == "-":
        yield sys.stdout
        return
    try:
        stream = open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise CliInputError(f"{path}: {exc.strerror or exc}") from exc
    with stream:
        yield stream


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name.replace("-", "_"), None) in (None, []):
            raise CliInputError(f"--{name} is required for this subcommand")


def _load_rov_registry(specs: Sequence[str], threshold: float) -> RovRegistry:
    registry = RovRegistry(threshold)
    for spec in specs:
        source, sep, path = spec.partition("=")
        if not sep:
            source, path = "custom", spec
        with _open_input(path) as stream:
            load_rov(stream, source=source, registry=registry)
    return registry


def _load_snapshot(args: argparse.Namespace) -> tuple[ConsensusSnapshot, RouteData, RoaStore, RovRegistry]:
    _require(args, "consensus", "roa", "routes", "rov")
    with _open_input(args.consensus) as stream:
        snapshot = parse_consensus(stream)
    with _open_input(args.roa) as stream:
        roas = load_roas(stream)
    with _open_input(args.routes) as stream:
        routes = load_routes(stream)
    rov = _load_rov_registry(args.rov, args.rov_threshold)
    resolved = resolve_rpki(snapshot, routes.table, roas, rov)
    return resolved, routes, roas, rov


def _parse_fraction_spec(spec: str) -> dict[Category, float]:
    fractions: dict[Category, float] = {}
    try:
        for part in spec.split(","):
            name, _, value = part.partition("=")
            fractions[Category(name.strip().lower())] = float(value)
    except ValueError as exc:
        raise CliInputError(f"bad --client-fractions {spec!r}: {exc}") from exc
    total = sum(fractions.values())
    if abs(total - 1.0) > 1e-9:
        raise CliInputError(f"--client-fractions must sum to 1, got {total}")
    return fractions


def _client_distribution(args: argparse.Namespace, routes: RouteData, roas, rov) -> dict[Category, float]:
    if getattr(args, "client_fractions", None):
        return _parse_fraction_spec(args.client_fractions)
    if getattr(args, "country_users", None) and getattr(args, "country_asns", None):
        census = _census_from_args(args, routes, roas, rov)
        return census.overall()
    raise CliInputError(
        "client distribution required: pass --client-fractions or --country-users/--country-asns"
    )


def _census_from_args(args: argparse.Namespace, routes: RouteData, roas, rov) -> CountryCensus:
    with _open_input(args.country_users) as users, _open_input(args.country_asns) as asns:
        try:
            return build_census(users, asns, routes, roas, rov)
        except ValueError as exc:
            raise CliInputError(str(exc)) from exc


def _lp_config(args: argparse.Namespace, distribution: dict[Category, float]) -> LpConfig:
    try:
        return LpConfig(
            load_factor=args.load,
            theta=args.theta,
            reward=RewardParams(d1=args.d1, d2=args.d2, bonus=args.bonus),
            client_distribution=distribution,
            objective_mode=args.objective_mode,
        )
    except ValueError as exc:
        raise CliInputError(str(exc)) from exc


def _seed(args: argparse.Namespace) -> int:
    if args.seed is not None:
        return args.seed
    seed = secrets.randbits(32)
    print(f"seed: {seed}", file=sys.stderr)
    return seed


def _parse_grid(spec: str, what: str) -> list[float]:
    try:
        if ":" in spec:
            start_s, stop_s, step_s = spec.split(":")
            start, stop, step = float(start_s), float(stop_s), float(step_s)
            if step <= 0:
                raise ValueError("step must be positive")
            count = int(round((stop - start) / step))
            return [round(start + i * step, 12) for i in range(count + 1)]
        return [float(v) for v in spec.split(",") if v.strip()]
    except ValueError as exc:
        raise CliInputError(f"bad {what} grid {spec!r}: {exc}") from exc


def _write_run_csv(stream: IO[str], results, aggregate) -> None:
    writer = csv.writer(stream)
    writer.writerow(["kind", "run", "client_roa_rate", "matched_rate", "overload_count"])
    for m in results:
        writer.writerow(["run", m.run_index, m.client_roa_rate, m.matched_rate, m.overload_count])
    writer.writerow(
        ["mean", "", aggregate.mean_client_roa_rate, aggregate.mean_matched_rate, aggregate.mean_overload_count]
    )
    writer.writerow(
        ["std", "", aggregate.std_client_roa_rate, aggregate.std_matched_rate, aggregate.std_overload_count]
    )


def cmd_coverage(args: argparse.Namespace) -> int:
    rov = _load_rov_registry(args.rov, args.rov_threshold) if args.rov else RovRegistry(args.rov_threshold)
    rows: list[tuple[str, coverage_mod.CoverageStats]] = []
    if args.manifest:
        if not args.rov:
            raise CliInputError("--rov is required with --manifest")
        snapshots, roas_by_date, routes_by_date = [], {}, {}
        with _open_input(args.manifest) as stream:
            for lineno, row in enumerate(csv.reader(stream), start=1):
                if not row or row[0].strip().startswith("#"):
                    continue
                if lineno == 1 and row[0].strip().lower() == "date":
                    continue
                if len(row) < 4:
                    raise CliInputError(f"{args.manifest}: line {lineno}: expected date,consensus,roa,routes")
                date, consensus_path, roa_path, routes_path = (cell.strip() for cell in row[:4])
                with _open_input(consensus_path) as s:
                    snapshots.append((date, parse_consensus(s)))
                with _open_input(roa_path) as s:
                    roas_by_date[date] = load_roas(s)
                with _open_input(routes_path) as s:
                    routes_by_date[date] = load_routes(s).table
        rows = coverage_mod.coverage_timeseries(snapshots, roas_by_date, routes_by_date, rov)
    else:
        snapshot, _, _, _ = _load_snapshot(args)
        date = args.date or snapshot.valid_after or "snapshot"
        rows = [(date, coverage_mod.coverage_report(snapshot))]
    with _open_output(args.output) as stream:
        coverage_mod.write_coverage_csv(rows, stream)
    return 0


def cmd_discount_sim(args: argparse.Namespace) -> int:
    snapshot, routes, roas, rov = _load_snapshot(args)
    seed = _seed(args)
    try:
        params = DiscountParams(discount=args.discount, load_factor=args.load)
    except ValueError as exc:
        raise CliInputError(str(exc)) from exc
    cfg = SimConfig(
        algorithm="discount",
        clients=args.clients,
        runs=args.runs,
        seed=seed,
        discount=params,
        max_retries=args.max_retries,
    )
    if args.country_users and args.country_asns:
        population = _census_from_args(args, routes, roas, rov)
    else:
        # Discount selection is client-agnostic; categories only feed the
        # matched-rate column, which stays 0 for an uncategorized run.
        population = population_from_fractions({Category.NEITHER: 1.0}, args.clients)
    results, aggregate = run_many(cfg, snapshot, population, jobs=args.jobs)
    with _open_output(args.output) as stream:
        _write_run_csv(stream, results, aggregate)
    return 0


def cmd_matching_sim(args: argparse.Namespace) -> int:
    snapshot, routes, roas, rov = _load_snapshot(args)
    seed = _seed(args)
    distribution = _client_distribution(args, routes, roas, rov)
    lp = _lp_config(args, distribution)
    cfg = SimConfig(
        algorithm="matching",
        clients=args.clients,
        runs=args.runs,
        seed=seed,
        lp=lp,
        max_retries=args.max_retries,
    )
    population = population_from_fractions(distribution, args.clients)
    results, aggregate = run_many(cfg, snapshot, population, jobs=args.jobs)
    with _open_output(args.output) as stream:
        _write_run_csv(stream, results, aggregate)
    return 0


def _load_days(path: str, snapshot: ConsensusSnapshot) -> list[DayInput]:
    days: list[DayInput] = []
    with _open_input(path) as stream:
        reader = csv.reader(stream)
        header = next(reader, None)
        if header is None:
            raise CliInputError(f"{path}: empty day series")
        columns = [cell.strip().lower() for cell in header]
        expected = ["day", "roa", "rov", "both", "neither"]
        if columns != expected:
            raise CliInputError(f"{path}: day series header must be {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or row[0].strip().startswith("#"):
                continue
            if len(row) < 5:
                raise CliInputError(f"{path}: line {lineno}: expected 5 columns")
            try:
                fractions = {
                    Category.ROA: float(row[1]),
                    Category.ROV: float(row[2]),
                    Category.BOTH: float(row[3]),
                    Category.NEITHER: float(row[4]),
                }
            except ValueError as exc:
                raise CliInputError(f"{path}: line {lineno}: {exc}") from exc
            days.append(DayInput(row[0].strip(), fractions, snapshot if lineno == 2 else None))
    if not days:
        raise CliInputError(f"{path}: no days in series")
    return days


def cmd_churn_sim(args: argparse.Namespace) -> int:
    snapshot, _, _, _ = _load_snapshot(args)
    _require(args, "days")
    seed = _seed(args)
    lp = _lp_config(args, {c: 0.25 for c in CATEGORY_ORDER})  # per-day override
    cfg = SimConfig(
        algorithm="matching",
        clients=args.clients,
        runs=args.runs,
        seed=seed,
        lp=lp,
        max_retries=args.max_retries,
    )
    days = _load_days(args.days, snapshot)
    with _open_output(args.output) as stream:
        writer = csv.writer(stream)
        writer.writerow(
            [
                "run",
                "day",
                "population",
                "new_clients",
                "removed_clients",
                "reselected",
                "retained_changed",
                "matched_with_churn",
                "matched_without_churn",
                "roa_with_churn",
                "roa_without_churn",
            ]
        )
        for run in range(cfg.runs):
            for day in run_churn_timeline(days, cfg, run_index=run, age_out_days=args.age_out):
                writer.writerow(
                    [
                        run,
                        day.label,
                        day.population,
                        day.new_clients,
                        day.removed_clients,
                        day.reselected,
                        day.retained_changed,
                        day.matched_with_churn,
                        day.matched_without_churn,
                        day.roa_with_churn,
                        day.roa_without_churn,
                    ]
                )
    return 0


def cmd_optimize_weights(args: argparse.Namespace) -> int:
    snapshot, routes, roas, rov = _load_snapshot(args)
    distribution = _client_distribution(args, routes, roas, rov)
    lp = _lp_config(args, distribution)
    guards = guard_set(snapshot)
    matrix = optimize_weights(guards, lp)
    with _open_output(args.output) as stream:
        writer = csv.writer(stream)
        writer.writerow(["relay_id", "category", "weight"])
        for i, identity in enumerate(matrix.identities):
            for ci, category in enumerate(CATEGORY_ORDER):
                writer.writerow([identity, category.value, matrix.weights[i, ci]])
            writer.writerow([identity, "vanilla", matrix.vanilla[i]])
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    snapshot, routes, roas, rov = _load_snapshot(args)
    _require(args, "grid")
    distribution = _client_distribution(args, routes, roas, rov)
    guards = guard_set(snapshot)

    combos: list[tuple[float, float, float, float]] = []
    with _open_input(args.grid) as stream:
        for lineno, row in enumerate(csv.reader(stream), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            if len(row) < 4:
                raise CliInputError(f"{args.grid}: line {lineno}: expected l,d1,d2,B")
            try:
                combos.append(tuple(float(cell) for cell in row[:4]))
            except ValueError as exc:
                if lineno == 1:
                    continue  # optional header
                raise CliInputError(f"{args.grid}: line {lineno}: {exc}") from exc

    with _open_output(args.output) as stream:
        writer = csv.writer(stream)
        writer.writerow(["l", "d1", "d2", "B", "matched_rate", "delta_matched_rate"])
        for load, d1, d2, bonus in combos:
            try:
                lp = LpConfig(
                    load_factor=load,
                    theta=args.theta,
                    reward=RewardParams(d1=d1, d2=d2, bonus=bonus),
                    client_distribution=distribution,
                    objective_mode=args.objective_mode,
                )
            except ValueError as exc:
                raise CliInputError(f"grid row l={load},d1={d1},d2={d2},B={bonus}: {exc}") from exc
            matrix = optimize_weights(guards, lp)
            rate = expected_matched_rate(matrix, distribution)
            delta = rate - vanilla_matched_rate(matrix, distribution)
            writer.writerow([load, d1, d2, bonus, rate, delta])
    return 0


def _roa_share(args: argparse.Namespace) -> float:
    if args.roa_share is not None:
        if not 0.0 <= args.roa_share <= 1.0:
            raise CliInputError(f"--roa-share must be in [0, 1]: {args.roa_share}")
        return args.roa_share
    snapshot, _, _, _ = _load_snapshot(args)
    covered, total = roa_bandwidth_split(guard_set(snapshot))
    if total <= 0:
        raise CliInputError("snapshot has no guard bandwidth")
    return covered / total


def cmd_utilization_grid(args: argparse.Namespace) -> int:
    share = _roa_share(args)
    loads = _parse_grid(args.loads, "--loads")
    discounts = _parse_grid(args.discounts, "--discounts")
    with _open_output(args.output) as stream:
        writer = csv.writer(stream)
        writer.writerow(["load", "discount", "roa_share", "utilization"])
        for load in loads:
            for discount in discounts:
                value = expected_utilization(load, discount, share, 1.0)
                writer.writerow([load, discount, share, value])
    return 0


def cmd_optimal_discount(args: argparse.Namespace) -> int:
    loads = _parse_grid(args.loads, "--loads")
    entries: list[tuple[str, float]] = []
    if args.manifest:
        with _open_input(args.manifest) as stream:
            for lineno, row in enumerate(csv.reader(stream), start=1):
                if not row or row[0].strip().startswith("#"):
                    continue
                if lineno == 1 and row[0].strip().lower() == "date":
                    continue
                if len(row) < 4:
                    raise CliInputError(f"{args.manifest}: line {lineno}: expected date,consensus,roa,routes")
                date, consensus_path, roa_path, routes_path = (cell.strip() for cell in row[:4])
                with _open_input(consensus_path) as s:
                    snapshot = parse_consensus(s)
                with _open_input(roa_path) as s:
                    roas = load_roas(s)
                with _open_input(routes_path) as s:
                    routes = load_routes(s)
                rov = _load_rov_registry(args.rov, args.rov_threshold) if args.rov else RovRegistry()
                resolved = resolve_rpki(snapshot, routes.table, roas, rov)
                covered, total = roa_bandwidth_split(guard_set(resolved))
                if total <= 0:
                    raise CliInputError(f"{date}: snapshot has no guard bandwidth")
                entries.append((date, covered / total))
    else:
        share = _roa_share(args)
        entries.append((args.date or "snapshot", share))
    with _open_output(args.output) as stream:
        writer = csv.writer(stream)
        writer.writerow(["date", "load", "roa_share", "optimal_discount"])
        for date, share in entries:
            for load in loads:
                writer.writerow([date, load, share, optimal_discount(load, share, 1.0)])
    return 0


def _add_input_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--consensus", help="network-status consensus file")
    parser.add_argument("--roa", help="ROA CSV file (asn,prefix,max_length)")
    parser.add_argument("--routes", help="route table CSV (prefix,origin_asn)")
    parser.add_argument(
        "--rov",
        action="append",
        default=[],
        metavar="[SOURCE=]PATH",
        help="ROV list file (asn[,score]); repeatable, optional source label",
    )
    parser.add_argument("--rov-threshold", type=float, default=0.5, help="ROV enforcement threshold")


def _add_lp_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--load", type=float, default=0.8, help="network load factor l")
    parser.add_argument("--theta", type=float, default=5.0, help="guard placement cap")
    parser.add_argument("--d1", type=float, default=0.9, help="discount for missing ROV")
    parser.add_argument("--d2", type=float, default=0.7, help="discount for missing ROA")
    parser.add_argument("--bonus", type=float, default=1.5, help="matching bonus")
    parser.add_argument(
        "--objective-mode",
        choices=("weighted", "literal"),
        default="weighted",
        help="weight objective terms by client distribution or not",
    )


def _add_client_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--country-users", help="country,fraction CSV of Tor users")
    parser.add_argument("--country-asns", help="country,asn CSV")
    parser.add_argument(
        "--client-fractions",
        metavar="roa=F,rov=F,both=F,neither=F",
        help="category distribution, bypassing the country census",
    )


def _add_sim_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--clients", type=int, default=1_000_000, help="clients per run")
    parser.add_argument("--runs", type=int, default=100, help="simulation runs to aggregate")
    parser.add_argument("--seed", type=int, default=None, help="master seed (chosen and printed if omitted)")
    parser.add_argument("--max-retries", type=int, default=100, help="reselection retry cap")
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="parallel worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rpkiguard", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="verbose logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("coverage", help="ROA/ROV coverage report")
    _add_input_flags(p)
    p.add_argument("--manifest", help="CSV date,consensus,roa,routes for a timeseries")
    p.add_argument("--date", help="date label for single-snapshot reports")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("discount-sim", help="discounted guard selection simulation")
    _add_input_flags(p)
    _add_client_flags(p)
    p.add_argument("--discount", type=float, required=True, help="discount factor d")
    p.add_argument("--load", type=float, default=0.8, help="network load factor l")
    _add_sim_flags(p)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_discount_sim)

    p = sub.add_parser("matching-sim", help="matched guard selection simulation")
    _add_input_flags(p)
    _add_client_flags(p)
    _add_lp_flags(p)
    _add_sim_flags(p)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_matching_sim)

    p = sub.add_parser("churn-sim", help="daily churn timeline simulation")
    _add_input_flags(p)
    _add_lp_flags(p)
    _add_sim_flags(p)
    p.add_argument("--days", help="CSV day,roa,rov,both,neither of daily category shares")
    p.add_argument("--age-out", type=int, default=120, help="guard reselection age in days")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_churn_sim)

    p = sub.add_parser("optimize-weights", help="solve the weight optimization once")
    _add_input_flags(p)
    _add_client_flags(p)
    _add_lp_flags(p)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_optimize_weights)

    p = sub.add_parser("sweep", help="matched rate over an l,d1,d2,B parameter grid")
    _add_input_flags(p)
    _add_client_flags(p)
    p.add_argument("--grid", help="CSV l,d1,d2,B of parameter combinations")
    p.add_argument("--theta", type=float, default=5.0)
    p.add_argument(
        "--objective-mode", choices=("weighted", "literal"), default="weighted"
    )
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("utilization-grid", help="expected utilization over (load, discount)")
    _add_input_flags(p)
    p.add_argument("--roa-share", type=float, help="validated share of guard bandwidth (skips input files)")
    p.add_argument("--loads", default="0.1:1.0:0.1", help="grid start:stop:step or comma list")
    p.add_argument("--discounts", default="0:1:0.01", help="grid start:stop:step or comma list")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_utilization_grid)

    p = sub.add_parser("optimal-discount", help="smallest fully-utilizing discount per load")
    _add_input_flags(p)
    p.add_argument("--roa-share", type=float, help="validated share of guard bandwidth (skips input files)")
    p.add_argument("--manifest", help="CSV date,consensus,roa,routes for a timeseries")
    p.add_argument("--date", help="date label for single-snapshot output")
    p.add_argument("--loads", default="0.1:1.0:0.1", help="grid start:stop:step or comma list")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_optimal_discount)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except CliInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - boundary between CLI and library
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
