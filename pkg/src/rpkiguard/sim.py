"""Monte-Carlo client-selection harness.

All randomness derives from one master seed through numpy SeedSequence
keys: stream k of run r uses ``SeedSequence((master, r, stream, ...))``,
so runs are reproducible independently and in parallel. Multi-run
simulations sample the client population once and reuse it across runs;
only the selection stream differs per run.

Churn timelines keep a standing population with sticky guard
assignments: each day the population shifts toward that day's category
distribution, weights are re-optimized, and only new (plus aged-out)
clients select. The no-churn comparator rebuilds the day's ideal
population and selects it from scratch with a fixed stream, so a day
with zero distribution change reproduces the with-churn numbers exactly.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from rpkiguard.clients import (
    Client,
    ClientPopulation,
    CountryCensus,
    apply_churn,
    population_from_fractions,
    sample_clients,
)
from rpkiguard.consensus import ConsensusSnapshot, Relay, guard_set
from rpkiguard.discount import DiscountParams, SelectionState, discounted_weights
from rpkiguard.matching import (
    CATEGORY_INDEX,
    Category,
    LpConfig,
    WeightMatrix,
    matched_matrix,
    optimize_weights,
)

ALGORITHMS = ("vanilla", "discount", "matching")

# Seed-derivation stream tags.
STREAM_POPULATION = 0
STREAM_SELECTION = 1
STREAM_CHURN = 2


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Deterministic generator for a (master seed, stream key...) tuple."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, *key))))


@dataclass
class SimConfig:
    algorithm: str
    clients: int = 1_000_000
    runs: int = 100
    seed: int = 0
    discount: DiscountParams | None = None
    lp: LpConfig | None = None
    max_retries: int = 100

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}: {self.algorithm}")
        if self.clients < 1:
            raise ValueError("need at least one client")
        if self.runs < 1:
            raise ValueError("need at least one run")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.algorithm == "discount" and self.discount is None:
            raise ValueError("discount algorithm needs DiscountParams")
        if self.algorithm == "matching" and self.lp is None:
            raise ValueError("matching algorithm needs LpConfig")
        if self.algorithm == "vanilla" and self.discount is None:
            self.discount = DiscountParams(discount=1.0, load_factor=1.0)


@dataclass
class RunMetrics:
    run_index: int
    client_roa_rate: float
    matched_rate: float
    assigned_counts: np.ndarray
    overload_count: int
    wall_time: float


@dataclass
class AggregateMetrics:
    runs: int
    mean_client_roa_rate: float
    std_client_roa_rate: float
    mean_matched_rate: float
    std_matched_rate: float
    mean_overload_count: float
    std_overload_count: float
    mean_assigned_counts: np.ndarray


def _selection_setup(
    cfg: SimConfig, guards: Sequence[Relay], weights: WeightMatrix | None
) -> tuple[np.ndarray | dict[Category, np.ndarray], float]:
    if cfg.algorithm == "matching":
        assert weights is not None
        return weights.columns(), cfg.lp.load_factor
    params = cfg.discount
    d = 1.0 if cfg.algorithm == "vanilla" else params.discount
    return discounted_weights(guards, d), params.load_factor


def _require_resolved(guards: Sequence[Relay]) -> None:
    if not guards:
        raise ValueError("snapshot has no eligible guards")
    for relay in guards:
        if relay.category is None:
            raise ValueError("snapshot is not resolved; call resolve_rpki first")


def run_once(
    cfg: SimConfig,
    snapshot: ConsensusSnapshot,
    population_or_census: ClientPopulation | CountryCensus,
    rng: np.random.Generator,
    weights: WeightMatrix | None = None,
    day: int = 0,
) -> RunMetrics:
    """One full selection pass; clears any prior assignments first."""
    guards = guard_set(snapshot)
    _require_resolved(guards)
    if cfg.algorithm == "matching":
        if weights is None:
            weights = optimize_weights(guards, cfg.lp)
        else:
            weights = weights.reordered([g.identity for g in guards])

    if isinstance(population_or_census, CountryCensus):
        population = sample_clients(population_or_census, cfg.clients, rng)
    else:
        population = population_or_census
        population.clear_assignments()

    start = time.perf_counter()
    columns, load_factor = _selection_setup(cfg, guards, weights)
    state = SelectionState(guards, columns, load_factor, len(population), cfg.max_retries)
    identities = [g.identity for g in guards]
    matching = cfg.algorithm == "matching"

    n = len(population)
    chosen = np.empty(n, dtype=np.int64)
    for i, client in enumerate(population.clients):
        index, _ = state.select(rng, client.category if matching else None)
        chosen[i] = index
        population.assign(client, identities[index], day)

    roa_mask = np.array([g.roa_valid for g in guards])
    relay_cat = np.array([CATEGORY_INDEX[g.category] for g in guards], dtype=np.int8)
    client_cat = np.fromiter(
        (CATEGORY_INDEX[c.category] for c in population.clients), dtype=np.int8, count=n
    )
    matched = matched_matrix()
    metrics = RunMetrics(
        run_index=0,
        client_roa_rate=float(roa_mask[chosen].mean()),
        matched_rate=float(matched[client_cat, relay_cat[chosen]].mean()),
        assigned_counts=state.assigned.copy(),
        overload_count=state.overload_count,
        wall_time=time.perf_counter() - start,
    )
    return metrics


def _run_task(args) -> RunMetrics:
    cfg, snapshot, population, weights, run_index = args
    rng = rng_for(cfg.seed, run_index, STREAM_SELECTION)
    metrics = run_once(cfg, snapshot, population, rng, weights)
    metrics.run_index = run_index
    return metrics


def run_many(
    cfg: SimConfig,
    snapshot: ConsensusSnapshot,
    population_or_census: ClientPopulation | CountryCensus,
    weights: WeightMatrix | None = None,
    jobs: int = 1,
) -> tuple[list[RunMetrics], AggregateMetrics]:
    """``cfg.runs`` selection passes over one shared client population."""
    guards = guard_set(snapshot)
    _require_resolved(guards)
    if cfg.algorithm == "matching" and weights is None:
        weights = optimize_weights(guards, cfg.lp)
    if isinstance(population_or_census, CountryCensus):
        population = sample_clients(
            population_or_census, cfg.clients, rng_for(cfg.seed, 0, STREAM_POPULATION)
        )
    else:
        population = population_or_census

    tasks = [(cfg, snapshot, population, weights, run) for run in range(cfg.runs)]
    if jobs > 1 and cfg.runs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(task) for task in tasks]
    results.sort(key=lambda m: m.run_index)
    return results, aggregate_metrics(results)


def aggregate_metrics(results: Sequence[RunMetrics]) -> AggregateMetrics:
    roa = np.array([m.client_roa_rate for m in results])
    matched = np.array([m.matched_rate for m in results])
    overload = np.array([float(m.overload_count) for m in results])
    counts = np.stack([m.assigned_counts for m in results])
    return AggregateMetrics(
        runs=len(results),
        mean_client_roa_rate=float(roa.mean()),
        std_client_roa_rate=float(roa.std()),
        mean_matched_rate=float(matched.mean()),
        std_matched_rate=float(matched.std()),
        mean_overload_count=float(overload.mean()),
        std_overload_count=float(overload.std()),
        mean_assigned_counts=counts.mean(axis=0),
    )


@dataclass
class DayInput:
    """One churn-timeline day: label, category distribution, optional new snapshot."""

    label: str
    fractions: Mapping[Category, float]
    snapshot: ConsensusSnapshot | None = None


@dataclass
class DayResult:
    label: str
    population: int
    new_clients: int
    removed_clients: int
    reselected: int
    retained_changed: int
    matched_with_churn: float
    roa_with_churn: float
    matched_without_churn: float
    roa_without_churn: float


@dataclass
class _RelayView:
    identities: list[str]
    roa_by_identity: dict[str, bool]
    cat_by_identity: dict[str, int]


def _relay_view(guards: Sequence[Relay]) -> _RelayView:
    return _RelayView(
        identities=[g.identity for g in guards],
        roa_by_identity={g.identity: g.roa_valid for g in guards},
        cat_by_identity={g.identity: CATEGORY_INDEX[g.category] for g in guards},
    )


def _population_rates(population: ClientPopulation, view: _RelayView) -> tuple[float, float]:
    """(matched rate, roa rate) over current assignments.

    Clients whose guard is absent from the current snapshot count as
    unmatched and uncovered.
    """
    matched_tbl = matched_matrix()
    matched = 0
    covered = 0
    for client in population.clients:
        guard = client.assigned_guard
        if guard is None:
            continue
        cat = view.cat_by_identity.get(guard)
        if cat is None:
            continue
        if matched_tbl[CATEGORY_INDEX[client.category], cat]:
            matched += 1
        if view.roa_by_identity[guard]:
            covered += 1
    n = len(population)
    return matched / n, covered / n


def _carry_state(
    old: SelectionState | None,
    guards: Sequence[Relay],
    columns: dict[Category, np.ndarray],
    load_factor: float,
    expected: int,
    max_retries: int,
) -> SelectionState:
    state = SelectionState(guards, columns, load_factor, expected, max_retries)
    if old is not None:
        old_index = {g.identity: i for i, g in enumerate(old.guards)}
        for i, g in enumerate(guards):
            j = old_index.get(g.identity)
            if j is not None:
                state.assigned[i] = old.assigned[j]
        state.total_assigned = int(state.assigned.sum())
        state.overload_count = old.overload_count
    return state


def run_churn_timeline(
    days: Sequence[DayInput],
    cfg: SimConfig,
    run_index: int = 0,
    age_out_days: int = 120,
) -> list[DayResult]:
    """Daily churned selection vs a fresh-selection comparator (see module notes)."""
    if cfg.algorithm != "matching" or cfg.lp is None:
        raise ValueError("churn timelines run the matching algorithm")
    if not days:
        raise ValueError("need at least one day")
    if days[0].snapshot is None:
        raise ValueError("first day needs a snapshot")

    snapshot = days[0].snapshot
    guards = guard_set(snapshot)
    _require_resolved(guards)
    view = _relay_view(guards)

    population = population_from_fractions(days[0].fractions, cfg.clients)
    state: SelectionState | None = None
    results: list[DayResult] = []

    for di, day in enumerate(days):
        if day.snapshot is not None and day.snapshot is not snapshot:
            snapshot = day.snapshot
            guards = guard_set(snapshot)
            _require_resolved(guards)
            view = _relay_view(guards)

        lp = replace(cfg.lp, client_distribution=dict(day.fractions))
        matrix = optimize_weights(guards, lp)
        columns = matrix.columns()
        state = _carry_state(state, guards, columns, lp.load_factor, cfg.clients, cfg.max_retries)
        guard_index = {identity: i for i, identity in enumerate(view.identities)}

        new_clients: list[Client] = []
        removed = 0
        reselected = 0
        retained_changed = 0
        if di == 0:
            to_select = list(population.clients)
            rng_sel = rng_for(cfg.seed, run_index, STREAM_SELECTION, 0)
        else:
            before = {c.id: c.assigned_guard for c in population.clients}
            size_before = len(population)
            _, new_clients = apply_churn(
                population, day.fractions, rng_for(cfg.seed, run_index, STREAM_CHURN, di)
            )
            removed = size_before - (len(population) - len(new_clients))
            # released assignments: diff the per-relay counters against the state
            for identity, index in guard_index.items():
                excess = state.assigned[index] - population.assignment_counts.get(identity, 0)
                for _ in range(int(excess)):
                    state.release(index)

            aged = [
                c
                for c in population.clients
                if c.assigned_guard is not None and di - c.selected_on >= age_out_days
            ]
            for client in aged:
                index = guard_index.get(client.assigned_guard)
                if index is not None:
                    state.release(index)
            reselected = len(aged)
            to_select = aged + new_clients
            rng_sel = rng_for(cfg.seed, run_index, STREAM_SELECTION, di)

            aged_ids = {c.id for c in aged}
            retained_changed = sum(
                1
                for c in population.clients
                if c.id in before and c.id not in aged_ids and before[c.id] != c.assigned_guard
            )

        for client in to_select:
            index, _ = state.select(rng_sel, client.category)
            population.assign(client, view.identities[index], di)

        matched_churn, roa_churn = _population_rates(population, view)

        # No-churn comparator: the day's ideal population, selected from
        # scratch with streams fixed across days (day 0 reproduces the
        # with-churn selection exactly).
        cmp_population = population_from_fractions(day.fractions, cfg.clients)
        cmp_state = SelectionState(guards, columns, lp.load_factor, cfg.clients, cfg.max_retries)
        cmp_rng = rng_for(cfg.seed, run_index, STREAM_SELECTION, 0)
        for client in cmp_population.clients:
            index, _ = cmp_state.select(cmp_rng, client.category)
            cmp_population.assign(client, view.identities[index], di)
        matched_plain, roa_plain = _population_rates(cmp_population, view)

        results.append(
            DayResult(
                label=day.label,
                population=len(population),
                new_clients=len(new_clients),
                removed_clients=removed,
                reselected=reselected,
                retained_changed=retained_changed,
                matched_with_churn=matched_churn,
                roa_with_churn=roa_churn,
                matched_without_churn=matched_plain,
                roa_without_churn=roa_plain,
            )
        )
    return results
