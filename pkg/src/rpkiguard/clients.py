"""Client population generation and daily churn.

Clients are modeled as (country, category) pairs only; no client AS or
IP is ever materialized. The census maps each country to its share of
users and to a category distribution derived from the address space of
the country's ASes: every routed IPv4 prefix of an AS is classified by
origin validation plus the AS's ROV enforcement, weighted by its
2^(32 - length) addresses.

Churn adjusts a standing population toward a new category distribution:
surplus categories lose uniformly random clients, deficit categories
gain fresh unassigned clients, and everyone else keeps their guard.
Targets use largest-remainder rounding so the population size is
conserved exactly.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from rpkiguard.consensus import RouteData, load_routes
from rpkiguard.matching import CATEGORY_INDEX, CATEGORY_ORDER, Category, category_of
from rpkiguard.netprefix import IpPrefix
from rpkiguard.rpki import RoaStore, RovRegistry, ValidationStatus

log = logging.getLogger(__name__)


@dataclass
class CountryCensus:
    """Per-country Tor user shares and ROA/ROV category distributions."""

    countries: tuple[str, ...]
    user_fractions: np.ndarray  # (C,), sums to 1
    category_fractions: np.ndarray  # (C, 4) rows sum to 1, columns in CATEGORY_ORDER
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(self.countries) == 0:
            raise ValueError("census has no countries")
        if abs(float(self.user_fractions.sum()) - 1.0) > 1e-9:
            raise ValueError("user fractions must sum to 1")
        if np.any(self.user_fractions < 0) or np.any(self.category_fractions < 0):
            raise ValueError("census fractions must be nonnegative")
        row_err = np.abs(self.category_fractions.sum(axis=1) - 1.0).max()
        if row_err > 1e-9:
            raise ValueError(f"category distribution rows must sum to 1 (off by {row_err:.2e})")

    def overall(self) -> dict[Category, float]:
        """User-weighted category distribution across all countries."""
        mix = self.user_fractions @ self.category_fractions
        return {c: float(mix[i]) for i, c in enumerate(CATEGORY_ORDER)}


@dataclass
class Client:
    id: int
    country: str
    category: Category
    assigned_guard: str | None = None
    selected_on: int = -1


class ClientPopulation:
    """Mutable client roster with derived per-category and per-relay counts."""

    def __init__(self, clients: Iterable[Client]):
        self.clients: list[Client] = list(clients)
        self.assignment_counts: Counter[str] = Counter(
            c.assigned_guard for c in self.clients if c.assigned_guard is not None
        )
        self._next_id = 1 + max((c.id for c in self.clients), default=-1)

    def __len__(self) -> int:
        return len(self.clients)

    def new_id(self) -> int:
        self._next_id += 1
        return self._next_id - 1

    def category_counts(self) -> dict[Category, int]:
        counts = Counter(c.category for c in self.clients)
        return {c: counts.get(c, 0) for c in CATEGORY_ORDER}

    def assign(self, client: Client, relay_identity: str, day: int) -> None:
        if client.assigned_guard is not None:
            self.assignment_counts[client.assigned_guard] -= 1
            if self.assignment_counts[client.assigned_guard] <= 0:
                del self.assignment_counts[client.assigned_guard]
        client.assigned_guard = relay_identity
        client.selected_on = day
        self.assignment_counts[relay_identity] += 1

    def clear_assignments(self) -> None:
        for client in self.clients:
            client.assigned_guard = None
            client.selected_on = -1
        self.assignment_counts.clear()


def _read_csv_rows(reader: Iterable[str], n_columns: int, what: str) -> list[list[str]]:
    rows = []
    for lineno, row in enumerate(csv.reader(reader), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if row[0].lstrip().startswith("#"):
            continue
        if len(row) < n_columns:
            if lineno == 1:
                continue
            raise ValueError(f"{what} line {lineno}: expected {n_columns} columns")
        rows.append([cell.strip() for cell in row[:n_columns]] + [str(lineno)])
    return rows


def build_census(
    country_users: Iterable[str],
    country_asns: Iterable[str],
    routes: RouteData | Iterable[str],
    roas: RoaStore,
    rov: RovRegistry,
) -> CountryCensus:
    """Derive a country census from user shares, AS locations, and route data.

    ``country_users`` is ``country,fraction`` CSV, ``country_asns`` is
    ``country,asn`` CSV, and ``routes`` is either loaded RouteData or a
    ``prefix,origin_asn`` CSV stream. Only IPv4 prefixes contribute to
    address counts. A country whose ASes announce no routed addresses
    falls back to a uniform category distribution with a warning.
    """
    route_data = routes if isinstance(routes, RouteData) else load_routes(routes)
    warnings: list[str] = []

    users: list[tuple[str, float]] = []
    for row in _read_csv_rows(country_users, 2, "country_users"):
        country, fraction_text, lineno = row
        try:
            fraction = float(fraction_text)
        except ValueError:
            if lineno == "1":
                continue
            raise ValueError(f"country_users line {lineno}: bad fraction {fraction_text!r}")
        if fraction < 0:
            raise ValueError(f"country_users line {lineno}: negative fraction")
        users.append((country, fraction))
    if not users:
        raise ValueError("country_users has no usable rows")

    asns_by_country: dict[str, list[int]] = {}
    for row in _read_csv_rows(country_asns, 2, "country_asns"):
        country, asn_text, lineno = row
        try:
            asn = int(asn_text[2:]) if asn_text[:2].upper() == "AS" else int(asn_text)
        except ValueError:
            if lineno == "1":
                continue
            raise ValueError(f"country_asns line {lineno}: bad AS number {asn_text!r}")
        asns_by_country.setdefault(country, []).append(asn)

    countries = tuple(country for country, _ in users)
    user_fractions = np.array([fraction for _, fraction in users])
    total = float(user_fractions.sum())
    if total <= 0:
        raise ValueError("country user fractions sum to zero")
    if abs(total - 1.0) > 1e-6:
        log.warning("country user fractions sum to %.6f; normalizing", total)
    user_fractions = user_fractions / total

    category_rows = np.zeros((len(countries), 4))
    for ci, country in enumerate(countries):
        counts = np.zeros(4)
        for asn in asns_by_country.get(country, ()):
            for prefix in route_data.by_asn.get(asn, ()):
                if prefix.version != 4:
                    continue
                result = roas.validate(prefix, asn)
                category = category_of(
                    result.status is ValidationStatus.VALID, rov.is_enforcing(asn)
                )
                counts[CATEGORY_INDEX[category]] += 2.0 ** (32 - prefix.length)
        total_addresses = float(counts.sum())
        if total_addresses <= 0:
            warnings.append(f"{country}: no routed addresses, uniform category fallback")
            category_rows[ci] = 0.25
        else:
            category_rows[ci] = counts / total_addresses
    if warnings:
        log.warning("census fallbacks: %s", "; ".join(warnings))

    return CountryCensus(countries, user_fractions, category_rows, tuple(warnings))


def sample_clients(census: CountryCensus, n: int, rng: np.random.Generator) -> ClientPopulation:
    """Sample ``n`` clients: country by user share, category by that country's mix."""
    if n < 1:
        raise ValueError("need at least one client")
    country_indices = rng.choice(len(census.countries), size=n, p=census.user_fractions)
    category_indices = np.empty(n, dtype=np.int8)
    for ci in range(len(census.countries)):
        positions = np.nonzero(country_indices == ci)[0]
        if positions.size:
            category_indices[positions] = rng.choice(
                4, size=positions.size, p=census.category_fractions[ci]
            )
    return ClientPopulation(
        Client(i, census.countries[country_indices[i]], CATEGORY_ORDER[category_indices[i]])
        for i in range(n)
    )


def largest_remainder(fractions: np.ndarray, total: int) -> np.ndarray:
    """Integer quotas summing exactly to ``total``, largest fractional remainder first."""
    quotas = np.asarray(fractions, dtype=float) * total
    base = np.floor(quotas).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        order = np.argsort(-(quotas - base), kind="stable")
        base[order[:short]] += 1
    return base


def _fraction_vector(fractions: Mapping[Category, float]) -> np.ndarray:
    vec = np.zeros(4)
    for category, share in fractions.items():
        vec[CATEGORY_INDEX[category]] = share
    if np.any(vec < 0):
        raise ValueError("category fractions must be nonnegative")
    if abs(float(vec.sum()) - 1.0) > 1e-9:
        raise ValueError(f"category fractions must sum to 1, got {vec.sum()!r}")
    return vec


def population_from_fractions(
    fractions: Mapping[Category, float], n: int, country: str = "zz"
) -> ClientPopulation:
    """Population with exact largest-remainder category counts.

    Deterministic by construction (no sampling); used for churn
    timelines where exact category quotas keep zero-delta days at
    exactly zero churn.
    """
    if n < 1:
        raise ValueError("need at least one client")
    counts = largest_remainder(_fraction_vector(fractions), n)
    clients = []
    next_id = 0
    for category, count in zip(CATEGORY_ORDER, counts):
        for _ in range(int(count)):
            clients.append(Client(next_id, country, category))
            next_id += 1
    return ClientPopulation(clients)


@dataclass
class ChurnDelta:
    """Signed per-category client-count change for one day."""

    changes: dict[Category, int]

    @property
    def added(self) -> int:
        return sum(v for v in self.changes.values() if v > 0)

    @property
    def removed(self) -> int:
        return -sum(v for v in self.changes.values() if v < 0)


def churn_delta(pop: ClientPopulation, fractions: Mapping[Category, float]) -> ChurnDelta:
    """Target counts minus current counts under largest-remainder targets."""
    targets = largest_remainder(_fraction_vector(fractions), len(pop))
    current = pop.category_counts()
    return ChurnDelta(
        {c: int(targets[i]) - current[c] for i, c in enumerate(CATEGORY_ORDER)}
    )


def apply_churn(
    pop: ClientPopulation,
    fractions: Mapping[Category, float],
    rng: np.random.Generator,
) -> tuple[ClientPopulation, list[Client]]:
    """Adjust ``pop`` in place toward ``fractions``; returns (pop, new clients).

    Removals are uniformly random within each surplus category and never
    touch other categories; retained clients keep their guard and
    selection day. New clients are unassigned and must perform guard
    selection. Population size is conserved exactly.
    """
    delta = churn_delta(pop, fractions)

    drop_ids: set[int] = set()
    for category in CATEGORY_ORDER:
        surplus = -delta.changes[category]
        if surplus <= 0:
            continue
        members = [c for c in pop.clients if c.category is category]
        picks = rng.choice(len(members), size=surplus, replace=False)
        for pick in picks:
            drop_ids.add(members[int(pick)].id)

    if drop_ids:
        retained = []
        for client in pop.clients:
            if client.id in drop_ids:
                if client.assigned_guard is not None:
                    pop.assignment_counts[client.assigned_guard] -= 1
                    if pop.assignment_counts[client.assigned_guard] <= 0:
                        del pop.assignment_counts[client.assigned_guard]
            else:
                retained.append(client)
        pop.clients = retained

    new_clients: list[Client] = []
    for category in CATEGORY_ORDER:
        for _ in range(max(delta.changes[category], 0)):
            client = Client(pop.new_id(), "zz", category)
            new_clients.append(client)
            pop.clients.append(client)

    return pop, new_clients
