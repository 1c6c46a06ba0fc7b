"""ROA/ROV coverage measurement over resolved consensus snapshots.

Reports are split by scope (all relays vs guard-eligible relays) and
address family. Relay-level percentages divide by the number of relays
in scope that have an address of that family; bandwidth-level
percentages divide by their summed consensus weight. The validity
breakdown is computed over relays whose covering prefix has at least one
ROA (Valid or Invalid), so the valid percentage and the three invalid
classes always total 100 for that population.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

from rpkiguard.consensus import ConsensusSnapshot, Relay, resolve_rpki
from rpkiguard.netprefix import PrefixTable
from rpkiguard.rpki import RoaStore, RovRegistry, ValidationResult, ValidationStatus

log = logging.getLogger(__name__)

SCOPES = ("all", "guards")
FAMILIES = ("v4", "v6")

CSV_COLUMNS = (
    "date",
    "scope",
    "family",
    "relays",
    "bandwidth",
    "pct_relays_with_valid_roa",
    "pct_bandwidth_with_valid_roa",
    "pct_relays_exact_maxlen",
    "pct_announcements_valid",
    "pct_invalid_asn_only",
    "pct_invalid_length_only",
    "pct_invalid_both",
    "pct_relays_rov",
    "pct_bandwidth_rov",
    "empty",
)


@dataclass
class ScopeStats:
    """Coverage percentages for one (scope, family) population."""

    relays: int = 0
    bandwidth: int = 0
    pct_relays_with_valid_roa: float = 0.0
    pct_bandwidth_with_valid_roa: float = 0.0
    pct_relays_exact_maxlen: float = 0.0
    pct_announcements_valid: float = 0.0
    pct_invalid_asn_only: float = 0.0
    pct_invalid_length_only: float = 0.0
    pct_invalid_both: float = 0.0
    pct_relays_rov: float = 0.0
    pct_bandwidth_rov: float = 0.0
    empty: bool = False


@dataclass
class CoverageStats:
    """Per (scope, family) coverage statistics for one snapshot."""

    stats: dict[tuple[str, str], ScopeStats] = field(default_factory=dict)

    def get(self, scope: str, family: str) -> ScopeStats:
        return self.stats[(scope, family)]


def _family_result(relay: Relay, family: str) -> ValidationResult | None:
    return relay.roa_v4 if family == "v4" else relay.roa_v6


def _scope_stats(relays: Sequence[Relay], family: str) -> ScopeStats:
    if family == "v6":
        population = [r for r in relays if r.ipv6 is not None]
    else:
        population = list(relays)
    count = len(population)
    if count == 0:
        return ScopeStats(empty=True)

    bandwidth = sum(r.bandwidth_weight for r in population)
    valid = [r for r in population if _result_is(r, family, ValidationStatus.VALID)]
    covered = [
        r
        for r in population
        if (res := _family_result(r, family)) is not None
        and res.status is not ValidationStatus.NOT_FOUND
    ]
    exact = [r for r in valid if _family_result(r, family).exact_match]
    rov = [r for r in population if r.rov_enforcing]

    def pct(part: int, whole: int) -> float:
        return 100.0 * part / whole if whole else 0.0

    invalid = [r for r in covered if _result_is(r, family, ValidationStatus.INVALID)]
    asn_only = sum(
        1
        for r in invalid
        if _family_result(r, family).asn_mismatch and not _family_result(r, family).length_mismatch
    )
    length_only = sum(
        1
        for r in invalid
        if _family_result(r, family).length_mismatch and not _family_result(r, family).asn_mismatch
    )
    both = sum(
        1
        for r in invalid
        if _family_result(r, family).asn_mismatch and _family_result(r, family).length_mismatch
    )

    return ScopeStats(
        relays=count,
        bandwidth=bandwidth,
        pct_relays_with_valid_roa=pct(len(valid), count),
        pct_bandwidth_with_valid_roa=pct(sum(r.bandwidth_weight for r in valid), bandwidth),
        pct_relays_exact_maxlen=pct(len(exact), count),
        pct_announcements_valid=pct(len(valid), len(covered)),
        pct_invalid_asn_only=pct(asn_only, len(covered)),
        pct_invalid_length_only=pct(length_only, len(covered)),
        pct_invalid_both=pct(both, len(covered)),
        pct_relays_rov=pct(len(rov), count),
        pct_bandwidth_rov=pct(sum(r.bandwidth_weight for r in rov), bandwidth),
    )


def _result_is(relay: Relay, family: str, status: ValidationStatus) -> bool:
    result = _family_result(relay, family)
    return result is not None and result.status is status


def coverage_report(snapshot: ConsensusSnapshot) -> CoverageStats:
    """Compute coverage statistics for a resolved snapshot."""
    for relay in snapshot.relays:
        if relay.category is None:
            raise ValueError("snapshot is not resolved; call resolve_rpki first")
    guards = [r for r in snapshot.relays if r.is_guard]
    stats = CoverageStats()
    for scope, relays in (("all", snapshot.relays), ("guards", guards)):
        for family in FAMILIES:
            stats.stats[(scope, family)] = _scope_stats(relays, family)
    return stats


def coverage_timeseries(
    snapshots: Iterable[tuple[str, ConsensusSnapshot]],
    roas_by_date: Mapping[str, RoaStore],
    routes_by_date: Mapping[str, PrefixTable[int]],
    rov: RovRegistry,
) -> list[tuple[str, CoverageStats]]:
    """One coverage report per dated snapshot; dates missing a dataset are skipped."""
    rows: list[tuple[str, CoverageStats]] = []
    for date, snapshot in snapshots:
        roas = roas_by_date.get(date)
        routes = routes_by_date.get(date)
        if roas is None or routes is None:
            missing = "ROA" if roas is None else "route"
            log.warning("skipping %s: no %s dataset for that date", date, missing)
            continue
        resolved = resolve_rpki(snapshot, routes, roas, rov)
        rows.append((date, coverage_report(resolved)))
    return rows


def write_coverage_csv(rows: Iterable[tuple[str, CoverageStats]], stream: IO[str]) -> None:
    """Write dated coverage reports with a fixed, documented column order."""
    writer = csv.writer(stream)
    writer.writerow(CSV_COLUMNS)
    for date, stats in rows:
        for scope in SCOPES:
            for family in FAMILIES:
                s = stats.get(scope, family)
                writer.writerow(
                    [
                        date,
                        scope,
                        family,
                        s.relays,
                        s.bandwidth,
                        s.pct_relays_with_valid_roa,
                        s.pct_bandwidth_with_valid_roa,
                        s.pct_relays_exact_maxlen,
                        s.pct_announcements_valid,
                        s.pct_invalid_asn_only,
                        s.pct_invalid_length_only,
                        s.pct_invalid_both,
                        s.pct_relays_rov,
                        s.pct_bandwidth_rov,
                        int(s.empty),
                    ]
                )
