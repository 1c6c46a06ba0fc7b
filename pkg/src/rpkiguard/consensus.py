"""Network-status consensus parsing and per-relay RPKI resolution.

The parser understands the subset of the v3 network-status line grammar
this toolkit needs: ``valid-after``, ``r`` (one per relay), ``a``
(additional IPv6 address), ``s`` (flags), and ``w Bandwidth=N``. Unknown
line kinds are ignored, so full consensus documents parse fine. A relay
block missing its ``w`` line gets bandwidth 0; a malformed ``r`` line
drops that block only and bumps the snapshot's warning counter.

``resolve_rpki`` attaches each relay's origin AS (longest-prefix match
of its IPv4 address in the route table), the origin-validation outcome
for the covering announcement, the ROV enforcement bit of the origin AS,
and the resulting category. IPv6 addresses get their own validation
result for coverage reporting, but selection keys off IPv4 status.
An announcement counts as ROA-covered for selection only when its
origin validates (NotFound and Invalid both select as uncovered).
"""

from __future__ import annotations

import csv
import dataclasses
import ipaddress
import logging
from dataclasses import dataclass, field
from typing import Iterable

from rpkiguard.matching import Category, category_of
from rpkiguard.netprefix import IpPrefix, PrefixTable, parse_prefix
from rpkiguard.rpki import NOT_FOUND, RoaStore, RovRegistry, ValidationResult, ValidationStatus

log = logging.getLogger(__name__)


@dataclass
class Relay:
    """One consensus row plus its resolved RPKI status."""

    identity: str
    nickname: str
    ipv4: str
    ipv6: str | None = None
    flags: frozenset[str] = field(default_factory=frozenset)
    bandwidth_weight: int = 0
    origin_asn: int | None = None
    covering_prefix: IpPrefix | None = None
    roa_v4: ValidationResult | None = None
    origin_asn_v6: int | None = None
    roa_v6: ValidationResult | None = None
    rov_enforcing: bool = False
    category: Category | None = None

    @property
    def is_guard(self) -> bool:
        return "Guard" in self.flags and "Running" in self.flags

    @property
    def roa_valid(self) -> bool:
        return self.roa_v4 is not None and self.roa_v4.status is ValidationStatus.VALID


@dataclass
class ConsensusSnapshot:
    valid_after: str
    relays: list[Relay]
    warnings: int = 0

    @property
    def total_guard_weight(self) -> int:
        return sum(r.bandwidth_weight for r in self.relays if r.is_guard)


def _parse_a_line(token: str) -> str | None:
    # "a [2001:db8::1]:9001"
    if token.startswith("[") and "]" in token:
        addr = token[1 : token.index("]")]
    else:
        addr = token
    try:
        parsed = ipaddress.ip_address(addr)
    except ValueError:
        return None
    return str(parsed) if parsed.version == 6 else None


def parse_consensus(reader: Iterable[str]) -> ConsensusSnapshot:
    """Parse v3 network-status lines into a snapshot (see module notes)."""
    valid_after = ""
    relays: list[Relay] = []
    warnings = 0
    current: Relay | None = None

    for raw in reader:
        line = raw.rstrip("\r\n")
        if line.startswith("valid-after "):
            valid_after = line[len("valid-after ") :].strip()
        elif line.startswith("r "):
            if current is not None:
                relays.append(current)
            current = None
            parts = line.split()
            # r nickname identity digest date time address orport dirport
            if len(parts) < 8:
                warnings += 1
                continue
            try:
                address = ipaddress.IPv4Address(parts[6])
            except ValueError:
                warnings += 1
                continue
            current = Relay(identity=parts[2], nickname=parts[1], ipv4=str(address))
        elif line.startswith("a ") and current is not None:
            parts = line.split()
            if len(parts) >= 2 and current.ipv6 is None:
                current.ipv6 = _parse_a_line(parts[1])
        elif line.startswith("s ") and current is not None:
            current.flags = frozenset(line.split()[1:])
        elif line.startswith("w ") and current is not None:
            for token in line.split()[1:]:
                if token.startswith("Bandwidth="):
                    try:
                        weight = int(token[len("Bandwidth=") :])
                    except ValueError:
                        warnings += 1
                        weight = 0
                    current.bandwidth_weight = max(weight, 0)
                    break
        # anything else: ignored

    if current is not None:
        relays.append(current)
    return ConsensusSnapshot(valid_after, relays, warnings)


def load_routes(reader: Iterable[str]) -> "RouteData":
    """Load a ``prefix,origin_asn`` route CSV into lookup structures.

    Duplicate prefixes accumulate; origin resolution takes the first
    origin recorded at the winning prefix. Bad rows land in ``issues``.
    """
    from rpkiguard.rpki import _parse_asn  # shared "AS123"/"123" handling

    table: PrefixTable[int] = PrefixTable()
    by_asn: dict[int, list[IpPrefix]] = {}
    seen: set[tuple[int, IpPrefix]] = set()
    issues: list[tuple[int, str]] = []
    for lineno, row in enumerate(csv.reader(reader), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if row[0].lstrip().startswith("#"):
            continue
        try:
            if len(row) < 2:
                raise ValueError(f"expected prefix,origin_asn, got {len(row)} columns")
            prefix = parse_prefix(row[0])
            asn = _parse_asn(row[1])
        except ValueError as exc:
            if lineno == 1:
                continue  # optional header
            issues.append((lineno, str(exc)))
            continue
        table.insert(prefix, asn)
        if (asn, prefix) not in seen:
            seen.add((asn, prefix))
            by_asn.setdefault(asn, []).append(prefix)
    if issues:
        log.warning("skipped %d malformed route rows", len(issues))
    return RouteData(table, by_asn, issues)


@dataclass
class RouteData:
    """Both views of a route dump: prefix table and per-AS prefix lists."""

    table: PrefixTable[int]
    by_asn: dict[int, list[IpPrefix]]
    issues: list[tuple[int, str]]


def resolve_rpki(
    snapshot: ConsensusSnapshot,
    routes: PrefixTable[int],
    roas: RoaStore,
    rov: RovRegistry,
) -> ConsensusSnapshot:
    """Return a snapshot whose relays carry origin, validation, and category.

    Relays with no covering route get NotFound validation, no origin,
    and category Neither. Idempotent: resolution depends only on relay
    addresses.
    """
    resolved = []
    for relay in snapshot.relays:
        hit = routes.longest_match(relay.ipv4)
        if hit is not None:
            prefix, origins = hit
            origin: int | None = origins[0]
            result = roas.validate(prefix, origin)
        else:
            prefix, origin, result = None, None, NOT_FOUND
        enforcing = rov.is_enforcing(origin)

        origin6: int | None = None
        result6: ValidationResult | None = None
        if relay.ipv6 is not None:
            hit6 = routes.longest_match(relay.ipv6)
            if hit6 is not None:
                prefix6, origins6 = hit6
                origin6 = origins6[0]
                result6 = roas.validate(prefix6, origin6)
            else:
                result6 = NOT_FOUND

        resolved.append(
            dataclasses.replace(
                relay,
                origin_asn=origin,
                covering_prefix=prefix,
                roa_v4=result,
                origin_asn_v6=origin6,
                roa_v6=result6,
                rov_enforcing=enforcing,
                category=category_of(result.status is ValidationStatus.VALID, enforcing),
            )
        )
    return dataclasses.replace(snapshot, relays=resolved)


def guard_set(snapshot: ConsensusSnapshot) -> list[Relay]:
    """Guard-eligible relays (Guard and Running flags), sorted by identity."""
    return sorted((r for r in snapshot.relays if r.is_guard), key=lambda r: r.identity)
