"""ROA storage with origin validation, and the ROV enforcement registry.

Origin validation follows the usual covering-ROA rules: an announcement
is Valid when some covering ROA authorizes the origin AS and admits the
announced length, NotFound when no ROA covers the announced prefix, and
Invalid otherwise. Invalid results carry mismatch flags chosen so that
exactly one of the three invalid classes applies:

* ASN mismatch only: no covering ROA names the origin, but some covering
  ROA would have admitted the announced length.
* Length mismatch only: covering ROAs name the origin, all reject the
  announced length.
* Both: no covering ROA names the origin and none admits the length.

ROV measurement sources disagree wildly, so enforcement is stored as a
score per AS (binary member lists load as score 1.0, fractional scores
pass through) with a configurable decision threshold; an AS is treated
as enforcing when its score reaches the threshold.
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass
from typing import Iterable

from rpkiguard.netprefix import MAX_LENGTH, IpPrefix, PrefixTable, parse_prefix

log = logging.getLogger(__name__)

ROV_SOURCES = ("rov-monitor", "manrs-case1", "rovista", "hlavacek", "manrs-case2", "custom")


class ValidationStatus(enum.Enum):
    VALID = "valid"
    INVALID = "invalid"
    NOT_FOUND = "notfound"


@dataclass(frozen=True)
class ValidationResult:
    status: ValidationStatus
    asn_mismatch: bool = False
    length_mismatch: bool = False
    exact_match: bool = False  # only meaningful for Valid results

    def __post_init__(self) -> None:
        if self.status is ValidationStatus.INVALID and not (self.asn_mismatch or self.length_mismatch):
            raise ValueError("invalid result must set at least one mismatch flag")


NOT_FOUND = ValidationResult(ValidationStatus.NOT_FOUND)


@dataclass(frozen=True)
class RoaRecord:
    asn: int
    prefix: IpPrefix
    max_length: int

    def __post_init__(self) -> None:
        if self.asn < 0:
            raise ValueError(f"negative AS number: {self.asn}")
        if not self.prefix.length <= self.max_length <= MAX_LENGTH[self.prefix.version]:
            raise ValueError(
                f"max_length {self.max_length} out of range for {self.prefix} "
                f"(must be within [{self.prefix.length}, {MAX_LENGTH[self.prefix.version]}])"
            )


class RoaStore:
    """Prefix-indexed collection of ROA records."""

    def __init__(self) -> None:
        self._table: PrefixTable[RoaRecord] = PrefixTable()
        self.issues: list[tuple[int, str]] = []  # (line number, reason) from loading

    def __len__(self) -> int:
        return self._table.value_count

    def add(self, record: RoaRecord) -> None:
        self._table.insert(record.prefix, record)

    def exact(self, prefix: IpPrefix) -> list[RoaRecord]:
        return self._table.exact(prefix)

    def covering(self, announced: IpPrefix) -> list[RoaRecord]:
        """All records whose prefix contains the announced prefix."""
        out: list[RoaRecord] = []
        for _, records in self._table.covering(announced):
            out.extend(records)
        return out

    def validate(self, announced: IpPrefix, origin: int) -> ValidationResult:
        """Validate an (announced prefix, origin AS) pair against the store.

        Any single authorizing ROA makes the announcement Valid; the
        mismatch flags for Invalid results are set per the module rules.
        """
        covering = self.covering(announced)
        if not covering:
            return NOT_FOUND
        matching = [r for r in covering if r.asn == origin]
        admitted = [r for r in matching if announced.length <= r.max_length]
        if admitted:
            exact = any(r.max_length == announced.length for r in admitted)
            return ValidationResult(ValidationStatus.VALID, exact_match=exact)
        if matching:
            return ValidationResult(ValidationStatus.INVALID, length_mismatch=True)
        length_ok = any(announced.length <= r.max_length for r in covering)
        return ValidationResult(
            ValidationStatus.INVALID, asn_mismatch=True, length_mismatch=not length_ok
        )


def validate_origin(store: RoaStore, announced: IpPrefix, origin: int) -> ValidationResult:
    return store.validate(announced, origin)


def _parse_asn(text: str) -> int:
    text = text.strip()
    if text[:2].upper() == "AS":
        text = text[2:]
    asn = int(text)
    if asn < 0:
        raise ValueError(f"negative AS number: {asn}")
    return asn


def load_roas(reader: Iterable[str]) -> RoaStore:
    """Load ROA records from ``asn,prefix,max_length`` CSV lines.

    The header row is optional and the asn may carry an ``AS`` text
    prefix. An empty max_length defaults to the prefix length (RIPE
    archive convention). Bad rows are skipped and reported in
    ``store.issues`` with their line numbers; extra columns are ignored.
    """
    store = RoaStore()
    for lineno, row in enumerate(csv.reader(reader), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if row[0].lstrip().startswith("#"):
            continue
        try:
            if len(row) < 3:
                raise ValueError(f"expected asn,prefix,max_length, got {len(row)} columns")
            asn = _parse_asn(row[0])
            prefix = parse_prefix(row[1])
            maxlen_text = row[2].strip()
            max_length = prefix.length if not maxlen_text else int(maxlen_text)
            record = RoaRecord(asn, prefix, max_length)
        except (ValueError, IndexError) as exc:
            if lineno == 1:
                continue  # optional header
            store.issues.append((lineno, str(exc)))
            continue
        store.add(record)
    if store.issues:
        log.warning("skipped %d malformed ROA rows (first: line %d: %s)",
                    len(store.issues), store.issues[0][0], store.issues[0][1])
    return store


class RovRegistry:
    """AS-indexed ROV enforcement scores with a decision threshold.

    Merging several sources keeps the highest score per AS, so an AS is
    enforcing iff any loaded source puts it at or above the threshold.
    """

    def __init__(self, threshold: float = 0.5) -> None:
        if not 0.0 <= threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1]: {threshold}")
        self.threshold = threshold
        self._entries: dict[int, tuple[float, str]] = {}
        self.issues: list[tuple[int, str]] = []

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, asn: int) -> bool:
        return asn in self._entries

    def add(self, asn: int, score: float = 1.0, source: str = "custom") -> None:
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score must be in [0, 1]: {score}")
        current = self._entries.get(asn)
        if current is None or score > current[0]:
            self._entries[asn] = (score, source)

    def score(self, asn: int) -> float:
        entry = self._entries.get(asn)
        return entry[0] if entry else 0.0

    def source(self, asn: int) -> str | None:
        entry = self._entries.get(asn)
        return entry[1] if entry else None

    def is_enforcing(self, asn: int | None) -> bool:
        """Threshold rule: score(asn) >= threshold; absent AS -> False."""
        if asn is None:
            return False
        entry = self._entries.get(asn)
        return entry is not None and entry[0] >= self.threshold


def is_enforcing(registry: RovRegistry, asn: int | None) -> bool:
    return registry.is_enforcing(asn)


def load_rov(
    reader: Iterable[str],
    source: str = "custom",
    registry: RovRegistry | None = None,
    threshold: float = 0.5,
) -> RovRegistry:
    """Load an ROV source list: lines ``asn[,score]``, ``#`` comments ignored.

    Lines without a score are binary membership and load as score 1.0.
    Passing an existing registry merges the new source into it (union
    semantics under the shared threshold).
    """
    reg = registry if registry is not None else RovRegistry(threshold)
    for lineno, raw in enumerate(reader, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        try:
            asn = _parse_asn(parts[0])
            score = float(parts[1]) if len(parts) > 1 and parts[1] else 1.0
            reg.add(asn, score, source)
        except ValueError as exc:
            reg.issues.append((lineno, f"{source}: {exc}"))
    if reg.issues:
        log.warning("skipped %d malformed ROV rows", len(reg.issues))
    return reg
