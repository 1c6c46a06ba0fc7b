"""IP prefix values and longest-prefix-match tables.

Prefixes are canonical (version, value, length) triples with all host
bits zeroed, so equality, hashing, and ordering work without touching
the textual form. ``PrefixTable`` buckets entries by prefix length; a
longest-match lookup probes one bucket per length present in the table,
most specific first. Duplicate prefixes accumulate their values into a
list and every inserted value stays retrievable (real ROA and route
dumps carry several records for the same prefix).

Tables are mutable while being built and treated as immutable after
that; share them freely across threads or worker processes once loaded.
"""

from __future__ import annotations

import bisect
import ipaddress
from dataclasses import dataclass
from typing import Generic, Iterator, TypeVar, Union

V = TypeVar("V")

MAX_LENGTH = {4: 32, 6: 128}

Address = Union[str, tuple[int, int]]


@dataclass(frozen=True, order=True)
class IpPrefix:
    """A canonical IP prefix; all bits beyond ``length`` are zero."""

    version: int  # 4 or 6
    value: int  # network address as an integer
    length: int

    @property
    def family(self) -> str:
        return "v4" if self.version == 4 else "v6"

    def __str__(self) -> str:
        if self.version == 4:
            return f"{ipaddress.IPv4Address(self.value)}/{self.length}"
        return f"{ipaddress.IPv6Address(self.value)}/{self.length}"


def parse_prefix(text: str) -> IpPrefix:
    """Parse ``addr/len`` into a canonical prefix, masking host bits.

    Raises ValueError for a malformed address or a length out of range
    for the address family. Host bits in the input are silently cleared
    because real dumps contain non-canonical entries.
    """
    text = text.strip()
    if "/" not in text:
        raise ValueError(f"prefix must be in addr/len form: {text!r}")
    net = ipaddress.ip_network(text, strict=False)
    return IpPrefix(net.version, int(net.network_address), net.prefixlen)


def parse_address(text: str) -> tuple[int, int]:
    """Parse an IP address into a (version, integer value) pair."""
    addr = ipaddress.ip_address(text.strip())
    return addr.version, int(addr)


def contains(outer: IpPrefix, inner: IpPrefix) -> bool:
    """True iff ``inner`` lies within ``outer`` (same family, covered bits)."""
    if outer.version != inner.version or outer.length > inner.length:
        return False
    shift = MAX_LENGTH[outer.version] - outer.length
    return (outer.value >> shift) == (inner.value >> shift)


class PrefixTable(Generic[V]):
    """Length-bucketed prefix map with exact, covering, and longest-prefix lookup."""

    def __init__(self) -> None:
        # (version, length) -> {top `length` bits: [values]}
        self._buckets: dict[tuple[int, int], dict[int, list[V]]] = {}
        self._lengths: dict[int, list[int]] = {4: [], 6: []}  # ascending
        self._prefixes = 0
        self._values = 0

    def __len__(self) -> int:
        """Number of distinct prefixes stored."""
        return self._prefixes

    @property
    def value_count(self) -> int:
        return self._values

    def insert(self, prefix: IpPrefix, value: V) -> None:
        bucket = self._buckets.get((prefix.version, prefix.length))
        if bucket is None:
            bucket = self._buckets[(prefix.version, prefix.length)] = {}
            bisect.insort(self._lengths[prefix.version], prefix.length)
        key = prefix.value >> (MAX_LENGTH[prefix.version] - prefix.length)
        values = bucket.get(key)
        if values is None:
            bucket[key] = [value]
            self._prefixes += 1
        else:
            values.append(value)
        self._values += 1

    def exact(self, prefix: IpPrefix) -> list[V]:
        """All values stored at exactly this prefix ([] if absent)."""
        bucket = self._buckets.get((prefix.version, prefix.length))
        if not bucket:
            return []
        key = prefix.value >> (MAX_LENGTH[prefix.version] - prefix.length)
        return bucket.get(key, [])

    def covering(self, prefix: IpPrefix) -> list[tuple[IpPrefix, list[V]]]:
        """Entries whose prefix contains ``prefix``, least specific first."""
        out: list[tuple[IpPrefix, list[V]]] = []
        maxlen = MAX_LENGTH[prefix.version]
        for length in self._lengths[prefix.version]:
            if length > prefix.length:
                break
            key = prefix.value >> (maxlen - length)
            values = self._buckets[(prefix.version, length)].get(key)
            if values is not None:
                out.append((IpPrefix(prefix.version, key << (maxlen - length), length), values))
        return out

    def longest_match(self, address: Address) -> tuple[IpPrefix, list[V]] | None:
        """Most specific entry containing ``address``, or None."""
        if isinstance(address, str):
            version, value = parse_address(address)
        else:
            version, value = address
        maxlen = MAX_LENGTH[version]
        for length in reversed(self._lengths[version]):
            key = value >> (maxlen - length)
            values = self._buckets[(version, length)].get(key)
            if values is not None:
                return IpPrefix(version, key << (maxlen - length), length), values
        return None

    def __iter__(self) -> Iterator[tuple[IpPrefix, list[V]]]:
        for (version, length), bucket in self._buckets.items():
            shift = MAX_LENGTH[version] - length
            for key, values in bucket.items():
                yield IpPrefix(version, key << shift, length), values


def longest_match(table: PrefixTable[V], address: Address) -> tuple[IpPrefix, list[V]] | None:
    return table.longest_match(address)
