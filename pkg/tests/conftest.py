import io

import numpy as np
import pytest

from rpkiguard.consensus import Relay
from rpkiguard.matching import Category
from rpkiguard.netprefix import parse_prefix
from rpkiguard.rpki import (
    NOT_FOUND,
    RoaRecord,
    RoaStore,
    RovRegistry,
    ValidationResult,
    ValidationStatus,
)


def make_relay(
    identity,
    bandwidth,
    category=Category.NEITHER,
    guard=True,
    running=True,
    ipv4="192.0.2.1",
    ipv6=None,
    exact=False,
):
    """Relay in a consistent resolved state for the given category."""
    roa_valid = category in (Category.ROA, Category.BOTH)
    rov = category in (Category.ROV, Category.BOTH)
    if roa_valid:
        result = ValidationResult(ValidationStatus.VALID, exact_match=exact)
    else:
        result = NOT_FOUND
    flags = set()
    if guard:
        flags.add("Guard")
    if running:
        flags.add("Running")
    return Relay(
        identity=identity,
        nickname=identity[:8].lower(),
        ipv4=ipv4,
        ipv6=ipv6,
        flags=frozenset(flags),
        bandwidth_weight=bandwidth,
        roa_v4=result,
        rov_enforcing=rov,
        category=category,
    )


def roa_store(*rows):
    """RoaStore from (asn, prefix text, max_length) tuples."""
    store = RoaStore()
    for asn, prefix, max_length in rows:
        store.add(RoaRecord(asn, parse_prefix(prefix), max_length))
    return store


def rov_registry(*asns, threshold=0.5, score=1.0, source="custom"):
    registry = RovRegistry(threshold)
    for asn in asns:
        registry.add(asn, score, source)
    return registry


@pytest.fixture
def two_relay_guards():
    """The worked optimization fixture: equal-bandwidth Both/Neither pair."""
    return [
        make_relay("A" * 40, 500, Category.BOTH),
        make_relay("B" * 40, 500, Category.NEITHER),
    ]


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


CONSENSUS_TEXT = """\
network-status-version 3
valid-after 2024-05-01 00:00:00
fresh-until 2024-05-01 01:00:00
r alpha AAAAAAAAAAAAAAAAAAAAAAAAAAA dig 2024-04-30 23:02:00 203.0.113.5 9001 0
a [2001:db8::5]:9001
s Fast Guard Running Stable
w Bandwidth=5000
r bravo BBBBBBBBBBBBBBBBBBBBBBBBBBB dig 2024-04-30 23:05:00 198.51.100.7 9001 9030
s Fast Running
w Bandwidth=3000
r charlie CCCCCCCCCCCCCCCCCCCCCCCCC dig 2024-04-30 23:07:00 192.0.2.9 443 0
s Exit Fast Guard Running
w Bandwidth=2000 Unmeasured=1
directory-footer
"""


@pytest.fixture
def consensus_stream():
    return io.StringIO(CONSENSUS_TEXT)
