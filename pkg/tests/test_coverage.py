import copy
import io

import pytest

from rpkiguard.coverage import (
    CSV_COLUMNS,
    coverage_report,
    coverage_timeseries,
    write_coverage_csv,
)
from rpkiguard.consensus import ConsensusSnapshot, load_routes, parse_consensus
from rpkiguard.matching import Category
from rpkiguard.rpki import ValidationResult, ValidationStatus

from conftest import make_relay, roa_store, rov_registry


def _snapshot(relays):
    return ConsensusSnapshot("2024-05-01 00:00:00", relays)


def test_relay_and_bandwidth_percentages():
    relays = [
        make_relay("A" * 40, 10, Category.BOTH),
        make_relay("B" * 40, 10, Category.ROA),
        make_relay("C" * 40, 10, Category.BOTH),
        make_relay("D" * 40, 70, Category.NEITHER),
    ]
    stats = coverage_report(_snapshot(relays)).get("guards", "v4")
    assert stats.pct_relays_with_valid_roa == pytest.approx(75.0)
    assert stats.pct_bandwidth_with_valid_roa == pytest.approx(30.0)
    assert stats.pct_relays_rov == pytest.approx(50.0)


def test_all_notfound_yields_zero():
    relays = [make_relay(c * 40, 10, Category.NEITHER) for c in "ABC"]
    stats = coverage_report(_snapshot(relays)).get("all", "v4")
    assert stats.pct_relays_with_valid_roa == 0.0
    assert stats.pct_bandwidth_with_valid_roa == 0.0
    assert stats.pct_announcements_valid == 0.0
    assert not stats.empty


def test_single_exact_relay_full_exact_coverage():
    relays = [make_relay("A" * 40, 10, Category.ROA, exact=True)]
    stats = coverage_report(_snapshot(relays)).get("all", "v4")
    assert stats.pct_relays_exact_maxlen == 100.0
    assert stats.pct_relays_with_valid_roa == 100.0


def test_invalid_breakdown_sums_to_complement():
    relays = [
        make_relay("A" * 40, 10, Category.ROA),
        make_relay("B" * 40, 10, Category.ROA),
        make_relay("C" * 40, 10, Category.NEITHER),
        make_relay("D" * 40, 10, Category.NEITHER),
        make_relay("E" * 40, 10, Category.NEITHER),
    ]
    relays[2].roa_v4 = ValidationResult(ValidationStatus.INVALID, asn_mismatch=True)
    relays[3].roa_v4 = ValidationResult(ValidationStatus.INVALID, length_mismatch=True)
    relays[4].roa_v4 = ValidationResult(
        ValidationStatus.INVALID, asn_mismatch=True, length_mismatch=True
    )
    stats = coverage_report(_snapshot(relays)).get("all", "v4")
    total = (
        stats.pct_invalid_asn_only + stats.pct_invalid_length_only + stats.pct_invalid_both
    )
    assert total == pytest.approx(100.0 - stats.pct_announcements_valid, abs=1e-9)
    assert stats.pct_invalid_asn_only == pytest.approx(20.0)
    assert stats.pct_announcements_valid == pytest.approx(40.0)


def test_empty_marker_for_missing_family():
    relays = [make_relay("A" * 40, 10, Category.BOTH)]
    stats = coverage_report(_snapshot(relays)).get("all", "v6")
    assert stats.empty
    assert stats.pct_relays_with_valid_roa == 0.0


def test_exact_never_exceeds_valid():
    relays = [
        make_relay("A" * 40, 5, Category.BOTH, exact=True),
        make_relay("B" * 40, 5, Category.ROA),
        make_relay("C" * 40, 5, Category.NEITHER),
    ]
    stats = coverage_report(_snapshot(relays)).get("all", "v4")
    assert stats.pct_relays_exact_maxlen <= stats.pct_relays_with_valid_roa


def test_non_guard_relays_do_not_affect_guard_scope():
    relays = [
        make_relay("A" * 40, 10, Category.BOTH),
        make_relay("B" * 40, 99, Category.NEITHER, guard=False),
    ]
    with_extra = coverage_report(_snapshot(relays)).get("guards", "v4")
    without = coverage_report(_snapshot(relays[:1])).get("guards", "v4")
    assert with_extra == without


def test_bandwidth_percentages_scale_invariant():
    relays = [
        make_relay("A" * 40, 10, Category.BOTH),
        make_relay("B" * 40, 30, Category.NEITHER),
    ]
    scaled = [copy.deepcopy(r) for r in relays]
    for relay in scaled:
        relay.bandwidth_weight *= 7
    one = coverage_report(_snapshot(relays)).get("all", "v4")
    other = coverage_report(_snapshot(scaled)).get("all", "v4")
    assert one.pct_bandwidth_with_valid_roa == pytest.approx(other.pct_bandwidth_with_valid_roa)
    assert one.pct_bandwidth_rov == pytest.approx(other.pct_bandwidth_rov)


def test_report_requires_resolved_snapshot():
    snapshot = ConsensusSnapshot("x", [make_relay("A" * 40, 1)])
    snapshot.relays[0].category = None
    with pytest.raises(ValueError):
        coverage_report(snapshot)


def test_report_deterministic():
    relays = [make_relay("A" * 40, 10, Category.BOTH), make_relay("B" * 40, 3, Category.ROV)]
    assert coverage_report(_snapshot(relays)) == coverage_report(_snapshot(relays))


CONSENSUS = (
    "r solo IDENT dig 2024-01-01 00:00:00 203.0.113.9 9001 0\ns Guard Running\nw Bandwidth=10\n"
)


def _dated_inputs(dates):
    snapshots = [(d, parse_consensus(io.StringIO(CONSENSUS))) for d in dates]
    roas = {d: roa_store((65001, "203.0.113.0/24", 24)) for d in dates}
    routes = {d: load_routes(io.StringIO("203.0.113.0/24,65001\n")).table for d in dates}
    return snapshots, roas, routes


def test_timeseries_two_dates():
    snapshots, roas, routes = _dated_inputs(["2024-01", "2024-02"])
    rows = coverage_timeseries(snapshots, roas, routes, rov_registry())
    assert [date for date, _ in rows] == ["2024-01", "2024-02"]


def test_timeseries_skips_missing_date(caplog):
    snapshots, roas, routes = _dated_inputs(["2024-01", "2024-02"])
    del roas["2024-02"]
    with caplog.at_level("WARNING"):
        rows = coverage_timeseries(snapshots, roas, routes, rov_registry())
    assert [date for date, _ in rows] == ["2024-01"]
    assert any("2024-02" in record.message for record in caplog.records)


def test_timeseries_monotone_fixture():
    # Coverage rises as ROAs appear for more of the address space.
    text = (
        "r a IDENTA dig 2024-01-01 00:00:00 203.0.113.9 9001 0\ns Guard Running\nw Bandwidth=10\n"
        "r b IDENTB dig 2024-01-01 00:00:00 198.51.100.9 9001 0\ns Guard Running\nw Bandwidth=10\n"
    )
    dates = ["d1", "d2", "d3"]
    snapshots = [(d, parse_consensus(io.StringIO(text))) for d in dates]
    routes = {
        d: load_routes(io.StringIO("203.0.113.0/24,65001\n198.51.100.0/24,65002\n")).table
        for d in dates
    }
    roas = {
        "d1": roa_store(),
        "d2": roa_store((65001, "203.0.113.0/24", 24)),
        "d3": roa_store((65001, "203.0.113.0/24", 24), (65002, "198.51.100.0/24", 24)),
    }
    rows = coverage_timeseries(snapshots, roas, routes, rov_registry())
    series = [stats.get("guards", "v4").pct_relays_with_valid_roa for _, stats in rows]
    assert series == sorted(series)
    assert series == [0.0, 50.0, 100.0]


def test_csv_export_columns_and_determinism():
    relays = [make_relay("A" * 40, 10, Category.BOTH)]
    rows = [("2024-05-01", coverage_report(_snapshot(relays)))]
    out1, out2 = io.StringIO(), io.StringIO()
    write_coverage_csv(rows, out1)
    write_coverage_csv(rows, out2)
    assert out1.getvalue() == out2.getvalue()
    header = out1.getvalue().splitlines()[0]
    assert header == ",".join(CSV_COLUMNS)
    assert len(out1.getvalue().splitlines()) == 1 + 4  # 2 scopes x 2 families
