import numpy as np
import pytest

from rpkiguard.clients import population_from_fractions
from rpkiguard.consensus import ConsensusSnapshot
from rpkiguard.discount import DiscountParams
from rpkiguard.matching import (
    CATEGORY_ORDER,
    Category,
    LpConfig,
    expected_matched_rate,
    optimize_weights,
)
from rpkiguard.sim import (
    DayInput,
    SimConfig,
    rng_for,
    run_churn_timeline,
    run_many,
    run_once,
)

from conftest import make_relay


def _snapshot(relays):
    return ConsensusSnapshot("2024-05-01 00:00:00", relays)


def _uniform():
    return {c: 0.25 for c in CATEGORY_ORDER}


def test_run_once_vanilla_single_relay():
    for category, expected in ((Category.BOTH, 1.0), (Category.NEITHER, 0.0)):
        snapshot = _snapshot([make_relay("A" * 40, 10, category)])
        cfg = SimConfig("vanilla", clients=100, runs=1, seed=1)
        population = population_from_fractions(_uniform(), 100)
        metrics = run_once(cfg, snapshot, population, rng_for(1, 0, 1))
        assert metrics.client_roa_rate == expected
        assert int(metrics.assigned_counts.sum()) == 100


def test_run_once_matching_two_relay_rate(two_relay_guards):
    snapshot = _snapshot(two_relay_guards)
    lp = LpConfig(load_factor=0.8, theta=5.0, client_distribution={Category.ROA: 1.0})
    cfg = SimConfig("matching", clients=100_000, runs=1, seed=3, lp=lp)
    population = population_from_fractions({Category.ROA: 1.0}, cfg.clients)
    weights = optimize_weights(two_relay_guards, lp)
    metrics = run_once(cfg, snapshot, population, rng_for(3, 0, 1), weights)
    assert metrics.matched_rate == pytest.approx(0.625, abs=0.01)
    assert metrics.matched_rate == pytest.approx(
        expected_matched_rate(weights, lp.client_distribution), abs=0.01
    )


def test_discount_one_equals_vanilla_under_same_seed(two_relay_guards):
    snapshot = _snapshot(two_relay_guards)
    population = population_from_fractions(_uniform(), 5000)
    vanilla_cfg = SimConfig(
        "vanilla", clients=5000, runs=1, seed=7, discount=DiscountParams(1.0, 0.8)
    )
    discount_cfg = SimConfig(
        "discount", clients=5000, runs=1, seed=7, discount=DiscountParams(1.0, 0.8)
    )
    one = run_once(vanilla_cfg, snapshot, population, rng_for(7, 0, 1))
    two = run_once(discount_cfg, snapshot, population, rng_for(7, 0, 1))
    assert one.client_roa_rate == two.client_roa_rate
    assert np.array_equal(one.assigned_counts, two.assigned_counts)


def test_run_once_rejects_unresolved():
    relay = make_relay("A" * 40, 10, Category.BOTH)
    relay.category = None
    cfg = SimConfig("vanilla", clients=10, runs=1, seed=1)
    with pytest.raises(ValueError, match="resolve"):
        run_once(cfg, _snapshot([relay]), population_from_fractions(_uniform(), 10), rng_for(1, 0, 1))


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig("bogus", clients=1, runs=1, seed=0)
    with pytest.raises(ValueError):
        SimConfig("vanilla", clients=0, runs=1, seed=0)
    with pytest.raises(ValueError):
        SimConfig("matching", clients=1, runs=1, seed=0)  # needs LpConfig
    with pytest.raises(ValueError):
        SimConfig("discount", clients=1, runs=1, seed=0)  # needs DiscountParams


def test_run_many_single_run_equals_run_once(two_relay_guards):
    snapshot = _snapshot(two_relay_guards)
    cfg = SimConfig("vanilla", clients=2000, runs=1, seed=11, discount=DiscountParams(1.0, 0.8))
    population = population_from_fractions(_uniform(), 2000)
    results, aggregate = run_many(cfg, snapshot, population)
    single = run_once(cfg, snapshot, population, rng_for(11, 0, 1))
    assert results[0].client_roa_rate == single.client_roa_rate
    assert aggregate.mean_client_roa_rate == single.client_roa_rate
    assert aggregate.std_client_roa_rate == 0.0


def test_run_many_deterministic_fixture_zero_variance():
    snapshot = _snapshot([make_relay("A" * 40, 10, Category.BOTH)])
    cfg = SimConfig("vanilla", clients=50, runs=10, seed=2)
    population = population_from_fractions(_uniform(), 50)
    _, aggregate = run_many(cfg, snapshot, population)
    assert aggregate.mean_client_roa_rate == 1.0
    assert aggregate.std_client_roa_rate == 0.0
    assert aggregate.std_matched_rate == 0.0


def test_run_many_same_master_seed_identical(two_relay_guards):
    snapshot = _snapshot(two_relay_guards)
    cfg = SimConfig("discount", clients=3000, runs=3, seed=21, discount=DiscountParams(0.5, 0.8))
    population = population_from_fractions(_uniform(), 3000)
    results_a, agg_a = run_many(cfg, snapshot, population)
    results_b, agg_b = run_many(cfg, snapshot, population)
    assert [m.client_roa_rate for m in results_a] == [m.client_roa_rate for m in results_b]
    assert agg_a.mean_client_roa_rate == agg_b.mean_client_roa_rate
    assert agg_a.mean_matched_rate == agg_b.mean_matched_rate


def test_run_many_parallel_matches_serial(two_relay_guards):
    snapshot = _snapshot(two_relay_guards)
    cfg = SimConfig("discount", clients=1000, runs=4, seed=5, discount=DiscountParams(0.5, 0.8))
    population = population_from_fractions(_uniform(), 1000)
    serial, agg_serial = run_many(cfg, snapshot, population, jobs=1)
    parallel, agg_parallel = run_many(cfg, snapshot, population, jobs=2)
    assert [m.client_roa_rate for m in serial] == [m.client_roa_rate for m in parallel]
    assert agg_serial.mean_overload_count == agg_parallel.mean_overload_count


def _timeline_guards():
    return [
        make_relay("A" * 40, 400, Category.BOTH),
        make_relay("B" * 40, 300, Category.ROV),
        make_relay("C" * 40, 300, Category.NEITHER),
    ]


def _timeline_cfg(clients=2000, seed=17):
    lp = LpConfig(load_factor=0.8, theta=5.0)
    return SimConfig("matching", clients=clients, runs=1, seed=seed, lp=lp)


def test_churn_constant_census_matches_comparator():
    snapshot = _snapshot(_timeline_guards())
    fractions = {Category.BOTH: 0.4, Category.ROA: 0.3, Category.ROV: 0.2, Category.NEITHER: 0.1}
    days = [DayInput(f"day{i}", fractions, snapshot if i == 0 else None) for i in range(4)]
    results = run_churn_timeline(days, _timeline_cfg())
    for day in results:
        assert day.matched_with_churn == day.matched_without_churn
        assert day.roa_with_churn == day.roa_without_churn
        assert day.new_clients == 0
        assert day.removed_clients == 0
        assert day.population == 2000
        assert day.retained_changed == 0


def test_churn_sharp_drop_lowers_matched_rate():
    snapshot = _snapshot(_timeline_guards())
    rich = {Category.BOTH: 0.8, Category.ROA: 0.1, Category.ROV: 0.05, Category.NEITHER: 0.05}
    poor = {Category.BOTH: 0.05, Category.ROA: 0.1, Category.ROV: 0.05, Category.NEITHER: 0.8}
    days = [DayInput("day0", rich, snapshot), DayInput("day1", poor)]
    results = run_churn_timeline(days, _timeline_cfg(clients=5000))
    assert results[1].matched_with_churn <= results[1].matched_without_churn
    assert results[1].removed_clients > 0


def test_churn_conserves_population_and_guards():
    snapshot = _snapshot(_timeline_guards())
    rng = np.random.default_rng(4)
    days = [
        DayInput(
            f"day{i}",
            dict(zip(CATEGORY_ORDER, rng.dirichlet(np.ones(4)))),
            snapshot if i == 0 else None,
        )
        for i in range(3)
    ]
    results = run_churn_timeline(days, _timeline_cfg(clients=1500))
    for day in results:
        assert day.population == 1500
        assert day.retained_changed == 0


def test_churn_age_out_reselects():
    snapshot = _snapshot(_timeline_guards())
    fractions = {Category.BOTH: 0.5, Category.ROA: 0.5}
    full = {Category.BOTH: 0.5, Category.ROA: 0.5, Category.ROV: 0.0, Category.NEITHER: 0.0}
    days = [DayInput(f"day{i}", full, snapshot if i == 0 else None) for i in range(3)]
    results = run_churn_timeline(days, _timeline_cfg(clients=400), age_out_days=2)
    assert results[1].reselected == 0
    assert results[2].reselected == 400  # all day-0 selections hit the age limit


def test_churn_requires_matching_config():
    snapshot = _snapshot(_timeline_guards())
    cfg = SimConfig("vanilla", clients=10, runs=1, seed=1)
    with pytest.raises(ValueError):
        run_churn_timeline([DayInput("d", _uniform(), snapshot)], cfg)
