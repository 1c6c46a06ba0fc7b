"""RPKI-aware Tor guard relay selection toolkit.

Measures ROA/ROV coverage of relays from consensus, ROA, ROV, and route
dumps, and implements two guard selection schemes on top of that data: a
discount scheme that downweights relays without valid route origins, and
a matching scheme that jointly optimizes per-category selection weights
with a linear program. A Monte-Carlo harness simulates client selection
with load balancing and daily client churn.
"""

from rpkiguard.netprefix import IpPrefix, PrefixTable, contains, parse_prefix
from rpkiguard.rpki import (
    RoaRecord,
    RoaStore,
    RovRegistry,
    ValidationResult,
    ValidationStatus,
    load_roas,
    load_rov,
)
from rpkiguard.consensus import (
    ConsensusSnapshot,
    Relay,
    guard_set,
    load_routes,
    parse_consensus,
    resolve_rpki,
)
from rpkiguard.matching import (
    Category,
    LpConfig,
    RewardParams,
    WeightMatrix,
    category_of,
    expected_matched_rate,
    is_matched,
    optimize_weights,
    pair_reward,
    unit_reward,
)
from rpkiguard.discount import (
    DiscountParams,
    SelectionState,
    client_roa_rate,
    discounted_weights,
    expected_utilization,
    optimal_discount,
    select_guard,
)
from rpkiguard.clients import (
    Client,
    ClientPopulation,
    CountryCensus,
    apply_churn,
    build_census,
    sample_clients,
)
from rpkiguard.sim import RunMetrics, SimConfig, run_churn_timeline, run_many, run_once

__version__ = "0.1.0"

__all__ = [
    "IpPrefix",
    "PrefixTable",
    "contains",
    "parse_prefix",
    "RoaRecord",
    "RoaStore",
    "RovRegistry",
    "ValidationResult",
    "ValidationStatus",
    "load_roas",
    "load_rov",
    "ConsensusSnapshot",
    "Relay",
    "guard_set",
    "load_routes",
    "parse_consensus",
    "resolve_rpki",
    "Category",
    "LpConfig",
    "RewardParams",
    "WeightMatrix",
    "category_of",
    "expected_matched_rate",
    "is_matched",
    "optimize_weights",
    "pair_reward",
    "unit_reward",
    "DiscountParams",
    "SelectionState",
    "client_roa_rate",
    "discounted_weights",
    "expected_utilization",
    "optimal_discount",
    "select_guard",
    "Client",
    "ClientPopulation",
    "CountryCensus",
    "apply_churn",
    "build_census",
    "sample_clients",
    "RunMetrics",
    "SimConfig",
    "run_churn_timeline",
    "run_many",
    "run_once",
]
