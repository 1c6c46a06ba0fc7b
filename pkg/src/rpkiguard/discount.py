"""Discounted guard selection with demand-aware load balancing.

The discount scheme multiplies the consensus weight of every guard whose
origin does not validate by a factor ``d`` in [0, 1]; validated guards
keep their weight. ``d = 1`` reproduces bandwidth-proportional (vanilla)
selection exactly, while ``d = 0`` forces all selection onto validated
guards.

Selection itself samples proportionally to the current effective
weights, then applies a reselection rule so that no relay silently takes
on more clients than its bandwidth supports at the configured network
load: each client represents ``load_factor * total_bandwidth /
expected_clients`` of demand, and a relay whose per-client share
``b_r / (assigned_r + 1)`` would fall below that demand rejects the
client, shrinks its effective weight by the shortfall ratio (compounding
across overload events), and the client redraws. After ``max_retries``
rejections the last candidate is accepted and the selection is flagged
as overloaded.

``expected_utilization`` and ``optimal_discount`` are the closed-form
companions: splitting demand between validated and discounted bandwidth
pools (excess demand within a pool is lost, not redistributed) yields
the utilization surface over (load, discount), whose kink at full
utilization is the smallest usable discount factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from rpkiguard.matching import Category

if TYPE_CHECKING:  # pragma: no cover
    from rpkiguard.consensus import Relay


@dataclass(frozen=True)
class DiscountParams:
    """Discount factor d and network load factor l, both in [0, 1]."""

    discount: float = 1.0
    load_factor: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError(f"discount must be in [0, 1]: {self.discount}")
        if not 0.0 <= self.load_factor <= 1.0:
            raise ValueError(f"load factor must be in [0, 1]: {self.load_factor}")


class WeightedSampler:
    """Proportional sampler over a fixed item order.

    A power-of-two segment tree holds the weights; drawing inverts the
    cumulative sum at ``u * total`` and updating adjusts one leaf, both
    O(log n). Under a fixed seed the draw sequence is fully determined
    by the item order, which is kept stable by callers.
    """

    __slots__ = ("_n", "_size", "_tree")

    def __init__(self, weights: Sequence[float]) -> None:
        ws = [float(w) for w in weights]
        if not ws:
            raise ValueError("sampler needs at least one weight")
        for w in ws:
            if not math.isfinite(w) or w < 0.0:
                raise ValueError(f"weights must be finite and nonnegative: {w}")
        self._n = len(ws)
        size = 1
        while size < self._n:
            size <<= 1
        self._size = size
        tree = [0.0] * (2 * size)
        tree[size : size + self._n] = ws
        for i in range(size - 1, 0, -1):
            tree[i] = tree[2 * i] + tree[2 * i + 1]
        self._tree = tree

    def __len__(self) -> int:
        return self._n

    def total(self) -> float:
        return self._tree[1]

    def get(self, index: int) -> float:
        return self._tree[self._size + index]

    def set(self, index: int, weight: float) -> None:
        if not math.isfinite(weight) or weight < 0.0:
            raise ValueError(f"weights must be finite and nonnegative: {weight}")
        tree = self._tree
        i = self._size + index
        tree[i] = weight
        i >>= 1
        while i:
            tree[i] = tree[2 * i] + tree[2 * i + 1]
            i >>= 1

    def sample(self, u: float) -> int:
        """Item index at cumulative position ``u * total`` for u in [0, 1)."""
        tree = self._tree
        total = tree[1]
        if total <= 0.0:
            raise ValueError("cannot sample: all weights are zero")
        x = u * total
        i = 1
        size = self._size
        while i < size:
            i <<= 1
            left = tree[i]
            if x >= left:
                x -= left
                i += 1
        index = i - size
        if index >= self._n or tree[size + index] <= 0.0:
            index = self._nearest_positive(index)
        return index

    def _nearest_positive(self, index: int) -> int:
        # Float-boundary fallback: x landed exactly on a zero-weight leaf.
        tree, size = self._tree, self._size
        for j in range(min(index, self._n - 1), -1, -1):
            if tree[size + j] > 0.0:
                return j
        for j in range(index + 1, self._n):
            if tree[size + j] > 0.0:
                return j
        raise ValueError("cannot sample: all weights are zero")


def discounted_weights(guards: Sequence["Relay"], discount: float) -> np.ndarray:
    """Per-guard selection weights: b_r when the origin validates, d * b_r otherwise."""
    if not 0.0 <= discount <= 1.0:
        raise ValueError(f"discount must be in [0, 1]: {discount}")
    weights = np.empty(len(guards))
    for i, relay in enumerate(guards):
        if relay.roa_v4 is None:
            raise ValueError(f"relay {relay.identity} is unresolved; call resolve_rpki first")
        b = float(relay.bandwidth_weight)
        weights[i] = b if relay.roa_valid else discount * b
    return weights


class SelectionState:
    """Per-run selection bookkeeping shared by all guard-selection modes.

    ``weights`` is either one weight vector (vanilla/discount selection)
    or a mapping from client category to a weight column (matched
    selection); all columns share the per-relay assignment counts, since
    a relay's load is global. Effective weights only ever decrease from
    their initial values.
    """

    def __init__(
        self,
        guards: Sequence["Relay"],
        weights: np.ndarray | Sequence[float] | Mapping[Category, np.ndarray],
        load_factor: float,
        expected_clients: int,
        max_retries: int = 100,
    ) -> None:
        if not guards:
            raise ValueError("no guards to select from")
        if max_retries < 1:
            raise ValueError("max_retries must be positive")
        self.guards = list(guards)
        self.bandwidths = np.array([float(g.bandwidth_weight) for g in self.guards])
        self.total_bandwidth = float(self.bandwidths.sum())
        self.expected_clients = int(expected_clients)
        if self.expected_clients > 0:
            self.demand_per_client = load_factor * self.total_bandwidth / self.expected_clients
        else:
            self.demand_per_client = 0.0
        self.max_retries = max_retries
        self.assigned = np.zeros(len(self.guards), dtype=np.int64)
        self.total_assigned = 0
        self.overload_count = 0
        self._samplers: dict[object, WeightedSampler] = {}
        self.reset_weights(weights)

    def reset_weights(self, weights) -> None:
        """Install fresh weight columns, keeping assignment counts."""
        if isinstance(weights, Mapping):
            columns = {key: np.asarray(col, dtype=float) for key, col in weights.items()}
        else:
            columns = {None: np.asarray(weights, dtype=float)}
        for key, col in columns.items():
            if len(col) != len(self.guards):
                raise ValueError(f"weight column {key!r} has {len(col)} entries for {len(self.guards)} guards")
        self._samplers = {key: WeightedSampler(col) for key, col in columns.items()}

    def effective_weight(self, index: int, key: object = None) -> float:
        return self._samplers[key].get(index)

    def select(self, rng: np.random.Generator, key: object = None) -> tuple[int, bool]:
        """Draw one guard index; returns (index, overloaded flag)."""
        sampler = self._samplers.get(key)
        if sampler is None:
            raise KeyError(f"no weight column for {key!r}")
        if sampler.total() <= 0.0:
            raise ValueError("no eligible guard: all selection weights are zero")
        bandwidths = self.bandwidths
        assigned = self.assigned
        demand = self.demand_per_client
        index = -1
        overloaded = True
        for _ in range(self.max_retries):
            index = sampler.sample(rng.random())
            share = bandwidths[index] / (assigned[index] + 1)
            if share >= demand:
                overloaded = False
                break
            ratio = share / demand
            for column in self._samplers.values():
                current = column.get(index)
                if current > 0.0:
                    column.set(index, current * ratio)
        if overloaded:
            self.overload_count += 1
        assigned[index] += 1
        self.total_assigned += 1
        return int(index), overloaded

    def release(self, index: int) -> None:
        """Forget one assignment (a client left the network)."""
        if self.assigned[index] > 0:
            self.assigned[index] -= 1
            self.total_assigned -= 1


def select_guard(state: SelectionState, rng: np.random.Generator, key: object = None) -> str:
    """Select one guard and return its identity."""
    index, _ = state.select(rng, key)
    return state.guards[index].identity


def client_roa_rate(assigned_counts: Sequence[int], guards: Sequence["Relay"]) -> float:
    """Fraction of assigned clients whose guard has a validated origin."""
    counts = np.asarray(assigned_counts)
    total = int(counts.sum())
    if total == 0:
        raise ValueError("no clients assigned")
    mask = np.array([r.roa_valid for r in guards])
    return float(counts[mask].sum()) / total


def _check_pools(roa_bandwidth: float, total_bandwidth: float) -> None:
    if total_bandwidth <= 0.0:
        raise ValueError("total bandwidth must be positive")
    if not 0.0 <= roa_bandwidth <= total_bandwidth:
        raise ValueError("ROA-covered bandwidth must be within [0, total]")


def expected_utilization(
    load_factor: float, discount: float, roa_bandwidth: float, total_bandwidth: float
) -> float:
    """Fraction of total guard bandwidth actually used at (load, discount).

    Demand ``load_factor * total`` splits between the validated and
    discounted pools in proportion to their post-discount weights; each
    pool serves at most its capacity and excess demand within a pool is
    lost rather than redistributed (that lost excess is what bends the
    surface below the load line for small discounts).
    """
    if not 0.0 <= load_factor <= 1.0:
        raise ValueError(f"load factor must be in [0, 1]: {load_factor}")
    if not 0.0 <= discount <= 1.0:
        raise ValueError(f"discount must be in [0, 1]: {discount}")
    _check_pools(roa_bandwidth, total_bandwidth)
    other = total_bandwidth - roa_bandwidth
    denominator = roa_bandwidth + discount * other
    share = roa_bandwidth / denominator if denominator > 0.0 else 1.0
    demand_roa = load_factor * total_bandwidth * share
    demand_other = load_factor * total_bandwidth * (1.0 - share)
    used = min(demand_roa, roa_bandwidth) + min(demand_other, other)
    return used / total_bandwidth


def optimal_discount(load_factor: float, roa_bandwidth: float, total_bandwidth: float) -> float:
    """Smallest discount factor that still fully utilizes bandwidth.

    Demand beyond the validated pool's capacity must stay on the other
    pool, which pins the split ratio and hence the discount; below that
    point any discount works, so the result clamps to [0, 1].
    """
    if not 0.0 <= load_factor <= 1.0:
        raise ValueError(f"load factor must be in [0, 1]: {load_factor}")
    _check_pools(roa_bandwidth, total_bandwidth)
    other = total_bandwidth - roa_bandwidth
    if other == 0.0:
        return 0.0
    d = (load_factor * total_bandwidth - roa_bandwidth) / other
    return min(max(d, 0.0), 1.0)


def roa_bandwidth_split(guards: Sequence["Relay"]) -> tuple[float, float]:
    """(validated bandwidth, total bandwidth) over a resolved guard list."""
    total = 0.0
    covered = 0.0
    for relay in guards:
        b = float(relay.bandwidth_weight)
        total += b
        if relay.roa_valid:
            covered += b
    return covered, total
