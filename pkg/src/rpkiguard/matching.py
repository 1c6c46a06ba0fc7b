"""Matched guard selection: categories, pair rewards, and the weight optimizer.

Every AS (client or relay) falls into exactly one of four categories by
its joint ROA/ROV status. A client-relay pair is *matched* when one
side's ROA protection is backed by the other side's ROV filtering; such
pairs keep their route-origin protection end to end, so selection should
favor them without starving relays or concentrating traffic.

The optimizer recomputes one selection-weight column per client
category, jointly for all categories, as a linear program:

* variables ``w[r, s]``: probability that a category-``s`` client picks
  relay ``r`` (category-major vector layout, ``x[s * R + r]``);
* objective: total pair reward, where a pair's reward multiplies the two
  sides' unit rewards and a bonus factor when the pair is matched;
* each category's weights sum to one (one distribution per category);
* per relay, the client-distribution-weighted demand stays within its
  normalized bandwidth divided by the load factor;
* no weight exceeds ``theta`` times the relay's vanilla probability,
  bounding the advantage a strategically placed relay can gain.

Vanilla weights satisfy all constraints, so the program is always
feasible and the optimum never scores below vanilla.

The printed objective in the source formulation sums rewards without
client-distribution weights, while its surrounding definitions weight
relay demand by the client distribution; both readings are implemented
(``objective_mode`` "weighted", the default, multiplies each category's
coefficients by its client share; "literal" does not).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

if TYPE_CHECKING:  # pragma: no cover
    from rpkiguard.consensus import Relay

OBJECTIVE_MODES = ("weighted", "literal")

# Constraint slack accepted from the solver before a solution is rejected.
COLUMN_SUM_TOL = 1e-6
CAPACITY_TOL = 1e-9
PLACEMENT_TOL = 1e-9


class Category(enum.Enum):
    """Joint ROA/ROV status of an AS."""

    ROA = "roa"
    ROV = "rov"
    BOTH = "both"
    NEITHER = "neither"


CATEGORY_ORDER: tuple[Category, ...] = (Category.ROA, Category.ROV, Category.BOTH, Category.NEITHER)
CATEGORY_INDEX = {c: i for i, c in enumerate(CATEGORY_ORDER)}

_HAS_ROA = frozenset((Category.ROA, Category.BOTH))
_HAS_ROV = frozenset((Category.ROV, Category.BOTH))


def category_of(roa_valid: bool, rov_enforcing: bool) -> Category:
    if roa_valid:
        return Category.BOTH if rov_enforcing else Category.ROA
    return Category.ROV if rov_enforcing else Category.NEITHER


def has_roa(category: Category) -> bool:
    return category in _HAS_ROA


def has_rov(category: Category) -> bool:
    return category in _HAS_ROV


def is_matched(client: Category, relay: Category) -> bool:
    """True when one side's ROA is complemented by the other side's ROV."""
    return (client in _HAS_ROA and relay in _HAS_ROV) or (
        client in _HAS_ROV and relay in _HAS_ROA
    )


def matched_matrix() -> np.ndarray:
    """(client category, relay category) -> matched, indexed by CATEGORY_ORDER."""
    return np.array(
        [[is_matched(c, r) for r in CATEGORY_ORDER] for c in CATEGORY_ORDER], dtype=bool
    )


@dataclass(frozen=True)
class RewardParams:
    """Unit-reward discounts and the matching bonus.

    ``d1`` discounts a side that lacks ROV, ``d2`` (the harsher one)
    discounts a side that lacks ROA, and a side lacking both gets
    ``d1 * d2``. ``bonus`` multiplies a matched pair's reward. The
    constraint ``d1**2 < bonus * d2`` keeps the reward chain strictly
    decreasing, so every matched pair outranks every unmatched one.
    """

    d1: float = 0.9
    d2: float = 0.7
    bonus: float = 1.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.d2 < self.d1 <= 1.0:
            raise ValueError(f"need 0 <= d2 < d1 <= 1, got d1={self.d1}, d2={self.d2}")
        if not self.bonus > 1.0:
            raise ValueError(f"bonus must exceed 1: {self.bonus}")
        if not self.d1 * self.d1 < self.bonus * self.d2:
            raise ValueError(
                f"reward order broken: need d1*d1 < bonus*d2, got {self.d1 ** 2} >= {self.bonus * self.d2}"
            )


def unit_reward(category: Category, params: RewardParams) -> float:
    if category is Category.BOTH:
        return 1.0
    if category is Category.ROA:
        return params.d1  # missing ROV
    if category is Category.ROV:
        return params.d2  # missing ROA
    return params.d1 * params.d2  # missing both


def pair_reward(client: Category, relay: Category, params: RewardParams) -> float:
    reward = unit_reward(client, params) * unit_reward(relay, params)
    if is_matched(client, relay):
        reward *= params.bonus
    return reward


def _distribution_vector(distribution: Mapping[Category, float]) -> np.ndarray:
    vec = np.zeros(len(CATEGORY_ORDER))
    for category, share in distribution.items():
        vec[CATEGORY_INDEX[category]] = share
    if np.any(vec < 0):
        raise ValueError("client distribution has negative shares")
    if abs(float(vec.sum()) - 1.0) > 1e-9:
        raise ValueError(f"client distribution must sum to 1, got {vec.sum()!r}")
    return vec


@dataclass(frozen=True)
class LpConfig:
    """Parameters of one weight optimization."""

    load_factor: float = 0.8
    theta: float = 5.0
    reward: RewardParams = field(default_factory=RewardParams)
    client_distribution: Mapping[Category, float] = field(
        default_factory=lambda: {c: 0.25 for c in CATEGORY_ORDER}
    )
    objective_mode: str = "weighted"

    def __post_init__(self) -> None:
        if not 0.0 < self.load_factor <= 1.0:
            raise ValueError(f"load factor must be in (0, 1]: {self.load_factor}")
        if self.theta < 1.0:
            raise ValueError(f"theta must be >= 1: {self.theta}")
        if self.objective_mode not in OBJECTIVE_MODES:
            raise ValueError(f"objective_mode must be one of {OBJECTIVE_MODES}")
        _distribution_vector(self.client_distribution)

    def distribution_vector(self) -> np.ndarray:
        return _distribution_vector(self.client_distribution)


@dataclass
class LpProblem:
    """Canonical LP container: maximize c @ x, A_eq x = b_eq, A_ub x <= b_ub, 0 <= x <= ub."""

    objective: np.ndarray
    eq_rows: sp.csr_matrix
    eq_rhs: np.ndarray
    ub_rows: sp.csr_matrix
    ub_rhs: np.ndarray
    upper_bounds: np.ndarray

    @property
    def variables(self) -> int:
        return self.objective.shape[0]


def _relay_categories(guards: Sequence["Relay"]) -> list[Category]:
    cats = []
    for relay in guards:
        if relay.category is None:
            raise ValueError(f"relay {relay.identity} has no category; resolve the snapshot first")
        cats.append(relay.category)
    return cats


def _normalized_bandwidth(guards: Sequence["Relay"]) -> np.ndarray:
    b = np.array([float(r.bandwidth_weight) for r in guards])
    total = float(b.sum())
    if total <= 0.0:
        raise ValueError("total guard bandwidth is zero")
    return b / total


def build_lp(guards: Sequence["Relay"], cfg: LpConfig) -> LpProblem:
    """Assemble the weight-optimization LP for a resolved guard list.

    Layout: 4*R variables in category-major order; 4 equality rows (one
    distribution per category), R capacity rows (client-weighted demand
    vs bandwidth/load), and per-variable placement bounds theta * w'.
    """
    if not guards:
        raise ValueError("no guards to optimize")
    cats = _relay_categories(guards)
    w_vanilla = _normalized_bandwidth(guards)
    t_vec = cfg.distribution_vector()
    n_relays = len(guards)
    n_vars = 4 * n_relays

    objective = np.empty(n_vars)
    for si, client_cat in enumerate(CATEGORY_ORDER):
        rewards = np.array([pair_reward(client_cat, cat, cfg.reward) for cat in cats])
        if cfg.objective_mode == "weighted":
            rewards = rewards * t_vec[si]
        objective[si * n_relays : (si + 1) * n_relays] = rewards

    eq_rows = sp.csr_matrix(
        (
            np.ones(n_vars),
            (np.repeat(np.arange(4), n_relays), np.arange(n_vars)),
        ),
        shape=(4, n_vars),
    )
    eq_rhs = np.ones(4)

    ub_cols = np.concatenate([si * n_relays + np.arange(n_relays) for si in range(4)])
    ub_rows_idx = np.tile(np.arange(n_relays), 4)
    ub_data = np.repeat(t_vec, n_relays)
    ub_rows = sp.csr_matrix((ub_data, (ub_rows_idx, ub_cols)), shape=(n_relays, n_vars))
    ub_rhs = w_vanilla / cfg.load_factor

    upper_bounds = np.tile(cfg.theta * w_vanilla, 4)
    return LpProblem(objective, eq_rows, eq_rhs, ub_rows, ub_rhs, upper_bounds)


def solve_lp(problem: LpProblem) -> tuple[np.ndarray, float]:
    """Solve to optimality; deterministic for a fixed problem.

    Raises RuntimeError on infeasible or unbounded programs (neither can
    occur for programs built by ``build_lp``: vanilla weights are always
    feasible and the feasible set is compact).
    """
    n = problem.variables
    bounds = np.column_stack((np.zeros(n), problem.upper_bounds))
    result = linprog(
        -problem.objective,
        A_ub=problem.ub_rows,
        b_ub=problem.ub_rhs,
        A_eq=problem.eq_rows,
        b_eq=problem.eq_rhs,
        bounds=bounds,
        method="highs-ds",
        options={
            "presolve": True,
            "primal_feasibility_tolerance": 1e-10,
            "dual_feasibility_tolerance": 1e-9,
        },
    )
    if result.status == 2:
        raise RuntimeError(f"linear program infeasible: {result.message}")
    if result.status == 3:
        raise RuntimeError(f"linear program unbounded: {result.message}")
    if result.status != 0:
        raise RuntimeError(f"linear program solve failed: {result.message}")
    x = np.maximum(result.x, 0.0)  # clip solver-tolerance negatives
    return x, float(problem.objective @ x)


@dataclass
class WeightMatrix:
    """Optimized per-relay, per-client-category selection weights."""

    identities: tuple[str, ...]
    relay_categories: tuple[Category, ...]
    vanilla: np.ndarray  # (R,) normalized consensus weights
    weights: np.ndarray  # (R, 4), columns in CATEGORY_ORDER
    objective_value: float
    vanilla_objective: float

    def column(self, category: Category) -> np.ndarray:
        return self.weights[:, CATEGORY_INDEX[category]]

    def columns(self) -> dict[Category, np.ndarray]:
        return {c: self.weights[:, i].copy() for i, c in enumerate(CATEGORY_ORDER)}

    def reordered(self, identities: Sequence[str]) -> "WeightMatrix":
        """Copy with relay rows permuted into the given identity order."""
        if tuple(identities) == self.identities:
            return self
        index = {identity: i for i, identity in enumerate(self.identities)}
        if len(identities) != len(self.identities) or any(i not in index for i in identities):
            raise ValueError("weight matrix relays do not match the guard set")
        perm = np.array([index[identity] for identity in identities])
        return WeightMatrix(
            identities=tuple(identities),
            relay_categories=tuple(self.relay_categories[p] for p in perm),
            vanilla=self.vanilla[perm],
            weights=self.weights[perm],
            objective_value=self.objective_value,
            vanilla_objective=self.vanilla_objective,
        )

    def validate(self, cfg: LpConfig) -> None:
        """Check the three constraint families at their accepted slacks."""
        col_err = np.abs(self.weights.sum(axis=0) - 1.0).max()
        if col_err > COLUMN_SUM_TOL:
            raise RuntimeError(f"category weight column off normalization by {col_err:.3e}")
        demand = self.weights @ cfg.distribution_vector()
        cap_err = float((demand - self.vanilla / cfg.load_factor).max())
        if cap_err > CAPACITY_TOL:
            raise RuntimeError(f"relay capacity exceeded by {cap_err:.3e}")
        place_err = float((self.weights - cfg.theta * self.vanilla[:, None]).max())
        if place_err > PLACEMENT_TOL:
            raise RuntimeError(f"placement cap exceeded by {place_err:.3e}")
        if float(self.weights.min()) < 0.0:
            raise RuntimeError("negative selection weight")


def optimize_weights(guards: Sequence["Relay"], cfg: LpConfig) -> WeightMatrix:
    """Build, solve, and validate the weight optimization for ``guards``."""
    problem = build_lp(guards, cfg)
    x, objective = solve_lp(problem)
    n_relays = len(guards)
    weights = x.reshape(4, n_relays).T
    w_vanilla = _normalized_bandwidth(guards)
    vanilla_objective = float(problem.objective @ np.tile(w_vanilla, 4))
    matrix = WeightMatrix(
        identities=tuple(r.identity for r in guards),
        relay_categories=tuple(_relay_categories(guards)),
        vanilla=w_vanilla,
        weights=weights,
        objective_value=objective,
        vanilla_objective=vanilla_objective,
    )
    matrix.validate(cfg)
    return matrix


def expected_matched_rate(
    matrix: WeightMatrix, client_distribution: Mapping[Category, float]
) -> float:
    """Probability that a random client forms a matched pair under ``matrix``."""
    return _matched_rate(matrix, client_distribution, matrix.weights)


def vanilla_matched_rate(
    matrix: WeightMatrix, client_distribution: Mapping[Category, float]
) -> float:
    """Matched-pair probability under bandwidth-proportional selection."""
    columns = np.repeat(matrix.vanilla[:, None], 4, axis=1)
    return _matched_rate(matrix, client_distribution, columns)


def _matched_rate(
    matrix: WeightMatrix, client_distribution: Mapping[Category, float], columns: np.ndarray
) -> float:
    t_vec = _distribution_vector(client_distribution)
    rate = 0.0
    for si, client_cat in enumerate(CATEGORY_ORDER):
        mask = np.array([is_matched(client_cat, cat) for cat in matrix.relay_categories])
        rate += t_vec[si] * float(columns[mask, si].sum())
    return rate
