"""Metrics, the sufficient-reward bound, and independent test oracles.

All quantities come from the episode log, so a run's incremental
bookkeeping can always be re-derived and cross-checked from the same rows.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .environment import EpisodeLog
from .scenario import (
    BeliefId,
    EventKind,
    PerfectDescriptor,
    Scenario,
    validate_descriptor_structure,
)


class ConditionUnsatisfiableError(ValueError):
    """The scenario's dynamics cannot satisfy the sufficient reward condition."""


class OracleSizeError(ValueError):
    """Brute-force enumeration would exceed its size guard."""


# ---------------------------------------------------------------------------
# Metrics (episode cost, execution time, reliability, belief efficiency)
# ---------------------------------------------------------------------------


@dataclass
class EpisodeMetrics:
    m: int
    task: int
    execution_time: int
    cost: float
    belief_efficiency: float  # nan when the speaker transmitted nothing
    reached_final: bool
    within_window: bool


@dataclass
class TaskMetrics:
    task: int
    episodes: int
    mean_execution_time: float
    mean_belief_efficiency: float
    reliability: float


@dataclass
class MetricsReport:
    per_episode: list[EpisodeMetrics]
    per_task: dict[int, TaskMetrics]
    belief_efficiency: float  # mean over per-task means
    discounted_cost: float
    reliability: float
    alpha: float
    gamma: float
    window_cap_factor: float
    u_b_min: float | None = None
    u_b_min_ok: bool | None = None
    unsolvable: bool = False

    @property
    def n_episodes(self) -> int:
        return len(self.per_episode)

    def episode_slice(self, start: int, end: int | None = None) -> list[EpisodeMetrics]:
        return self.per_episode[start:end]

    def tail(self, n: int) -> list[EpisodeMetrics]:
        return self.per_episode[-n:] if n else []


def compute_metrics(
    log: EpisodeLog,
    scenario: Scenario,
    alpha: float,
    gamma: float,
    window_cap_factor: float = 3.0,
    u_b_min: float | None = None,
) -> MetricsReport:
    if log.n_episodes == 0:
        raise ValueError("empty episode log")

    per_episode: list[EpisodeMetrics] = []
    discounted = 0.0
    discount = 1.0
    windows = {t.id: int(window_cap_factor * t.max_len) for t in scenario.tasks}
    for rec in log.episodes():
        cost = alpha * rec.speaker_cost_sum + (1.0 - alpha) * rec.listener_cost_sum
        ub = 1.0 / rec.tx_count_sum if rec.tx_count_sum > 0 else math.nan
        within = rec.reached_final and rec.execution_time <= windows[rec.task]
        discount *= gamma
        discounted += discount * cost
        per_episode.append(
            EpisodeMetrics(
                m=rec.m,
                task=rec.task,
                execution_time=rec.execution_time,
                cost=cost,
                belief_efficiency=ub,
                reached_final=rec.reached_final,
                within_window=within,
            )
        )

    per_task = summarize_tasks(per_episode)
    ub_means = [t.mean_belief_efficiency for t in per_task.values() if not math.isnan(t.mean_belief_efficiency)]
    reliability = float(np.mean([e.within_window for e in per_episode]))
    return MetricsReport(
        per_episode=per_episode,
        per_task=per_task,
        belief_efficiency=float(np.mean(ub_means)) if ub_means else math.nan,
        discounted_cost=discounted,
        reliability=reliability,
        alpha=alpha,
        gamma=gamma,
        window_cap_factor=window_cap_factor,
        u_b_min=u_b_min,
        u_b_min_ok=None if u_b_min is None else bool(np.mean(ub_means) >= u_b_min),
    )


def summarize_tasks(episodes: list[EpisodeMetrics]) -> dict[int, TaskMetrics]:
    by_task: dict[int, list[EpisodeMetrics]] = {}
    for e in episodes:
        by_task.setdefault(e.task, []).append(e)
    out: dict[int, TaskMetrics] = {}
    for task, rows in sorted(by_task.items()):
        ubs = [r.belief_efficiency for r in rows if not math.isnan(r.belief_efficiency)]
        out[task] = TaskMetrics(
            task=task,
            episodes=len(rows),
            mean_execution_time=float(np.mean([r.execution_time for r in rows])),
            mean_belief_efficiency=float(np.mean(ubs)) if ubs else math.nan,
            reliability=float(np.mean([r.within_window for r in rows])),
        )
    return out


def mean_execution_time(episodes: list[EpisodeMetrics]) -> float:
    return float(np.mean([e.execution_time for e in episodes]))


def mean_cost(episodes: list[EpisodeMetrics]) -> float:
    return float(np.mean([e.cost for e in episodes]))


def mean_belief_efficiency(episodes: list[EpisodeMetrics]) -> float:
    ubs = [e.belief_efficiency for e in episodes if not math.isnan(e.belief_efficiency)]
    return float(np.mean(ubs)) if ubs else math.nan


def reliability_of(episodes: list[EpisodeMetrics]) -> float:
    return float(np.mean([e.within_window for e in episodes])) if episodes else math.nan


# ---------------------------------------------------------------------------
# Log audit: description constraints and accounting identities
# ---------------------------------------------------------------------------


def audit_log(log: EpisodeLog, scenario: Scenario, alpha: float, tol: float = 1e-9) -> list[str]:
    """Violations of the description constraints (disjoint parts, one belief
    per level, prefix levels) on recorded slots, plus failures of the episode
    cost and belief-efficiency accounting identities. Empty means clean."""
    problems: list[str] = []
    for row, (sp, lp) in log.iter_rows_with_parts():
        m, n = row[0], row[1]
        sp_set, lp_set = set(sp), set(lp)
        if sp_set & lp_set:
            problems.append(f"episode {m} slot {n}: speaker and listener parts overlap")
        union = sp_set | lp_set
        if not validate_descriptor_structure(union, scenario.belief_set):
            problems.append(f"episode {m} slot {n}: completed description is not hierarchical")
        cs, cl, ct = row[7], row[8], row[9]
        expect_cs = sum(scenario.belief_set.tx_cost[b] for b in sp)
        expect_cl = sum(scenario.belief_set.infer_cost[b] for b in lp)
        if abs(cs - expect_cs) > tol or abs(cl - expect_cl) > tol:
            problems.append(f"episode {m} slot {n}: logged costs disagree with the cost maps")
        if abs(ct - (alpha * cs + (1 - alpha) * cl)) > tol:
            problems.append(f"episode {m} slot {n}: total cost is not the alpha blend")
    for rec in log.episodes():
        blended = alpha * rec.speaker_cost_sum + (1 - alpha) * rec.listener_cost_sum
        if abs(blended - rec.total_cost_sum) > tol:
            problems.append(f"episode {rec.m}: episode cost identity broken")
    return problems


# ---------------------------------------------------------------------------
# Sufficient reward bound
# ---------------------------------------------------------------------------


@dataclass
class Theorem1Bound:
    """Reward floor making certified descriptors dominate the alternatives.

    delta_s / delta_l are per-slot action-cost spreads (what two competing
    actions of the same shape can differ by); the *_subset variants are the
    loose any-subset spreads, reported for reference. r_min = max(d1, d2).
    """

    delta_s: float
    delta_l: float
    d1: float
    d2: float
    r_min: float
    delta_s_subset: float
    delta_l_subset: float
    r_min_subset: float
    per_task_d1: dict[int, float] = field(default_factory=dict)
    per_task_d2: dict[int, float] = field(default_factory=dict)


def theorem1_bound(scenario: Scenario) -> Theorem1Bound:
    bs = scenario.belief_set
    tx = bs.tx_cost
    infer = bs.infer_cost

    level_tx = [sorted(tx[b] for b in level) for level in bs.levels]
    level_infer = [sorted(infer[b] for b in level) for level in bs.levels]

    # Speaker actions are single beliefs from levels 1-2 at step 1, then
    # one-per-level tuples over levels 1..l; the worst same-shape spread is
    # the larger of the cross-level single spread and the summed tuple spread.
    first_two_tx = [c for level in level_tx[:2] for c in level]
    single_spread = max(first_two_tx) - min(first_two_tx)
    tuple_spread = sum(level[-1] - level[0] for level in level_tx[:-1]) if bs.num_levels > 1 else 0.0
    delta_s = max(single_spread, tuple_spread)
    # The listener always adds one belief, restricted to a single level.
    delta_l = max(level[-1] - level[0] for level in level_infer)

    delta_s_subset = sum(tx.values())
    delta_l_subset = sum(infer.values())

    spread = max(delta_s, delta_l)
    spread_subset = max(delta_s_subset, delta_l_subset)

    p = scenario.transitions.p_good
    pt = scenario.transitions.p_bad
    per_task_d1: dict[int, float] = {}
    per_task_d2: dict[int, float] = {}
    for task in scenario.tasks:
        fin = task.final_event
        init = task.initial_event
        denom1 = min(p[e, fin] + pt[e, init] for e in task.tec[:-1])
        if denom1 <= 0:
            raise ConditionUnsatisfiableError(
                f"task {task.id}: no escape mass toward final or restart"
            )
        increments = [
            p[task.tec[j - 1], fin] - p[task.tec[j - 2], fin]
            for j in range(2, task.max_len)
        ]
        denom2 = min(increments)
        if denom2 <= 0:
            raise ConditionUnsatisfiableError(
                f"task {task.id}: jump-to-final probability is not strictly increasing"
            )
        per_task_d1[task.id] = spread / denom1
        per_task_d2[task.id] = spread / denom2

    d1 = max(per_task_d1.values())
    d2 = max(per_task_d2.values())
    # The subset variant reuses the same denominators.
    scale = spread_subset / spread if spread > 0 else 0.0
    return Theorem1Bound(
        delta_s=delta_s,
        delta_l=delta_l,
        d1=d1,
        d2=d2,
        r_min=max(d1, d2),
        delta_s_subset=delta_s_subset,
        delta_l_subset=delta_l_subset,
        r_min_subset=max(d1, d2) * scale,
        per_task_d1=per_task_d1,
        per_task_d2=per_task_d2,
    )


def recommended_task_reward(
    scenario: Scenario, gamma: float, margin: float = 1.1, bound: Theorem1Bound | None = None
) -> float:
    """Reward injected before a run: the sufficient-condition floor raised,
    if needed, to keep a converged initial event's value positive so that
    certification's positive-Q gate can see it.

    The positivity floor assumes the longest chain pays the maximum
    per-slot description cost (tuple transmission plus the belief count)
    every slot and only collects the reward at the end.
    """
    b = bound if bound is not None else theorem1_bound(scenario)
    bs = scenario.belief_set
    level_max = [max(bs.tx_cost[x] for x in level) for level in bs.levels]
    worst_slot = max(
        sum(level_max[:l]) + l for l in range(1, bs.num_levels)
    )
    gate = 0.0
    for task in scenario.tasks:
        ln = task.max_len
        pay_discount = gamma ** (ln - 2)
        run_cost = worst_slot * sum(gamma**i for i in range(ln - 1))
        gate = max(gate, run_cost / pay_discount)
    return margin * max(b.r_min, gate)


# ---------------------------------------------------------------------------
# Brute-force descriptor oracle
# ---------------------------------------------------------------------------


def brute_force_perfect_descriptors(
    scenario: Scenario, size_guard: int = 10**6
) -> dict[int, frozenset[PerfectDescriptor]]:
    """Enumerate every structurally valid hierarchical subset and test it
    against the ground truth, event by event."""
    bs = scenario.belief_set
    total = 0
    prefix = 1
    for level in bs.levels:
        prefix *= len(level)
        total += prefix
    if total > size_guard:
        raise OracleSizeError(f"{total} candidate descriptors exceed the guard {size_guard}")

    candidates: list[frozenset[BeliefId]] = []
    for depth in range(2, bs.num_levels + 1):
        for combo in itertools.product(*bs.levels[:depth]):
            candidates.append(frozenset(combo))

    out: dict[int, frozenset[PerfectDescriptor]] = {}
    for e in range(scenario.n_events):
        perfect = scenario.perfect_sets[e]
        found = [
            PerfectDescriptor(tuple(sorted(c))) for c in candidates if c in perfect
        ]
        out[e] = frozenset(found)
    return out


# ---------------------------------------------------------------------------
# Complexity accounting
# ---------------------------------------------------------------------------


def qtable_accounting(
    l: int,
    n_beliefs: int,
    n_events: int,
    hierarchy_size: int | None = None,
    listener_pool: int | None = None,
) -> int:
    """Joint Q-value count of curriculum step l: the product of both agents'
    state-space and action-space sizes. Defaults give the worst-case closed
    forms; pass the realized sizes to reproduce an actual run's tables."""
    if l < 1:
        raise ValueError("curriculum steps start at 1")
    if l == 1:
        return n_events * n_beliefs * n_beliefs * (n_beliefs - 1)
    h = hierarchy_size if hierarchy_size is not None else math.comb(n_beliefs, l)
    pool = listener_pool if listener_pool is not None else n_beliefs
    return n_events * h * h * pool


def flat_qtable_accounting(
    n_beliefs: int, n_events: int, cardinality_cap: int | None = None
) -> int:
    if cardinality_cap is None:
        return n_events * 2**n_beliefs
    return n_events * sum(math.comb(n_beliefs, c) for c in range(cardinality_cap + 1))


def task_steps(scenario: Scenario) -> dict[int, int]:
    """Curriculum step at which each task becomes fully describable: the
    deepest (cheapest-available) descriptor among its non-final events,
    minus one. Final events are never described during execution."""
    steps: dict[int, int] = {}
    for task in scenario.tasks:
        depth = 2
        for e in task.tec[:-1]:
            depth = max(depth, min(d.depth for d in scenario.perfect_map[e]))
        steps[task.id] = depth - 1
    return steps


# ---------------------------------------------------------------------------
# Convergence series helpers
# ---------------------------------------------------------------------------


def plateau_episode(
    episodes: list[int],
    values: list[float],
    window: int = 500,
    tol: float = 1e-3,
) -> int | None:
    """First episode from which the series stays within a relative band of
    width tol over the next `window` episodes; None if it never settles.

    The band is relative to the series' final magnitude, so the tolerance is
    meaningful regardless of the reward scale the Q-values inherit.
    """
    if not episodes:
        return None
    scale = max(1.0, abs(values[-1]))
    arr = np.asarray(values)
    eps = np.asarray(episodes)
    for i in range(len(eps)):
        j = int(np.searchsorted(eps, eps[i] + window, side="right"))
        segment = arr[i:j]
        if eps[i] + window > eps[-1]:
            return None
        if (segment.max() - segment.min()) / scale < tol:
            return int(eps[i])
    return None
