"""Flat single-agent Q-learning comparator.

One speaker explores the full power set of beliefs (actions are subset
bitmasks in canonical order) with no listener cooperation. The environment,
seeding scheme, logging schema and metric definitions are the ones the
curriculum path uses; only the policy differs. Structural validity of the
chosen subsets is deliberately not enforced: the baseline may emit and pay
for malformed descriptions.

The table is stored sparsely with implicit zeros; argmax and max are exact
(including the lowest-index tie-break over the untouched zero entries), so
behaviour matches a dense table without allocating |E| * 2^B floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .agents import LearnConfig, speaker_reward
from .analysis import MetricsReport, compute_metrics, flat_qtable_accounting
from .environment import EpisodeLog, EpisodeStatus, SemanticEnv
from .rng import RngBundle
from .scenario import BeliefId, Scenario


class FlatMemoryError(MemoryError):
    def __init__(self, n_actions: int, n_states: int, bound: int):
        dense_bytes = n_states * n_actions * 16  # q + visit counter per key
        super().__init__(
            f"flat action space of {n_actions} subsets exceeds the configured bound "
            f"of {bound}; a dense table would need {dense_bytes} bytes "
            f"({n_states} states x {n_actions} actions x 16 bytes). "
            f"Set a cardinality cap to proceed."
        )
        self.required_bytes = dense_bytes


@dataclass
class FlatSpaces:
    """States are events; actions are belief-subset bitmasks in ascending
    mask order (optionally capped to small cardinalities)."""

    n_beliefs: int
    n_states: int
    cardinality_cap: int | None = None

    def __post_init__(self) -> None:
        if self.cardinality_cap is None:
            self.masks = None  # action index is the mask itself
            self.n_actions = 2**self.n_beliefs
        else:
            import itertools

            masks = [0]
            for c in range(1, self.cardinality_cap + 1):
                for bits in itertools.combinations(range(self.n_beliefs), c):
                    masks.append(sum(1 << b for b in bits))
            masks.sort()
            self.masks = masks
            self.n_actions = len(masks)

    def mask_of(self, action: int) -> int:
        return action if self.masks is None else self.masks[action]

    @property
    def key_count(self) -> int:
        return self.n_states * self.n_actions


class _FlatRow:
    """One state's sparse action-value row with exact argmax semantics."""

    __slots__ = ("qmap", "visits", "best_val", "best_idx", "zero_ptr", "n_actions")

    def __init__(self, n_actions: int):
        self.qmap: dict[int, float] = {}
        self.visits: dict[int, int] = {}
        self.best_val = 0.0  # best strictly-positive value seen, else 0
        self.best_idx = -1
        self.zero_ptr = 0  # lowest index currently holding an exact zero
        self.n_actions = n_actions

    def _advance_zero(self) -> None:
        while self.zero_ptr < self.n_actions and self.qmap.get(self.zero_ptr, 0.0) != 0.0:
            self.zero_ptr += 1

    def _rescan(self) -> None:
        self.best_val = 0.0
        self.best_idx = -1
        for a, q in self.qmap.items():
            if q > self.best_val or (q == self.best_val > 0.0 and a < self.best_idx):
                self.best_val = q
                self.best_idx = a

    def set(self, action: int, value: float) -> None:
        had = self.qmap.get(action)
        self.qmap[action] = value
        if value > self.best_val or (value == self.best_val > 0.0 and action < self.best_idx):
            self.best_val = value
            self.best_idx = action
        elif action == self.best_idx and value < self.best_val:
            self._rescan()
        if value == 0.0 and action < self.zero_ptr:
            self.zero_ptr = action
        elif action == self.zero_ptr:
            self._advance_zero()
        if had is None and len(self.qmap) == self.n_actions:
            self._advance_zero()

    def argmax(self) -> int:
        if self.best_val > 0.0:
            return self.best_idx
        self._advance_zero()
        if self.zero_ptr < self.n_actions:
            return self.zero_ptr
        # Every action visited and negative: exact max with low-index ties.
        return min(self.qmap, key=lambda a: (-self.qmap[a], a))

    def max_value(self) -> float:
        if self.best_val > 0.0:
            return self.best_val
        self._advance_zero()
        if self.zero_ptr < self.n_actions:
            return 0.0
        return max(self.qmap.values())


class FlatQTable:
    def __init__(self, spaces: FlatSpaces):
        self.spaces = spaces
        self.rows = [_FlatRow(spaces.n_actions) for _ in range(spaces.n_states)]
        self.key_count = spaces.key_count

    def q(self, state: int, action: int) -> float:
        return self.rows[state].qmap.get(action, 0.0)

    def visit_count(self, state: int, action: int) -> int:
        return self.rows[state].visits.get(action, 0)

    def select(self, state: int, epsilon: float, rng: np.random.Generator) -> int:
        if epsilon > 0.0 and rng.random() < epsilon:
            return int(rng.integers(self.spaces.n_actions))
        return self.rows[state].argmax()

    def update(
        self, state: int, action: int, reward: float, bootstrap: float,
        beta: float, gamma: float,
    ) -> None:
        row = self.rows[state]
        q = row.qmap.get(action, 0.0)
        row.set(action, q + beta * (reward + gamma * bootstrap - q))
        row.visits[action] = row.visits.get(action, 0) + 1

    def visited_entries(self) -> int:
        return sum(len(r.qmap) for r in self.rows)


@dataclass
class FlatRunStats:
    spaces: FlatSpaces
    key_count: int
    visited_entries: int
    episodes: int


def run_flat_rl(
    scenario: Scenario,
    cfg: LearnConfig,
    rngs: RngBundle,
    episodes: int,
    alpha: float = 0.5,
    slot_cap_factor: float = 10.0,
    window_cap_factor: float = 3.0,
    log: EpisodeLog | None = None,
    cardinality_cap: int | None = None,
    max_actions: int = 2**24,
) -> tuple[FlatRunStats, MetricsReport, FlatQTable]:
    n_actions = (
        2**scenario.belief_set.total_count
        if cardinality_cap is None
        else sum(math.comb(scenario.belief_set.total_count, c) for c in range(cardinality_cap + 1))
    )
    if n_actions > max_actions:
        raise FlatMemoryError(n_actions, scenario.n_events, max_actions)

    env = SemanticEnv(scenario, alpha=alpha, slot_cap_factor=slot_cap_factor)
    spaces = FlatSpaces(
        n_beliefs=scenario.belief_set.total_count,
        n_states=scenario.n_events,
        cardinality_cap=cardinality_cap,
    )
    assert spaces.n_actions == n_actions
    assert spaces.key_count == flat_qtable_accounting(
        scenario.belief_set.total_count, scenario.n_events, cardinality_cap
    )
    table = FlatQTable(spaces)
    log = log if log is not None else EpisodeLog(record_parts=False)

    beliefs = scenario.belief_set.all_beliefs()
    part_cache: dict[int, frozenset[BeliefId]] = {}

    def parts_of(mask: int) -> frozenset[BeliefId]:
        cached = part_cache.get(mask)
        if cached is None:
            cached = frozenset(b for i, b in enumerate(beliefs) if mask >> i & 1)
            part_cache[mask] = cached
        return cached

    empty: frozenset[BeliefId] = frozenset()
    tasks = scenario.tasks
    rng = rngs.flat

    for ep in range(episodes):
        m = ep + 1
        epsilon = cfg.epsilon_at(ep)
        beta = cfg.beta_at(ep, episodes)
        task = tasks[(m - 1) % len(tasks)]
        state = env.start_episode(m, task.id)
        while not state.terminal:
            e = state.current_event
            action = table.select(e, epsilon, rng)
            sp = parts_of(spaces.mask_of(action))
            outcome, state = env.run_slot(state, sp, empty, rngs.env)
            log.append_slot(m, state.slot_index - 1, task.id, outcome)
            reward = speaker_reward(outcome, outcome.next_kind_signal, task)
            bootstrap = 0.0 if state.terminal else table.rows[outcome.next_event].max_value()
            table.update(e, action, reward, bootstrap, beta, cfg.gamma)
        log.close_episode(m, task.id, state.status == EpisodeStatus.SUCCESS)

    stats = FlatRunStats(
        spaces=spaces,
        key_count=table.key_count,
        visited_entries=table.visited_entries(),
        episodes=episodes,
    )
    report = compute_metrics(
        log, scenario, alpha=alpha, gamma=cfg.gamma, window_cap_factor=window_cap_factor
    )
    return stats, report, table
