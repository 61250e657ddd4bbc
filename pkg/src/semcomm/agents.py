"""Tabular Q-learning speaker and listener.

Each curriculum step gets fresh tables over step-indexed spaces: the
speaker's states are events and its actions are the compatible belief
tuples carried over from the previous step (single beliefs at step 1); the
listener's state is the transmitted tuple and its actions are single
beliefs from the not-yet-identified pool. Tables span the full spaces for
complexity accounting, while runtime selection is restricted to actions
whose completed description stays structurally legal, so logged slots
never violate the disjointness/per-level/prefix constraints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .environment import SlotOutcome
from .scenario import BeliefId, EventKind, Scenario, TaskSpec

BeliefTuple = tuple[BeliefId, ...]


@dataclass
class LearnConfig:
    beta: float = 0.15
    # Learning-rate schedule: full beta while the agents coordinate, then a
    # harmonic decay over the tail of the budget so the final table is a
    # low-noise average of mature targets (Q jitter under a constant rate
    # would swamp the near-max extraction band).
    beta_warm_frac: float = 0.6
    beta_decay_rate: float = 0.01
    gamma: float = 0.95
    # The listener's action never steers which description it sees next, so
    # continuation value through other events' transmissions is noise to it;
    # by default it learns myopically from the task-outcome reward alone.
    listener_gamma: float = 0.0
    epsilon_start: float = 1.0
    epsilon_min: float = 0.05
    epsilon_decay: float = 0.9995
    episodes_per_step: int = 10_000
    verify_trials: int = 3
    extraction_ratio: float = 0.9  # candidates need Q >= ratio * max
    plateau_window: int = 500
    plateau_tol: float = 1e-3
    track_every: int = 10  # convergence sampling period, in episodes

    def __post_init__(self) -> None:
        if not (0.0 < self.beta <= 1.0):
            raise ValueError("beta must lie in (0, 1]")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")
        if self.epsilon_min > self.epsilon_start:
            raise ValueError("epsilon schedule must be non-increasing")

    def epsilon_at(self, episode: int) -> float:
        return max(self.epsilon_min, self.epsilon_start * self.epsilon_decay**episode)

    def beta_at(self, episode: int, budget: int | None = None) -> float:
        warm = self.beta_warm_frac * (budget if budget is not None else self.episodes_per_step)
        if episode < warm:
            return self.beta
        return self.beta / (1.0 + self.beta_decay_rate * (episode - warm))


@dataclass
class SpeakerSpaces:
    step: int
    n_states: int  # all events
    actions: tuple[BeliefTuple, ...]
    valid_actions: np.ndarray  # selectable action indices (structural legality)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def key_count(self) -> int:
        return self.n_states * self.n_actions


@dataclass
class ListenerSpaces:
    step: int
    states: tuple[BeliefTuple, ...]  # the speaker's action tuples
    actions: tuple[BeliefId, ...]
    _valid_per_state: tuple[np.ndarray, ...] = field(repr=False)
    _excluded_keys: int = 0  # state/action collisions carved out of the space

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def key_count(self) -> int:
        return self.n_states * self.n_actions - self._excluded_keys

    def valid_actions(self, state_idx: int) -> np.ndarray:
        return self._valid_per_state[state_idx]


def build_spaces(
    l: int, scenario: Scenario, prior_hierarchy: set[BeliefTuple] | frozenset[BeliefTuple]
) -> tuple[SpeakerSpaces, ListenerSpaces]:
    """State/action spaces for curriculum step l."""
    beliefs = scenario.belief_set.all_beliefs()
    n_events = scenario.n_events
    if l < 1:
        raise ValueError("curriculum steps start at 1")

    if l == 1:
        if prior_hierarchy:
            raise ValueError("step 1 takes no prior hierarchy")
        actions = tuple((b,) for b in beliefs)
        # Only a level-1/level-2 pair can complete to a legal description.
        valid = np.array(
            [i for i, b in enumerate(beliefs) if b.level <= 2], dtype=np.intp
        )
        speaker = SpeakerSpaces(step=1, n_states=n_events, actions=actions, valid_actions=valid)

        listener_actions = beliefs
        level_idx = {
            k: np.array(
                [i for i, b in enumerate(beliefs) if b.level == k], dtype=np.intp
            )
            for k in (1, 2)
        }
        empty = np.array([], dtype=np.intp)
        per_state = []
        for (b,) in actions:
            if b.level == 1:
                per_state.append(level_idx[2])
            elif b.level == 2:
                per_state.append(level_idx[1])
            else:
                per_state.append(empty)  # unreachable: the speaker never sends these
        listener = ListenerSpaces(
            step=1,
            states=actions,
            actions=listener_actions,
            _valid_per_state=tuple(per_state),
            _excluded_keys=len(actions),  # the state's own belief is never an action
        )
        return speaker, listener

    if not prior_hierarchy:
        raise ValueError(f"step {l} needs a non-empty prior hierarchy output")
    tuples = tuple(sorted(prior_hierarchy))
    if any(len(t) != l for t in tuples):
        raise ValueError(f"prior hierarchy tuples must have length {l}")
    speaker = SpeakerSpaces(
        step=l,
        n_states=n_events,
        actions=tuples,
        valid_actions=np.arange(len(tuples), dtype=np.intp),
    )

    identified = {b for t in tuples for b in t}
    pool = tuple(b for b in beliefs if b not in identified)
    next_level = np.array(
        [i for i, b in enumerate(pool) if b.level == l + 1], dtype=np.intp
    )
    listener = ListenerSpaces(
        step=l,
        states=tuples,
        actions=pool,
        _valid_per_state=tuple(next_level for _ in tuples),
    )
    return speaker, listener


class QTable:
    """Dense table over one agent's (state, action) cross-product."""

    def __init__(self, n_states: int, n_actions: int, key_count: int | None = None):
        self.q = np.zeros((n_states, n_actions))
        self.visits = np.zeros((n_states, n_actions), dtype=np.int64)
        self.key_count = key_count if key_count is not None else n_states * n_actions

    def max_q(self, state: int, candidates: np.ndarray) -> float:
        if candidates.size == 0:
            return 0.0
        return float(self.q[state, candidates].max())

    def greedy(self, state: int, candidates: np.ndarray) -> int:
        if candidates.size == 0:
            raise ValueError(f"state {state} has no selectable action")
        row = self.q[state, candidates]
        return int(candidates[int(np.argmax(row))])


def select_action(
    table: QTable,
    state: int,
    candidates: np.ndarray,
    epsilon: float,
    rng: np.random.Generator,
) -> int:
    """Epsilon-greedy over the candidate actions; greedy ties break to the
    lowest action index."""
    if not 0 <= state < table.q.shape[0]:
        raise ValueError(f"unknown state {state}")
    if candidates.size == 0:
        raise ValueError(f"state {state} has no selectable action")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(candidates[int(rng.integers(candidates.size))])
    return table.greedy(state, candidates)


def update_q(
    table: QTable,
    state: int,
    action: int,
    reward: float,
    next_state: int | None,
    cfg: LearnConfig,
    next_candidates: np.ndarray | None = None,
    gamma: float | None = None,
    beta: float | None = None,
) -> None:
    """One Q-learning update; terminal transitions bootstrap zero."""
    if next_state is None:
        bootstrap = 0.0
    else:
        cands = (
            next_candidates
            if next_candidates is not None
            else np.arange(table.q.shape[1], dtype=np.intp)
        )
        bootstrap = table.max_q(next_state, cands)
    apply_td(
        table, state, action, reward, bootstrap,
        beta=cfg.beta if beta is None else beta,
        gamma=cfg.gamma if gamma is None else gamma,
    )


def apply_td(
    table: QTable, state: int, action: int, reward: float, bootstrap: float,
    beta: float, gamma: float,
) -> None:
    q = table.q[state, action]
    table.q[state, action] = q + beta * (reward + gamma * bootstrap - q)
    table.visits[state, action] += 1


def speaker_reward(outcome: SlotOutcome, next_kind: EventKind, task: TaskSpec) -> float:
    """Transmission cost and belief usage always count against the speaker;
    finishing the task pays its reward, restarting it pays the delay cost."""
    base = -outcome.speaker_cost - outcome.tx_belief_count
    if next_kind == EventKind.FINAL:
        return base + task.reward
    if next_kind == EventKind.INITIAL:
        return base - task.delay_cost
    return base


def listener_reward(outcome: SlotOutcome, next_kind: EventKind, task: TaskSpec) -> float:
    if next_kind == EventKind.FINAL:
        return -outcome.listener_cost + task.reward
    if next_kind == EventKind.INITIAL:
        return -outcome.listener_cost - task.delay_cost
    return -outcome.listener_cost
