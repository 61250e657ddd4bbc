"""Episode engine.

Realizes one slot of the speaker-listener loop: the speaker transmits part
of a description, the listener completes it, the completed set either
reconstructs the observed event exactly (iff it is a perfect descriptor) or
yields a uniformly random wrong event, and the environment then transitions
through the success matrix or the failure matrix accordingly.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .scenario import (
    BeliefId,
    EventKind,
    Scenario,
    TaskSpec,
    validate_descriptor_structure,
)


@dataclass(frozen=True)
class Description:
    """Transmitted beliefs plus inferred beliefs; the parts never overlap."""

    speaker_part: frozenset[BeliefId]
    listener_part: frozenset[BeliefId]

    def __post_init__(self) -> None:
        if self.speaker_part & self.listener_part:
            raise ValueError("speaker and listener parts must be disjoint")

    def completed(self) -> frozenset[BeliefId]:
        return self.speaker_part | self.listener_part


@dataclass
class SlotOutcome:
    observed: int
    reconstructed: int
    description: Description
    speaker_cost: float
    listener_cost: float
    total_cost: float
    tx_belief_count: int
    next_event: int
    next_kind_signal: EventKind


class EpisodeStatus:
    RUNNING = "running"
    SUCCESS = "success"  # a final event was observed
    CAPPED = "capped"  # slot cap hit first; counts as a failure


@dataclass
class EpisodeState:
    episode_index: int
    slot_index: int
    task_id: int
    current_event: int
    elapsed_slots: int
    alpha: float
    slot_cap: int
    status: str = EpisodeStatus.RUNNING

    @property
    def terminal(self) -> bool:
        return self.status != EpisodeStatus.RUNNING

    @property
    def execution_time(self) -> int:
        """Slots used by the episode; the closing final observation counts."""
        return self.elapsed_slots + (1 if self.status == EpisodeStatus.SUCCESS else 0)


class SemanticEnv:
    """Scenario plus the sampling caches needed to run episodes fast."""

    def __init__(self, scenario: Scenario, alpha: float = 0.5, slot_cap_factor: float = 10.0):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        self.scenario = scenario
        self.alpha = alpha
        self.slot_cap_factor = slot_cap_factor
        self.n_events = scenario.n_events
        self._kinds = scenario.kinds
        self._tx = scenario.belief_set.tx_cost
        self._infer = scenario.belief_set.infer_cost
        self._perfect = scenario.perfect_sets
        self._good = _RowSampler(scenario.transitions.p_good)
        self._bad = _RowSampler(scenario.transitions.p_bad)

    def kind_of(self, event: int) -> EventKind:
        return self._kinds[event]

    def slot_cap_for(self, task: TaskSpec) -> int:
        return int(self.slot_cap_factor * task.max_len)

    def start_episode(self, episode_index: int, task_id: int) -> EpisodeState:
        task = self.scenario.task_by_id(task_id)
        return EpisodeState(
            episode_index=episode_index,
            slot_index=1,
            task_id=task_id,
            current_event=task.initial_event,
            elapsed_slots=0,
            alpha=self.alpha,
            slot_cap=self.slot_cap_for(task),
        )

    def reconstruct_event(
        self, observed: int, description: Description, rng: np.random.Generator
    ) -> int:
        """The observed event iff the completed description is perfect for it,
        otherwise a uniform draw over every other event."""
        if description.completed() in self._perfect[observed]:
            return observed
        wrong = int(rng.integers(self.n_events - 1))
        return wrong + 1 if wrong >= observed else wrong

    def step_transition(self, current: int, reconstructed: int, rng: np.random.Generator) -> int:
        sampler = self._good if reconstructed == current else self._bad
        return sampler.sample(current, rng)

    def run_slot(
        self,
        state: EpisodeState,
        speaker_part: frozenset[BeliefId],
        listener_part: frozenset[BeliefId],
        rng: np.random.Generator,
        strict: bool = False,
    ) -> tuple[SlotOutcome, EpisodeState]:
        if state.terminal:
            raise ValueError("episode already terminal")
        description = Description(speaker_part, listener_part)
        if strict and not validate_descriptor_structure(
            description.completed(), self.scenario.belief_set
        ):
            raise ValueError("structurally invalid completed description")

        speaker_cost = sum(self._tx[b] for b in speaker_part)
        listener_cost = sum(self._infer[b] for b in listener_part)
        total = self.alpha * speaker_cost + (1.0 - self.alpha) * listener_cost

        observed = state.current_event
        reconstructed = self.reconstruct_event(observed, description, rng)
        next_event = self.step_transition(observed, reconstructed, rng)

        outcome = SlotOutcome(
            observed=observed,
            reconstructed=reconstructed,
            description=description,
            speaker_cost=speaker_cost,
            listener_cost=listener_cost,
            total_cost=total,
            tx_belief_count=len(speaker_part),
            next_event=next_event,
            next_kind_signal=self._kinds[next_event],
        )

        state.current_event = next_event
        state.elapsed_slots += 1
        state.slot_index += 1
        if self._kinds[next_event] == EventKind.FINAL:
            state.status = EpisodeStatus.SUCCESS
        elif state.elapsed_slots >= state.slot_cap:
            state.status = EpisodeStatus.CAPPED
        return outcome, state


class _RowSampler:
    """Per-row inverse-CDF samplers over the nonzero entries."""

    def __init__(self, matrix: np.ndarray):
        self.rows: list[tuple[list[int], list[float]]] = []
        for row in matrix:
            idx = np.nonzero(row)[0]
            cum = np.cumsum(row[idx])
            cum[-1] = 1.0  # guard against float droop in the last bucket
            self.rows.append((idx.tolist(), cum.tolist()))

    def sample(self, row: int, rng: np.random.Generator) -> int:
        idx, cum = self.rows[row]
        if len(idx) == 1:
            return idx[0]
        return idx[bisect_left(cum, rng.random())]


# ---------------------------------------------------------------------------
# Episode logging
# ---------------------------------------------------------------------------

LOG_HEADER = (
    "m,n,task,observed,reconstructed,tx_count,infer_count,"
    "speaker_cost,listener_cost,total_cost,success_flag,tag"
)


@dataclass
class EpisodeRecord:
    """One finished episode as seen by the metrics layer."""

    m: int
    task: int
    slots: int
    execution_time: int
    speaker_cost_sum: float
    listener_cost_sum: float
    total_cost_sum: float
    tx_count_sum: int
    reached_final: bool


class EpisodeLog:
    """Per-slot record of a run; the single source for all metrics.

    Slot rows optionally retain the transmitted/inferred parts so the
    description constraints can be audited after the fact.
    """

    def __init__(self, record_parts: bool = True):
        self.record_parts = record_parts
        self.rows: list[tuple] = []  # (m, n, task, obs, rec, ntx, ninf, cs, cl, ct, success)
        self.parts: list[tuple[tuple[BeliefId, ...], tuple[BeliefId, ...]]] = []
        self._episode_bounds: list[tuple[int, int, int, bool]] = []  # (m, task, start_row, success)
        self._open_start: int | None = None

    def append_slot(self, state_m: int, slot_n: int, task: int, outcome: SlotOutcome) -> None:
        if self._open_start is None:
            self._open_start = len(self.rows)
        success = outcome.next_kind_signal == EventKind.FINAL
        self.rows.append(
            (
                state_m,
                slot_n,
                task,
                outcome.observed,
                outcome.reconstructed,
                outcome.tx_belief_count,
                len(outcome.description.listener_part),
                outcome.speaker_cost,
                outcome.listener_cost,
                outcome.total_cost,
                1 if success else 0,
            )
        )
        if self.record_parts:
            self.parts.append(
                (
                    tuple(sorted(outcome.description.speaker_part)),
                    tuple(sorted(outcome.description.listener_part)),
                )
            )

    def close_episode(self, m: int, task: int, success: bool) -> None:
        start = self._open_start if self._open_start is not None else len(self.rows)
        self._episode_bounds.append((m, task, start, success))
        self._open_start = None

    @property
    def n_slots(self) -> int:
        return len(self.rows)

    @property
    def n_episodes(self) -> int:
        return len(self._episode_bounds)

    def episodes(self) -> Iterator[EpisodeRecord]:
        for i, (m, task, start, success) in enumerate(self._episode_bounds):
            end = (
                self._episode_bounds[i + 1][2]
                if i + 1 < len(self._episode_bounds)
                else len(self.rows)
            )
            slots = end - start
            cs = sum(self.rows[r][7] for r in range(start, end))
            cl = sum(self.rows[r][8] for r in range(start, end))
            ct = sum(self.rows[r][9] for r in range(start, end))
            ntx = sum(self.rows[r][5] for r in range(start, end))
            yield EpisodeRecord(
                m=m,
                task=task,
                slots=slots,
                execution_time=slots + (1 if success else 0),
                speaker_cost_sum=cs,
                listener_cost_sum=cl,
                total_cost_sum=ct,
                tx_count_sum=ntx,
                reached_final=success,
            )

    def iter_rows_with_parts(
        self,
    ) -> Iterator[tuple[tuple, tuple[tuple[BeliefId, ...], tuple[BeliefId, ...]]]]:
        if not self.record_parts:
            raise ValueError("this log did not record description parts")
        return iter(zip(self.rows, self.parts))

    def to_csv(self, path, tag: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(LOG_HEADER + "\n")
            for row in self.rows:
                m, n, task, obs, rec, ntx, ninf, cs, cl, ct, success = row
                fh.write(
                    f"{m},{n},{task},{obs},{rec},{ntx},{ninf},{cs!r},{cl!r},{ct!r},{success},{tag}\n"
                )

    @classmethod
    def from_csv(cls, path) -> "EpisodeLog":
        """Rebuild a log from its CSV form (description parts are not
        persisted, so the result supports metrics but not constraint audits)."""
        log = cls(record_parts=False)
        open_m: int | None = None
        open_task = 0
        succeeded = False
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            if header != LOG_HEADER:
                raise ValueError(f"unexpected episode log header: {header!r}")
            for line in fh:
                f = line.rstrip("\n").split(",")
                m, n, task = int(f[0]), int(f[1]), int(f[2])
                if open_m is not None and m != open_m:
                    log.close_episode(open_m, open_task, succeeded)
                    succeeded = False
                if log._open_start is None:
                    log._open_start = len(log.rows)
                open_m, open_task = m, task
                success = int(f[10])
                succeeded = succeeded or bool(success)
                log.rows.append(
                    (m, n, task, int(f[3]), int(f[4]), int(f[5]), int(f[6]),
                     float(f[7]), float(f[8]), float(f[9]), success)
                )
        if open_m is not None:
            log.close_episode(open_m, open_task, succeeded)
        return log


PartsPolicy = Callable[[int], tuple[frozenset[BeliefId], frozenset[BeliefId]]]


def run_policy_episodes(
    env: SemanticEnv,
    policy: PartsPolicy,
    n_episodes: int,
    rng: np.random.Generator,
    log: EpisodeLog,
    task_ids: Iterable[int] | None = None,
    start_m: int = 1,
) -> None:
    """Roll out a fixed (non-learning) per-event policy, round-robin over tasks."""
    ids = list(task_ids) if task_ids is not None else [t.id for t in env.scenario.tasks]
    for i in range(n_episodes):
        m = start_m + i
        state = env.start_episode(m, ids[i % len(ids)])
        while not state.terminal:
            speaker_part, listener_part = policy(state.current_event)
            outcome, state = env.run_slot(state, speaker_part, listener_part, rng)
            log.append_slot(m, state.slot_index - 1, state.task_id, outcome)
        log.close_episode(m, state.task_id, state.status == EpisodeStatus.SUCCESS)


def oracle_policy(scenario: Scenario) -> PartsPolicy:
    """Ground-truth policy: always play the cheapest perfect descriptor,
    transmitting all but the deepest belief and inferring the last one."""
    choice: dict[int, tuple[frozenset[BeliefId], frozenset[BeliefId]]] = {}
    for e, descs in scenario.perfect_map.items():
        best = min(
            descs, key=lambda d: (sum(scenario.belief_set.tx_cost[b] for b in d.beliefs), str(d))
        )
        choice[e] = (frozenset(best.beliefs[:-1]), frozenset(best.beliefs[-1:]))
    return lambda event: choice[event]
