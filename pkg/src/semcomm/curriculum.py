"""Bottom-up curriculum over the belief hierarchy.

Step l trains a fresh speaker/listener pair whose joint actions extend the
previous step's compatible tuples by one belief. After training, speaker
actions whose Q-value is near the per-event maximum (and positive) are
paired with the listener's greedy completion and certified against the
reconstruction oracle; certified descriptors feed the next step's action
space. The loop ends when no beliefs remain to place, a step certifies
nothing new, or no structurally legal completion exists.

Events solved at an earlier step replay their stored descriptor greedily
and receive no updates, so each step's exploration budget goes to the
frontier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .agents import (
    BeliefTuple,
    LearnConfig,
    ListenerSpaces,
    QTable,
    SpeakerSpaces,
    apply_td,
    build_spaces,
    listener_reward,
    select_action,
    speaker_reward,
)
from .environment import Description, EpisodeLog, EpisodeStatus, SemanticEnv
from .rng import RngBundle
from .scenario import BeliefId, EventKind, PerfectDescriptor, Scenario


class UnsolvableScenarioError(RuntimeError):
    """Step 1 exhausted its budget without certifying a single descriptor."""


@dataclass
class ConvergenceSeries:
    """Greedy-Q trajectories sampled during one step's training."""

    episodes: list[int] = field(default_factory=list)
    mid_extracted: list[float] = field(default_factory=list)
    init_extracted: list[float] = field(default_factory=list)
    mid_all: list[float] = field(default_factory=list)
    init_all: list[float] = field(default_factory=list)


@dataclass
class StepLog:
    step: int
    episodes_run: int
    skipped: bool
    n_new_event_outputs: int
    n_new_hierarchy: int
    speaker_key_count: int
    listener_key_count: int
    hierarchy_size: int  # |speaker actions| at this step
    listener_pool: int
    convergence: ConvergenceSeries = field(default_factory=ConvergenceSeries)
    plateau_mid: int | None = None
    plateau_init: int | None = None


@dataclass
class CurriculumState:
    remaining: set[BeliefId]
    step: int = 0
    hierarchy_out: dict[int, frozenset[BeliefTuple]] = field(default_factory=dict)
    event_out: dict[int, set[PerfectDescriptor]] = field(default_factory=dict)
    replay: dict[int, tuple[frozenset[BeliefId], frozenset[BeliefId]]] = field(
        default_factory=dict
    )
    step_logs: list[StepLog] = field(default_factory=list)
    unsolvable: bool = False

    @classmethod
    def fresh(cls, scenario: Scenario) -> "CurriculumState":
        return cls(remaining=set(scenario.belief_set.all_beliefs()))

    def dead_beliefs(self) -> set[BeliefId]:
        return set(self.remaining)


def run_cl_step(
    l: int,
    cs: CurriculumState,
    env: SemanticEnv,
    cfg: LearnConfig,
    rngs: RngBundle,
    log: EpisodeLog,
    episode_offset: int = 0,
) -> CurriculumState:
    """Train step l, certify its outputs, and fold them into the state."""
    scenario = env.scenario
    prior = cs.hierarchy_out.get(l - 1, frozenset()) if l >= 2 else frozenset()
    speaker, listener = build_spaces(l, scenario, set(prior))

    step_log = StepLog(
        step=l,
        episodes_run=0,
        skipped=False,
        n_new_event_outputs=0,
        n_new_hierarchy=0,
        speaker_key_count=speaker.key_count,
        listener_key_count=listener.key_count,
        hierarchy_size=speaker.n_actions,
        listener_pool=listener.n_actions,
    )

    if all(listener.valid_actions(i).size == 0 for i in range(listener.n_states)):
        # No legal completion exists at this depth; running episodes would
        # only log malformed descriptions. The step certifies nothing.
        step_log.skipped = True
        cs.step = l
        cs.step_logs.append(step_log)
        return cs

    q_speaker = QTable(speaker.n_states, speaker.n_actions, speaker.key_count)
    q_listener = QTable(listener.n_states, listener.n_actions, listener.key_count)

    speaker_parts = [frozenset(t) for t in speaker.actions]
    listener_parts = [frozenset((b,)) for b in listener.actions]
    empty: frozenset[BeliefId] = frozenset()
    tasks = scenario.tasks
    tracked = np.array(
        [
            e.index
            for e in scenario.events
            if e.kind != EventKind.FINAL and e.index not in cs.replay
        ],
        dtype=np.intp,
    )
    tracked_kind = [scenario.kinds[e] for e in tracked.tolist()]
    mid_mask = np.array([k == EventKind.INTERMEDIARY for k in tracked_kind])
    init_mask = np.array([k == EventKind.INITIAL for k in tracked_kind])
    raw_samples: list[np.ndarray] = []

    for ep in range(cfg.episodes_per_step):
        m = episode_offset + ep + 1
        epsilon = cfg.epsilon_at(ep)
        beta = cfg.beta_at(ep)
        task = tasks[(m - 1) % len(tasks)]
        state = env.start_episode(m, task.id)
        pending: tuple[int, int, float] | None = None  # listener (state, action, reward)

        while not state.terminal:
            e = state.current_event
            replayed = cs.replay.get(e)
            if replayed is not None:
                sp, lp = replayed
                a_s = a_l = -1
            else:
                a_s = select_action(q_speaker, e, speaker.valid_actions, epsilon, rngs.speaker)
                cands = listener.valid_actions(a_s)
                a_l = select_action(q_listener, a_s, cands, epsilon, rngs.listener)
                sp = speaker_parts[a_s]
                lp = listener_parts[a_l]

            outcome, state = env.run_slot(state, sp, lp, rngs.env, strict=True)
            log.append_slot(m, state.slot_index - 1, task.id, outcome)
            learning = replayed is None

            if pending is not None:
                # The listener's next state is this slot's transmitted tuple;
                # replayed transmissions live outside the step's state space.
                boot = 0.0
                if learning and cfg.listener_gamma > 0.0:
                    boot = q_listener.max_q(a_s, listener.valid_actions(a_s))
                apply_td(
                    q_listener, pending[0], pending[1], pending[2], boot,
                    beta=beta, gamma=cfg.listener_gamma,
                )
                pending = None

            if learning:
                kind = outcome.next_kind_signal
                r_s = speaker_reward(outcome, kind, task)
                r_l = listener_reward(outcome, kind, task)
                boot_s = (
                    0.0
                    if state.terminal
                    else q_speaker.max_q(outcome.next_event, speaker.valid_actions)
                )
                apply_td(q_speaker, e, a_s, r_s, boot_s, beta=beta, gamma=cfg.gamma)
                pending = (a_s, a_l, r_l)

        if pending is not None:
            apply_td(
                q_listener, pending[0], pending[1], pending[2], 0.0,
                beta=beta, gamma=cfg.listener_gamma,
            )
        log.close_episode(m, task.id, state.status == EpisodeStatus.SUCCESS)
        step_log.episodes_run += 1

        if ep % cfg.track_every == 0 and tracked.size:
            conv = step_log.convergence
            conv.episodes.append(ep)
            greedy = q_speaker.q[np.ix_(tracked, speaker.valid_actions)].max(axis=1)
            mid = greedy[mid_mask]
            init = greedy[init_mask]
            conv.mid_all.append(float(mid.mean()) if mid.size else 0.0)
            conv.init_all.append(float(init.mean()) if init.size else 0.0)
            raw_samples.append(greedy.astype(np.float32))

    event_out, hierarchy_out, best_split = extract_outputs(
        l, q_speaker, q_listener, speaker, listener, env, cfg, rngs.probe, set(cs.replay)
    )

    if tracked.size:
        extracted = np.array([int(e) in event_out for e in tracked.tolist()])
        conv = step_log.convergence
        mid_x = mid_mask & extracted
        init_x = init_mask & extracted
        for sample in raw_samples:
            conv.mid_extracted.append(float(sample[mid_x].mean()) if mid_x.any() else 0.0)
            conv.init_extracted.append(float(sample[init_x].mean()) if init_x.any() else 0.0)

    for e, descs in event_out.items():
        cs.event_out.setdefault(e, set()).update(descs)
        cs.replay[e] = best_split[e]
    cs.hierarchy_out[l] = frozenset(hierarchy_out)
    newly_placed = {b for t in hierarchy_out for b in t}
    cs.remaining -= newly_placed
    cs.step = l

    step_log.n_new_event_outputs = sum(len(d) for d in event_out.values())
    step_log.n_new_hierarchy = len(hierarchy_out)
    cs.step_logs.append(step_log)

    if l == 1 and not hierarchy_out:
        raise UnsolvableScenarioError(
            "step 1 certified no descriptors; the scenario offers nothing to learn"
        )
    return cs


def extract_outputs(
    l: int,
    q_speaker: QTable,
    q_listener: QTable,
    speaker: SpeakerSpaces,
    listener: ListenerSpaces,
    env: SemanticEnv,
    cfg: LearnConfig,
    probe_rng: np.random.Generator,
    solved: set[int],
) -> tuple[
    dict[int, set[PerfectDescriptor]],
    set[BeliefTuple],
    dict[int, tuple[frozenset[BeliefId], frozenset[BeliefId]]],
]:
    """Certified step outputs.

    Candidates are near-max positive speaker actions paired with the
    listener's greedy completion; each candidate must survive probe
    reconstructions before it counts. Certification consults the simulator's
    ground truth only to accept or reject outputs, never to train.
    """
    scenario = env.scenario
    event_out: dict[int, set[PerfectDescriptor]] = {}
    best_split: dict[int, tuple[frozenset[BeliefId], frozenset[BeliefId]]] = {}
    hierarchy: set[BeliefTuple] = set()

    for e in range(scenario.n_events):
        if e in solved or scenario.kinds[e] == EventKind.FINAL:
            continue
        row = q_speaker.q[e, speaker.valid_actions]
        if row.size == 0:
            continue
        vmax = float(row.max())
        if vmax <= 0.0:
            continue
        threshold = cfg.extraction_ratio * vmax
        best_q = -np.inf
        for idx in np.nonzero(row >= threshold)[0]:
            a_s = int(speaker.valid_actions[int(idx)])
            cands = listener.valid_actions(a_s)
            if cands.size == 0:
                continue
            a_l = q_listener.greedy(a_s, cands)
            sp = frozenset(speaker.actions[a_s])
            lp = frozenset((listener.actions[a_l],))
            desc_beliefs = tuple(sorted(sp | lp))
            ok = all(
                env.reconstruct_event(e, Description(sp, lp), probe_rng) == e
                for _ in range(cfg.verify_trials)
            )
            if not ok:
                continue
            descriptor = PerfectDescriptor(desc_beliefs)
            event_out.setdefault(e, set()).add(descriptor)
            hierarchy.add(desc_beliefs)
            q_val = float(q_speaker.q[e, a_s])
            if q_val > best_q:
                best_q = q_val
                best_split[e] = (sp, lp)

    return event_out, hierarchy, best_split


def run_curriculum(
    scenario: Scenario,
    cfg: LearnConfig,
    rngs: RngBundle,
    alpha: float = 0.5,
    slot_cap_factor: float = 10.0,
    window_cap_factor: float = 3.0,
    log: EpisodeLog | None = None,
    max_steps: int | None = None,
) -> tuple[CurriculumState, "analysis.MetricsReport"]:
    """Run curriculum steps until nothing remains to place, a step adds no
    new hierarchy tuples, or the step index hits its hard bound."""
    env = SemanticEnv(scenario, alpha=alpha, slot_cap_factor=slot_cap_factor)
    log = log if log is not None else EpisodeLog()
    cs = CurriculumState.fresh(scenario)
    hard_cap = scenario.belief_set.total_count - 1
    if max_steps is not None:
        hard_cap = min(hard_cap, max_steps)

    l = 1
    episode_offset = 0
    while cs.remaining and l <= hard_cap:
        if l >= 2 and not cs.hierarchy_out.get(l - 1):
            break
        try:
            cs = run_cl_step(l, cs, env, cfg, rngs, log, episode_offset=episode_offset)
        except UnsolvableScenarioError:
            cs.unsolvable = True
            break
        episode_offset += cs.step_logs[-1].episodes_run
        if not cs.hierarchy_out.get(l):
            break
        l += 1

    report = analysis.compute_metrics(
        log, scenario, alpha=alpha, gamma=cfg.gamma, window_cap_factor=window_cap_factor
    )
    return cs, report
