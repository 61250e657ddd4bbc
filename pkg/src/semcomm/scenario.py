"""World definition: belief hierarchy, events, tasks and transition matrices.

A scenario is the immutable ground truth an experiment runs against. The
generator builds, from a small config, a belief hierarchy with per-level
transmission/inference costs, a set of tasks with disjoint event chains,
the map of perfect descriptors for every event, and the two transition
matrices (correct-reconstruction vs failed-reconstruction dynamics).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class ScenarioConfigError(ValueError):
    """Config cannot produce a valid scenario."""


class ScenarioError(ValueError):
    """A scenario object violates its own invariants."""


class BeliefId(NamedTuple):
    level: int
    index: int

    def __str__(self) -> str:  # "b2.3" style, used in file formats and CSVs
        return f"b{self.level}.{self.index}"


def parse_belief_id(text: str) -> BeliefId:
    body = text.lstrip("b")
    level, _, index = body.partition(".")
    return BeliefId(int(level), int(index))


class EventKind(str, Enum):
    INITIAL = "initial"
    INTERMEDIARY = "intermediary"
    FINAL = "final"


class Event(NamedTuple):
    index: int
    kind: EventKind


@dataclass(frozen=True)
class PerfectDescriptor:
    """A hierarchical belief subset sufficient to reconstruct an event.

    One belief per level, levels 1..depth with no gaps, depth >= 2.
    """

    beliefs: tuple[BeliefId, ...]

    def __post_init__(self) -> None:
        levels = [b.level for b in self.beliefs]
        if levels != list(range(1, len(levels) + 1)):
            raise ScenarioError(f"descriptor levels must be 1..K_h contiguous, got {levels}")
        if len(self.beliefs) < 2:
            raise ScenarioError("a perfect descriptor needs at least two beliefs")

    @property
    def depth(self) -> int:
        return len(self.beliefs)

    def as_set(self) -> frozenset[BeliefId]:
        return frozenset(self.beliefs)

    def __str__(self) -> str:
        return "+".join(str(b) for b in self.beliefs)


@dataclass
class BeliefSet:
    """The leveled common language with per-belief costs.

    levels[k-1] holds the BeliefIds of level k; tx_cost is what the speaker
    pays to transmit a belief, infer_cost what the listener pays to add it.
    """

    levels: tuple[tuple[BeliefId, ...], ...]
    tx_cost: dict[BeliefId, float]
    infer_cost: dict[BeliefId, float]

    _ordered: tuple[BeliefId, ...] = field(init=False, repr=False, compare=False)
    _global_index: dict[BeliefId, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        seen: set[BeliefId] = set()
        for k, level in enumerate(self.levels, start=1):
            for b in level:
                if b.level != k:
                    raise ScenarioError(f"belief {b} stored at level {k}")
                if b in seen:
                    raise ScenarioError(f"belief {b} appears in two levels")
                seen.add(b)
        for b in seen:
            if b not in self.tx_cost or b not in self.infer_cost:
                raise ScenarioError(f"belief {b} missing a cost entry")
            if self.tx_cost[b] <= 0 or self.infer_cost[b] <= 0:
                raise ScenarioError(f"belief {b} has a non-positive cost")
        self._ordered = tuple(b for level in self.levels for b in level)
        self._global_index = {b: i for i, b in enumerate(self._ordered)}

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def total_count(self) -> int:
        return len(self._ordered)

    def level_sizes(self) -> tuple[int, ...]:
        return tuple(len(level) for level in self.levels)

    def all_beliefs(self) -> tuple[BeliefId, ...]:
        """Canonical level-major ordering; defines global action indices."""
        return self._ordered

    def global_index(self, b: BeliefId) -> int:
        return self._global_index[b]


@dataclass
class TaskSpec:
    """One task: its event chain, length distribution, reward and delay cost."""

    id: int
    tec: tuple[int, ...]
    max_len: int
    length_pmf: tuple[float, ...]  # over lengths 3..max_len
    reward: float
    delay_cost: float

    def __post_init__(self) -> None:
        if self.max_len < 3:
            raise ScenarioError("a task needs at least 3 events")
        if len(self.tec) != self.max_len:
            raise ScenarioError("tec length must equal max_len")
        if len(self.length_pmf) != self.max_len - 2:
            raise ScenarioError("length_pmf must cover lengths 3..max_len")
        if abs(sum(self.length_pmf) - 1.0) > 1e-9:
            raise ScenarioError("length_pmf must sum to 1")

    @property
    def initial_event(self) -> int:
        return self.tec[0]

    @property
    def final_event(self) -> int:
        return self.tec[-1]

    def hazards(self) -> tuple[float, ...]:
        """Probability that the slot after TEC position j jumps to the final event."""
        return hazards_for_length(self.max_len)

    def expected_length(self) -> float:
        return sum(l * p for l, p in zip(range(3, self.max_len + 1), self.length_pmf))


def hazards_for_length(max_len: int) -> tuple[float, ...]:
    """Strictly increasing jump-to-final probabilities along a TEC.

    q_j = (j-1)/(max_len-2) for j = 1..max_len-1: episodes always pass the
    first intermediary (minimum length 3) and always terminate by max_len.
    The strict increase keeps the reward-bound denominators positive.
    """
    if max_len < 3:
        raise ScenarioError("max_len must be >= 3")
    span = max_len - 2
    return tuple((j - 1) / span for j in range(1, max_len))


def pmf_from_hazards(hazards: Sequence[float]) -> tuple[float, ...]:
    """Episode-length PMF over {3..max_len} induced by the hazard sequence."""
    pmf = []
    survive = 1.0
    for j, q in enumerate(hazards, start=1):
        if j == 1:
            survive *= 1.0 - q
            continue
        pmf.append(survive * q)
        survive *= 1.0 - q
    return tuple(pmf)


@dataclass
class TransitionModel:
    """Row-stochastic event dynamics: p_good when the listener reconstructed
    the observed event, p_bad otherwise."""

    p_good: np.ndarray
    p_bad: np.ndarray

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TransitionModel):
            return NotImplemented
        return np.array_equal(self.p_good, other.p_good) and np.array_equal(
            self.p_bad, other.p_bad
        )


@dataclass
class Scenario:
    belief_set: BeliefSet
    events: tuple[Event, ...]
    tasks: tuple[TaskSpec, ...]
    perfect_map: dict[int, frozenset[PerfectDescriptor]]
    transitions: TransitionModel
    rng_seed: int

    # Derived lookups, rebuilt on construction and excluded from equality.
    kinds: tuple[EventKind, ...] = field(init=False, repr=False, compare=False)
    perfect_sets: dict[int, frozenset[frozenset[BeliefId]]] = field(
        init=False, repr=False, compare=False
    )
    owner_task: dict[int, int] = field(init=False, repr=False, compare=False)
    tec_position: dict[int, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.kinds = tuple(e.kind for e in self.events)
        self.perfect_sets = {
            e: frozenset(d.as_set() for d in descs) for e, descs in self.perfect_map.items()
        }
        self.owner_task = {}
        self.tec_position = {}
        for task in self.tasks:
            for pos, e in enumerate(task.tec, start=1):
                self.owner_task[e] = task.id
                self.tec_position[e] = pos

    @property
    def n_events(self) -> int:
        return len(self.events)

    def events_of_kind(self, kind: EventKind) -> tuple[int, ...]:
        return tuple(e.index for e in self.events if e.kind == kind)

    def task_by_id(self, task_id: int) -> TaskSpec:
        for task in self.tasks:
            if task.id == task_id:
                return task
        raise ValueError(f"unknown task id {task_id}")

    def with_task_rewards(self, reward: float, delay_cost: float | None = None) -> "Scenario":
        """Copy of this scenario with every task's reward/delay cost replaced."""
        delay = reward if delay_cost is None else delay_cost
        tasks = tuple(replace(t, reward=reward, delay_cost=delay) for t in self.tasks)
        return replace(self, tasks=tasks)


@dataclass
class ScenarioConfig:
    """Generator knobs. Defaults reproduce the benchmark-scale world:
    22 beliefs over 4 levels, 120 events, 30 tasks of 3..6 events."""

    levels: tuple[int, ...] = (4, 5, 6, 7)
    events: int | None = 120
    tasks: int = 30
    len_min: int = 3
    len_max: int = 6
    descriptor_depth_max: int = 4
    second_descriptor_prob: float = 0.5
    cost_scale: float = 1.0  # level-k tx costs drawn from scale*[k, k+1]
    infer_cost_ratio: float = 0.5
    restart_mass: float = 0.2  # failure-transition mass on the ongoing task's initial event
    spread_coverage: float = 0.5  # failure rows touch at least this share of non-final events
    default_task_reward: float = 100.0

    def validate(self) -> None:
        if len(self.levels) < 2:
            raise ScenarioConfigError("the belief hierarchy needs at least 2 levels")
        if any(n < 1 for n in self.levels):
            raise ScenarioConfigError("every hierarchy level must be non-empty")
        if self.tasks < 1:
            raise ScenarioConfigError("need at least one task")
        if self.len_min < 3:
            raise ScenarioConfigError("tasks have at least 3 events (initial, mid, final)")
        if self.len_max < self.len_min:
            raise ScenarioConfigError("len_max < len_min")
        if not (2 <= self.descriptor_depth_max <= len(self.levels)):
            raise ScenarioConfigError("descriptor depth must lie in [2, number of levels]")
        if self.events is not None:
            lo = self.tasks * self.len_min
            hi = self.tasks * self.len_max
            if not (lo <= self.events <= hi):
                raise ScenarioConfigError(
                    f"events={self.events} cannot be split into {self.tasks} chains of "
                    f"{self.len_min}..{self.len_max} events"
                )
        if not (0.0 < self.restart_mass < 1.0):
            raise ScenarioConfigError("restart_mass must be in (0, 1)")
        if not (0.0 < self.infer_cost_ratio):
            raise ScenarioConfigError("infer_cost_ratio must be positive")


def validate_descriptor_structure(beliefs: Iterable[BeliefId], belief_set: BeliefSet) -> bool:
    """True iff the set has at most one belief per level and occupied levels
    form a prefix 1..k (a level k+1 belief requires one at level k)."""
    per_level: dict[int, int] = {}
    for b in beliefs:
        per_level[b.level] = per_level.get(b.level, 0) + 1
    if any(count > 1 for count in per_level.values()):
        return False
    if not per_level:
        return True
    top = max(per_level)
    return top <= belief_set.num_levels and all(k in per_level for k in range(1, top + 1))


def lookup_perfect(event: int, scenario: Scenario) -> frozenset[PerfectDescriptor]:
    if event not in scenario.perfect_map:
        raise ValueError(f"unknown event id {event}")
    return scenario.perfect_map[event]


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def generate_scenario(cfg: ScenarioConfig, seed: int) -> Scenario:
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))

    belief_set = _generate_beliefs(cfg, rng)
    lengths = _draw_task_lengths(cfg, rng)
    events, tecs = _allocate_events(lengths)
    perfect_map = _assign_descriptors(cfg, belief_set, events, tecs, rng)
    transitions = _build_transitions(cfg, events, tecs, rng)

    tasks = []
    for tid, tec in enumerate(tecs):
        max_len = len(tec)
        tasks.append(
            TaskSpec(
                id=tid,
                tec=tuple(tec),
                max_len=max_len,
                length_pmf=pmf_from_hazards(hazards_for_length(max_len)),
                reward=cfg.default_task_reward,
                delay_cost=cfg.default_task_reward,
            )
        )

    scenario = Scenario(
        belief_set=belief_set,
        events=tuple(events),
        tasks=tuple(tasks),
        perfect_map=perfect_map,
        transitions=transitions,
        rng_seed=seed,
    )
    validate_scenario(scenario)
    return scenario


def _generate_beliefs(cfg: ScenarioConfig, rng: np.random.Generator) -> BeliefSet:
    levels = []
    tx: dict[BeliefId, float] = {}
    infer: dict[BeliefId, float] = {}
    for k, size in enumerate(cfg.levels, start=1):
        row = tuple(BeliefId(k, u) for u in range(1, size + 1))
        levels.append(row)
        costs = rng.uniform(k, k + 1, size=size) * cfg.cost_scale
        for b, c in zip(row, costs):
            tx[b] = float(c)
            infer[b] = float(c) * cfg.infer_cost_ratio
    return BeliefSet(levels=tuple(levels), tx_cost=tx, infer_cost=infer)


def _draw_task_lengths(cfg: ScenarioConfig, rng: np.random.Generator) -> list[int]:
    if cfg.events is None:
        return [int(rng.integers(cfg.len_min, cfg.len_max + 1)) for _ in range(cfg.tasks)]
    lengths = [cfg.len_min] * cfg.tasks
    budget = cfg.events - cfg.tasks * cfg.len_min
    # Seed one task per length first so every chain size is represented.
    for i, target in enumerate(range(cfg.len_min + 1, cfg.len_max + 1)):
        extra = target - cfg.len_min
        if i < cfg.tasks and budget >= extra:
            lengths[i] += extra
            budget -= extra
    while budget > 0:
        open_tasks = [i for i, l in enumerate(lengths) if l < cfg.len_max]
        pick = int(rng.choice(open_tasks))
        lengths[pick] += 1
        budget -= 1
    return lengths


def _allocate_events(lengths: Sequence[int]) -> tuple[list[Event], list[list[int]]]:
    events: list[Event] = []
    tecs: list[list[int]] = []
    nxt = 0
    for length in lengths:
        tec = []
        for pos in range(length):
            if pos == 0:
                kind = EventKind.INITIAL
            elif pos == length - 1:
                kind = EventKind.FINAL
            else:
                kind = EventKind.INTERMEDIARY
            events.append(Event(nxt, kind))
            tec.append(nxt)
            nxt += 1
        tecs.append(tec)
    return events, tecs


def _assign_descriptors(
    cfg: ScenarioConfig,
    belief_set: BeliefSet,
    events: Sequence[Event],
    tecs: Sequence[Sequence[int]],
    rng: np.random.Generator,
) -> dict[int, frozenset[PerfectDescriptor]]:
    """Ground-truth perfect descriptors.

    Descriptors are prefixes of per-root chains through the hierarchy:
    each prefix extends into at most one deeper belief, so a greedy
    per-state listener completion can realize all of them, and every
    prefix of an assigned descriptor is itself assigned to some event,
    which makes deeper descriptors reachable bottom-up.

    Descriptor depth is homogeneous within a task: a task's whole chain
    becomes describable at one curriculum step, so value can flow from its
    final event back to its initial event while that step trains.
    """
    n_levels = belief_set.num_levels
    depth_cap = min(cfg.descriptor_depth_max, n_levels)
    roots = list(belief_set.levels[0])

    # Chain extensions: chain i continues at level k with a permuted pick.
    extensions: list[list[BeliefId]] = []
    for k in range(2, depth_cap + 1):
        level = belief_set.levels[k - 1]
        perm = rng.permutation(len(level))
        extensions.append([level[int(perm[i % len(level)])] for i in range(len(roots))])

    def chain_prefix(chain: int, depth: int) -> tuple[BeliefId, ...]:
        return (roots[chain],) + tuple(extensions[k - 2][chain] for k in range(2, depth + 1))

    # Per-task depths cycling over 2..depth_cap, deepest reachable first.
    depths = list(range(2, depth_cap + 1))[: max(1, len(tecs))]
    task_depth = [depths[i % len(depths)] for i in range(len(tecs))]
    task_depth = [task_depth[int(i)] for i in rng.permutation(len(tecs))]

    events_at_depth: dict[int, list[int]] = {d: [] for d in depths}
    for tid, tec in enumerate(tecs):
        events_at_depth[task_depth[tid]].extend(tec[:-1])

    # Chains usable at depth d form a prefix of the root list, sized so that
    # every shallower depth has enough events to host the prefix coverage.
    cap_at_depth: dict[int, int] = {}
    running = len(roots)
    for d in depths:
        running = min(running, len(events_at_depth[d]))
        cap_at_depth[d] = max(1, running)

    assignment: dict[int, list[tuple[int, int]]] = {}
    used_at_depth: dict[int, set[int]] = {d: set() for d in depths}
    must_use: set[int] = set()
    for d in reversed(depths):
        pool = list(range(cap_at_depth[d]))
        order = [int(e) for e in rng.permutation(events_at_depth[d])]
        needed = sorted(must_use)
        if len(needed) > len(order):
            raise ScenarioConfigError(
                "not enough events at shallow depths to anchor the deeper chains"
            )
        for e, c in zip(order, needed):
            assignment[e] = [(c, d)]
        for e in order[len(needed):]:
            assignment[e] = [(int(rng.choice(pool)), d)]
        for e in order:
            c = assignment[e][0][0]
            others = [c2 for c2 in pool if c2 != c]
            if others and rng.random() < cfg.second_descriptor_prob:
                assignment[e].append((int(rng.choice(others)), d))
        used_at_depth[d] = {c for e in order for c, _ in assignment[e]}
        must_use |= used_at_depth[d]

    covered = sorted({slot for slots in assignment.values() for slot in slots})
    if not covered:
        raise ScenarioConfigError("level sizes cannot host one perfect descriptor per event")
    for e in (ev.index for ev in events if ev.kind == EventKind.FINAL):
        assignment[e] = [covered[int(rng.integers(len(covered)))]]

    return {
        e: frozenset(PerfectDescriptor(chain_prefix(c, d)) for c, d in slots)
        for e, slots in assignment.items()
    }


def _build_transitions(
    cfg: ScenarioConfig,
    events: Sequence[Event],
    tecs: Sequence[Sequence[int]],
    rng: np.random.Generator,
) -> TransitionModel:
    n = len(events)
    p_good = np.zeros((n, n))
    p_bad = np.zeros((n, n))
    initials = [tec[0] for tec in tecs]
    non_final = [e.index for e in events if e.kind != EventKind.FINAL]

    for tec in tecs:
        hazards = hazards_for_length(len(tec))
        final = tec[-1]
        for j, q in enumerate(hazards, start=1):
            e = tec[j - 1]
            p_good[e, final] += q
            if j < len(tec) - 1:
                p_good[e, tec[j]] += 1.0 - q
    for e in events:
        # Final rows are never sampled (episodes end there); keep them
        # stochastic anyway, with the failure row denser like all others.
        if e.kind == EventKind.FINAL:
            p_good[e.index, e.index] = 1.0
            p_bad[e.index, non_final] = 1.0 / len(non_final)

    owner = {}
    for tid, tec in enumerate(tecs):
        for e in tec:
            owner[e] = tid
    for e in non_final:
        init = tecs[owner[e]][0]
        candidates = [x for x in non_final if x != init]
        spread = max(1, math.ceil(cfg.spread_coverage * len(candidates)))
        spread = max(spread, min(len(candidates), 3))
        p_nnz = int(np.count_nonzero(p_good[e]))
        if spread + 1 < 2 * p_nnz:
            raise ScenarioConfigError(
                "too few events for failure rows to dominate success rows; "
                "add tasks or shorten chains"
            )
        chosen = rng.choice(len(candidates), size=spread, replace=False)
        weights = rng.dirichlet(np.ones(spread)) * (1.0 - cfg.restart_mass)
        p_bad[e, init] = cfg.restart_mass
        for idx, w in zip(chosen, weights):
            p_bad[e, candidates[int(idx)]] += float(w)
        p_bad[e] /= p_bad[e].sum()

    return TransitionModel(p_good=p_good, p_bad=p_bad)


# ---------------------------------------------------------------------------
# Invariant validation
# ---------------------------------------------------------------------------


def validate_scenario(s: Scenario) -> None:
    """Raise ScenarioError on any structural invariant violation."""
    n = s.n_events
    for kind in EventKind:
        if not s.events_of_kind(kind):
            raise ScenarioError(f"no events of kind {kind.value}")
    initials = [t.initial_event for t in s.tasks]
    if len(set(initials)) != len(initials):
        raise ScenarioError("tasks must have distinct initial events")
    for task in s.tasks:
        kinds = [s.kinds[e] for e in task.tec]
        if kinds[0] != EventKind.INITIAL or kinds[-1] != EventKind.FINAL:
            raise ScenarioError(f"task {task.id} chain does not run initial->final")
        if any(k != EventKind.INTERMEDIARY for k in kinds[1:-1]):
            raise ScenarioError(f"task {task.id} has a non-intermediary mid event")

    for e in range(n):
        descs = s.perfect_map.get(e)
        if not descs:
            raise ScenarioError(f"event {e} has no perfect descriptor")
        for d in descs:
            if not validate_descriptor_structure(d.beliefs, s.belief_set):
                raise ScenarioError(f"event {e} descriptor {d} is structurally invalid")

    for name, mat in (("p_good", s.transitions.p_good), ("p_bad", s.transitions.p_bad)):
        if mat.shape != (n, n):
            raise ScenarioError(f"{name} has shape {mat.shape}, expected {(n, n)}")
        sums = mat.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise ScenarioError(f"{name} rows must sum to 1")
        if np.any(mat < 0):
            raise ScenarioError(f"{name} has negative entries")

    finals = set(s.events_of_kind(EventKind.FINAL))
    for task in s.tasks:
        jump = [s.transitions.p_good[e, task.final_event] for e in task.tec[:-1]]
        if any(b - a <= 0 for a, b in zip(jump, jump[1:])):
            raise ScenarioError(f"task {task.id}: jump-to-final must strictly increase")
        for e in task.tec[:-1]:
            row = s.transitions.p_good[e]
            support = set(np.nonzero(row)[0].tolist())
            pos = s.tec_position[e]
            allowed = {task.final_event}
            if pos < task.max_len - 1:
                allowed.add(task.tec[pos])
            if not support <= allowed:
                raise ScenarioError(f"success row of event {e} leaves its chain")
            bad_row = s.transitions.p_bad[e]
            if bad_row[task.initial_event] <= 0:
                raise ScenarioError(f"failure row of event {e} misses the restart event")
            if any(bad_row[f] > 0 for f in finals):
                raise ScenarioError(f"failure row of event {e} can reach a final event")
    for e in range(n):
        good_nnz = np.count_nonzero(s.transitions.p_good[e])
        if np.count_nonzero(s.transitions.p_bad[e]) < 2 * good_nnz:
            raise ScenarioError(f"failure row of event {e} is not twice as dense")

    # Bottom-up discoverability: every proper prefix of a descriptor must be
    # a descriptor of some describable (non-final) event, or no curriculum
    # can ever reach the deeper one.
    described: set[tuple[BeliefId, ...]] = set()
    for e in range(n):
        if s.kinds[e] == EventKind.FINAL:
            continue
        for d in s.perfect_map[e]:
            described.add(d.beliefs)
    for e in range(n):
        for d in s.perfect_map[e]:
            for j in range(2, d.depth):
                if d.beliefs[:j] not in described:
                    raise ScenarioError(
                        f"descriptor {d} of event {e} has an unanchored prefix at depth {j}"
                    )

    if s.belief_set.num_levels >= 3 and not find_superset_witness(s):
        raise ScenarioError("no event demonstrates that supersets can break perfection")


def find_superset_witness(
    s: Scenario,
) -> tuple[int, PerfectDescriptor, BeliefId] | None:
    """An (event, descriptor, extra belief) where descriptor + extra is a valid
    hierarchical set that is not itself perfect for the event."""
    for e, descs in sorted(s.perfect_map.items()):
        for d in sorted(descs, key=str):
            if d.depth >= s.belief_set.num_levels:
                continue
            for b in s.belief_set.levels[d.depth]:
                if frozenset(d.beliefs) | {b} not in s.perfect_sets[e]:
                    return e, d, b
    return None
