"""Scenario text format.

A versioned, sectioned, line-oriented format. Floats are written with repr()
so load(save(s)) reproduces the scenario bit-for-bit; matrices are dense
row-major decimal. The parser reports byte offsets on malformed input.
"""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np

from .scenario import (
    BeliefId,
    BeliefSet,
    Event,
    EventKind,
    PerfectDescriptor,
    Scenario,
    TaskSpec,
    TransitionModel,
    parse_belief_id,
    validate_scenario,
)

FORMAT_HEADER = "semcomm-scenario"
FORMAT_VERSION = 1


class ScenarioParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def scenario_to_text(s: Scenario) -> str:
    out: list[str] = []
    out.append(f"{FORMAT_HEADER} v{FORMAT_VERSION}")
    out.append(f"seed {s.rng_seed}")
    out.append("levels " + " ".join(str(n) for n in s.belief_set.level_sizes()))

    out.append("[beliefs]")
    for b in s.belief_set.all_beliefs():
        out.append(f"{b} tx {s.belief_set.tx_cost[b]!r} infer {s.belief_set.infer_cost[b]!r}")

    out.append("[events]")
    for e in s.events:
        out.append(f"{e.index} {e.kind.value}")

    out.append("[tasks]")
    for t in s.tasks:
        out.append(f"task {t.id} max_len {t.max_len} reward {t.reward!r} delay_cost {t.delay_cost!r}")
        out.append("tec " + " ".join(str(e) for e in t.tec))
        out.append("pmf " + " ".join(repr(p) for p in t.length_pmf))

    out.append("[perfect]")
    for e in range(s.n_events):
        descs = sorted(s.perfect_map[e], key=str)
        out.append(
            f"{e} : " + " | ".join(" ".join(str(b) for b in d.beliefs) for d in descs)
        )

    for name, mat in (("p_good", s.transitions.p_good), ("p_bad", s.transitions.p_bad)):
        out.append(f"[{name}]")
        for row in mat.tolist():
            out.append(" ".join(repr(x) for x in row))

    out.append("[end]")
    return "\n".join(out) + "\n"


def save_scenario(s: Scenario, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(scenario_to_text(s))


class _Lines:
    """Line reader that tracks the byte offset of the current line."""

    def __init__(self, text: str):
        self._raw = text.split("\n")
        self._offsets: list[int] = []
        pos = 0
        for line in self._raw:
            self._offsets.append(pos)
            pos += len(line.encode("utf-8")) + 1
        self._i = 0
        self.end_offset = len(text.encode("utf-8"))

    @property
    def offset(self) -> int:
        if self._i < len(self._offsets):
            return self._offsets[self._i]
        return self.end_offset

    def peek(self) -> str | None:
        while self._i < len(self._raw):
            line = self._raw[self._i]
            if line.strip():
                return line
            self._i += 1
        return None

    def take(self) -> str:
        line = self.peek()
        if line is None:
            raise ScenarioParseError("unexpected end of file", self.end_offset)
        self._i += 1
        return line

    def expect_section(self, name: str) -> None:
        line = self.take()
        if line.strip() != f"[{name}]":
            raise ScenarioParseError(f"expected section [{name}], got {line.strip()!r}", self._offsets[self._i - 1])

    def fail(self, message: str) -> ScenarioParseError:
        return ScenarioParseError(message, self._offsets[min(self._i, len(self._offsets) - 1)])


def scenario_from_text(text: str) -> Scenario:
    lines = _Lines(text)

    header = lines.take().split()
    if len(header) != 2 or header[0] != FORMAT_HEADER:
        raise ScenarioParseError("not a semcomm scenario file", 0)
    if header[1] != f"v{FORMAT_VERSION}":
        raise ScenarioParseError(f"unsupported format version {header[1]}", 0)

    seed_line = lines.take().split()
    if seed_line[0] != "seed":
        raise lines.fail("expected 'seed <n>'")
    seed = int(seed_line[1])
    level_line = lines.take().split()
    if level_line[0] != "levels":
        raise lines.fail("expected 'levels ...'")
    level_sizes = [int(x) for x in level_line[1:]]

    lines.expect_section("beliefs")
    tx: dict[BeliefId, float] = {}
    infer: dict[BeliefId, float] = {}
    levels = tuple(
        tuple(BeliefId(k, u) for u in range(1, size + 1))
        for k, size in enumerate(level_sizes, start=1)
    )
    for _ in range(sum(level_sizes)):
        parts = lines.take().split()
        try:
            b = parse_belief_id(parts[0])
            if parts[1] != "tx" or parts[3] != "infer":
                raise ValueError
            tx[b] = float(parts[2])
            infer[b] = float(parts[4])
        except (ValueError, IndexError):
            raise lines.fail("malformed belief line") from None
    belief_set = BeliefSet(levels=levels, tx_cost=tx, infer_cost=infer)

    lines.expect_section("events")
    events: list[Event] = []
    while True:
        line = lines.peek()
        if line is None or line.startswith("["):
            break
        parts = lines.take().split()
        try:
            events.append(Event(int(parts[0]), EventKind(parts[1])))
        except (ValueError, IndexError):
            raise lines.fail("malformed event line") from None

    lines.expect_section("tasks")
    tasks: list[TaskSpec] = []
    while True:
        line = lines.peek()
        if line is None or line.startswith("["):
            break
        head = lines.take().split()
        tec_line = lines.take().split()
        pmf_line = lines.take().split()
        try:
            if head[0] != "task" or tec_line[0] != "tec" or pmf_line[0] != "pmf":
                raise ValueError
            tasks.append(
                TaskSpec(
                    id=int(head[1]),
                    max_len=int(head[3]),
                    reward=float(head[5]),
                    delay_cost=float(head[7]),
                    tec=tuple(int(x) for x in tec_line[1:]),
                    length_pmf=tuple(float(x) for x in pmf_line[1:]),
                )
            )
        except (ValueError, IndexError):
            raise lines.fail("malformed task block") from None

    lines.expect_section("perfect")
    perfect_map: dict[int, frozenset[PerfectDescriptor]] = {}
    for _ in range(len(events)):
        line = lines.take()
        try:
            ev_text, _, rest = line.partition(":")
            descs = []
            for chunk in rest.split("|"):
                beliefs = tuple(parse_belief_id(t) for t in chunk.split())
                descs.append(PerfectDescriptor(beliefs))
            perfect_map[int(ev_text)] = frozenset(descs)
        except (ValueError, IndexError):
            raise lines.fail("malformed perfect-descriptor line") from None

    matrices: dict[str, np.ndarray] = {}
    n = len(events)
    for name in ("p_good", "p_bad"):
        lines.expect_section(name)
        rows = []
        for _ in range(n):
            parts = lines.take().split()
            if len(parts) != n:
                raise lines.fail(f"matrix {name} row has {len(parts)} entries, expected {n}")
            try:
                rows.append([float(x) for x in parts])
            except ValueError:
                raise lines.fail(f"malformed {name} row") from None
        matrices[name] = np.array(rows)

    tail = lines.take()
    if tail.strip() != "[end]":
        raise lines.fail("expected [end] marker")

    scenario = Scenario(
        belief_set=belief_set,
        events=tuple(events),
        tasks=tuple(tasks),
        perfect_map=perfect_map,
        transitions=TransitionModel(p_good=matrices["p_good"], p_bad=matrices["p_bad"]),
        rng_seed=seed,
    )
    validate_scenario(scenario)
    return scenario


def load_scenario(path: str | os.PathLike) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return scenario_from_text(fh.read())
