"""Experiment orchestration: seeded multi-replica runs and their artifacts.

A run trains the curriculum path and/or the flat baseline on one scenario,
then rolls the learned greedy policies through an update-free evaluation
phase; training logs, evaluation logs, metrics, Q snapshots and convergence
series are written per replica, plus a merged summary. Given the same
config and base seed the artifact bytes are identical.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import analysis
from .agents import LearnConfig
from .baseline import FlatQTable, run_flat_rl
from .curriculum import CurriculumState, run_curriculum
from .environment import EpisodeLog, SemanticEnv, run_policy_episodes
from .rng import RngBundle
from .scenario import BeliefId, Scenario, ScenarioConfig, generate_scenario
from .scenario_io import load_scenario, save_scenario


class ExperimentConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scenario_path: str | None = None
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    scenario_seed: int = 1
    method: str = "both"  # cl | flat | both
    learn: LearnConfig = field(default_factory=LearnConfig)
    alpha: float = 0.5
    slot_cap_factor: float = 10.0
    window_cap_factor: float = 3.0
    episodes: int = 30_000  # per-method training budget
    eval_episodes: int = 3_000
    replicas: int = 1
    base_seed: int = 1
    jobs: int = 1
    theorem1_mode: str = "auto"  # auto | violate | pin:<value>
    flat_cardinality_cap: int | None = None
    outdir: str = "runs/experiment"

    def validate(self) -> None:
        if self.method not in ("cl", "flat", "both"):
            raise ExperimentConfigError(f"unknown method {self.method!r}")
        if self.replicas < 1:
            raise ExperimentConfigError("replicas must be >= 1")
        if self.episodes < 1:
            raise ExperimentConfigError("episodes must be >= 1")
        mode = self.theorem1_mode
        if mode not in ("auto", "violate") and not mode.startswith("pin:"):
            raise ExperimentConfigError(f"unknown theorem1 mode {mode!r}")
        if mode.startswith("pin:"):
            try:
                float(mode.split(":", 1)[1])
            except ValueError:
                raise ExperimentConfigError("pin mode needs a number, e.g. pin:120") from None


def config_from_json(path: str | os.PathLike) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as err:
            raise ExperimentConfigError(f"config is not valid JSON: {err}") from None
    cfg = ExperimentConfig()
    known = set(asdict(cfg))
    for key, value in raw.items():
        if key not in known:
            raise ExperimentConfigError(f"unknown config key {key!r}")
        if key == "scenario":
            cfg.scenario = ScenarioConfig(**{k: _coerce(v) for k, v in value.items()})
        elif key == "learn":
            cfg.learn = LearnConfig(**value)
        else:
            setattr(cfg, key, _coerce(value))
    cfg.validate()
    return cfg


def _coerce(value):
    return tuple(value) if isinstance(value, list) else value


def resolve_scenario(cfg: ExperimentConfig) -> Scenario:
    if cfg.scenario_path:
        return load_scenario(cfg.scenario_path)
    return generate_scenario(cfg.scenario, cfg.scenario_seed)


def injected_reward(scenario: Scenario, cfg: ExperimentConfig) -> float:
    mode = cfg.theorem1_mode
    if mode == "auto":
        return analysis.recommended_task_reward(scenario, gamma=cfg.learn.gamma)
    if mode == "violate":
        return 0.1 * analysis.theorem1_bound(scenario).r_min
    return float(mode.split(":", 1)[1])


@dataclass
class ReplicaArtifacts:
    replica: int
    cl_train: analysis.MetricsReport | None = None
    cl_eval: analysis.MetricsReport | None = None
    flat_train: analysis.MetricsReport | None = None
    flat_eval: analysis.MetricsReport | None = None
    curriculum: CurriculumState | None = None


def replay_policy(curriculum: CurriculumState, scenario: Scenario):
    """Greedy post-training policy: solved events play their stored split;
    unsolved events transmit the cheapest level-1 belief and fail honestly."""
    fallback_belief = min(
        scenario.belief_set.levels[0], key=lambda b: (scenario.belief_set.tx_cost[b], b)
    )
    fallback = (frozenset((fallback_belief,)), frozenset())
    replay = curriculum.replay

    def policy(event: int) -> tuple[frozenset[BeliefId], frozenset[BeliefId]]:
        return replay.get(event, fallback)

    return policy


def flat_greedy_policy(table: FlatQTable, scenario: Scenario):
    beliefs = scenario.belief_set.all_beliefs()
    empty: frozenset[BeliefId] = frozenset()
    cache: dict[int, tuple[frozenset[BeliefId], frozenset[BeliefId]]] = {}

    def policy(event: int) -> tuple[frozenset[BeliefId], frozenset[BeliefId]]:
        got = cache.get(event)
        if got is None:
            mask = table.spaces.mask_of(table.rows[event].argmax())
            part = frozenset(b for i, b in enumerate(beliefs) if mask >> i & 1)
            got = (part, empty)
            cache[event] = got
        return got

    return policy


def run_replica(
    scenario: Scenario, cfg: ExperimentConfig, replica: int, outdir: Path
) -> ReplicaArtifacts:
    outdir.mkdir(parents=True, exist_ok=True)
    rngs = RngBundle.for_replica(cfg.base_seed, replica)
    arts = ReplicaArtifacts(replica=replica)

    if cfg.method in ("cl", "both"):
        reward = injected_reward(scenario, cfg)
        train_scenario = scenario.with_task_rewards(reward)
        steps_hint = max(1, scenario.belief_set.num_levels - 1)
        learn = LearnConfig(**{**asdict(cfg.learn), "episodes_per_step": cfg.episodes // steps_hint})
        log = EpisodeLog(record_parts=True)
        cs, train_report = run_curriculum(
            train_scenario,
            learn,
            rngs,
            alpha=cfg.alpha,
            slot_cap_factor=cfg.slot_cap_factor,
            window_cap_factor=cfg.window_cap_factor,
            log=log,
        )
        arts.curriculum = cs
        arts.cl_train = train_report
        log.to_csv(outdir / "cl_train_log.csv", tag="cl")
        _write_metrics(outdir / "cl_train_metrics.txt", train_report)
        _write_convergence(outdir / "cl_convergence.csv", cs)
        _write_curriculum_report(outdir / "cl_curriculum.txt", cs, train_scenario)

        env = SemanticEnv(train_scenario, alpha=cfg.alpha, slot_cap_factor=cfg.slot_cap_factor)
        eval_log = EpisodeLog(record_parts=True)
        run_policy_episodes(
            env, replay_policy(cs, train_scenario), cfg.eval_episodes, rngs.eval, eval_log
        )
        arts.cl_eval = analysis.compute_metrics(
            eval_log, train_scenario, cfg.alpha, cfg.learn.gamma, cfg.window_cap_factor
        )
        eval_log.to_csv(outdir / "cl_eval_log.csv", tag="cl")
        _write_metrics(outdir / "cl_eval_metrics.txt", arts.cl_eval)

    if cfg.method in ("flat", "both"):
        reward = injected_reward(scenario, cfg)
        train_scenario = scenario.with_task_rewards(reward)
        log = EpisodeLog(record_parts=False)
        stats, report, table = run_flat_rl(
            train_scenario,
            cfg.learn,
            rngs,
            episodes=cfg.episodes,
            alpha=cfg.alpha,
            slot_cap_factor=cfg.slot_cap_factor,
            window_cap_factor=cfg.window_cap_factor,
            log=log,
            cardinality_cap=cfg.flat_cardinality_cap,
        )
        arts.flat_train = report
        log.to_csv(outdir / "flat_train_log.csv", tag="flat")
        _write_metrics(outdir / "flat_train_metrics.txt", report)

        env = SemanticEnv(train_scenario, alpha=cfg.alpha, slot_cap_factor=cfg.slot_cap_factor)
        eval_log = EpisodeLog(record_parts=False)
        run_policy_episodes(
            env, flat_greedy_policy(table, train_scenario), cfg.eval_episodes, rngs.eval, eval_log
        )
        arts.flat_eval = analysis.compute_metrics(
            eval_log, train_scenario, cfg.alpha, cfg.learn.gamma, cfg.window_cap_factor
        )
        eval_log.to_csv(outdir / "flat_eval_log.csv", tag="flat")
        _write_metrics(outdir / "flat_eval_metrics.txt", arts.flat_eval)

    return arts


def run_experiment(cfg: ExperimentConfig) -> list[ReplicaArtifacts]:
    cfg.validate()
    outdir = Path(os.environ.get("SEMCOMM_OUTDIR", cfg.outdir))
    outdir.mkdir(parents=True, exist_ok=True)

    scenario = resolve_scenario(cfg)
    save_scenario(scenario, outdir / "scenario.txt")
    with open(outdir / "run.json", "w", encoding="utf-8") as fh:
        json.dump(_manifest(cfg, scenario), fh, indent=2, sort_keys=True)
        fh.write("\n")

    replicas = list(range(cfg.replicas))
    if cfg.jobs > 1 and cfg.replicas > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [
                pool.submit(run_replica, scenario, cfg, r, outdir / f"replica_{r:03d}")
                for r in replicas
            ]
            results = [f.result() for f in futures]
    else:
        results = [run_replica(scenario, cfg, r, outdir / f"replica_{r:03d}") for r in replicas]

    _write_summary(outdir / "summary.txt", cfg, results)
    return results


def _manifest(cfg: ExperimentConfig, scenario: Scenario) -> dict:
    data = asdict(cfg)
    data["scenario_stats"] = {
        "beliefs": scenario.belief_set.total_count,
        "levels": list(scenario.belief_set.level_sizes()),
        "events": scenario.n_events,
        "tasks": len(scenario.tasks),
    }
    return data


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return repr(round(float(x), 10))


def _write_metrics(path: Path, report: analysis.MetricsReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"episodes = {report.n_episodes}\n")
        fh.write(f"reliability = {_fmt(report.reliability)}\n")
        fh.write(f"belief_efficiency = {_fmt(report.belief_efficiency)}\n")
        fh.write(f"discounted_cost = {_fmt(report.discounted_cost)}\n")
        fh.write(f"alpha = {report.alpha!r}\n")
        fh.write(f"gamma = {report.gamma!r}\n")
        fh.write(f"window_cap_factor = {report.window_cap_factor!r}\n")
        fh.write("task, episodes, mean_execution_time, mean_belief_efficiency, reliability\n")
        for t in report.per_task.values():
            fh.write(
                f"{t.task}, {t.episodes}, {_fmt(t.mean_execution_time)}, "
                f"{_fmt(t.mean_belief_efficiency)}, {_fmt(t.reliability)}\n"
            )


def _write_convergence(path: Path, cs: CurriculumState) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,episode,q_intermediary,q_initial,q_intermediary_all,q_initial_all\n")
        for sl in cs.step_logs:
            conv = sl.convergence
            for i, ep in enumerate(conv.episodes):
                mid = conv.mid_extracted[i] if i < len(conv.mid_extracted) else math.nan
                init = conv.init_extracted[i] if i < len(conv.init_extracted) else math.nan
                fh.write(
                    f"{sl.step},{ep},{_fmt(mid)},{_fmt(init)},"
                    f"{_fmt(conv.mid_all[i])},{_fmt(conv.init_all[i])}\n"
                )


def _write_curriculum_report(path: Path, cs: CurriculumState, scenario: Scenario) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"steps_run = {len(cs.step_logs)}\n")
        fh.write(f"unsolvable = {cs.unsolvable}\n")
        dead = sorted(cs.dead_beliefs())
        fh.write(f"leftover_beliefs = {' '.join(str(b) for b in dead) if dead else 'none'}\n")
        for sl in cs.step_logs:
            fh.write(
                f"step {sl.step}: episodes={sl.episodes_run} skipped={sl.skipped} "
                f"new_descriptors={sl.n_new_event_outputs} new_hierarchy={sl.n_new_hierarchy} "
                f"speaker_keys={sl.speaker_key_count} listener_keys={sl.listener_key_count}\n"
            )
        for l in sorted(cs.hierarchy_out):
            tuples = sorted(cs.hierarchy_out[l])
            fh.write(f"hierarchy step {l}: " + " | ".join("+".join(str(b) for b in t) for t in tuples) + "\n")
        fh.write("event descriptors:\n")
        for e in sorted(cs.event_out):
            descs = sorted(cs.event_out[e], key=str)
            fh.write(f"  {e} : " + " | ".join(str(d) for d in descs) + "\n")


def _write_summary(path: Path, cfg: ExperimentConfig, results: list[ReplicaArtifacts]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"method = {cfg.method}\n")
        fh.write(f"replicas = {cfg.replicas}\n")
        fh.write(f"episodes = {cfg.episodes}\n")
        fh.write(f"theorem1_mode = {cfg.theorem1_mode}\n")
        for arts in results:
            fh.write(f"[replica {arts.replica}]\n")
            for name, rep in (
                ("cl_train", arts.cl_train),
                ("cl_eval", arts.cl_eval),
                ("flat_train", arts.flat_train),
                ("flat_eval", arts.flat_eval),
            ):
                if rep is None:
                    continue
                fh.write(
                    f"  {name}: reliability={_fmt(rep.reliability)} "
                    f"belief_efficiency={_fmt(rep.belief_efficiency)} "
                    f"mean_time={_fmt(analysis.mean_execution_time(rep.per_episode))} "
                    f"mean_cost={_fmt(analysis.mean_cost(rep.per_episode))}\n"
                )
