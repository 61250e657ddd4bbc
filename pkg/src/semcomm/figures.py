"""Figure data emission: plain two-column series files, gnuplot-friendly.

Each figure writes one `<fig>_<series>.dat` file per series with a `#`
header line; nothing is rendered here. Inputs are validated up front so a
failed emission leaves no partial files behind.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import analysis
from .curriculum import ConvergenceSeries, StepLog
from .scenario import Scenario

FIGURE_IDS = ("fig4", "fig5", "fig6", "fig7", "fig8")


class FigureDataError(ValueError):
    pass


def running_mean(values: list[float], window: int = 200) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return arr
    kernel = np.ones(min(window, arr.size))
    sums = np.convolve(arr, kernel, mode="full")[: arr.size]
    counts = np.minimum(np.arange(1, arr.size + 1), kernel.size)
    return sums / counts


def _write_series(path: Path, header: str, xs, ys) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {header}\n")
        for x, y in zip(xs, ys):
            y = float(y)
            fh.write(f"{x} {'nan' if math.isnan(y) else repr(round(y, 10))}\n")


def load_convergence_csv(path: Path) -> list[StepLog]:
    """Rebuild per-step convergence series from a run's convergence CSV."""
    by_step: dict[int, ConvergenceSeries] = {}
    with open(path, "r", encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            step_s, ep, mid, init, mid_all, init_all = line.rstrip("\n").split(",")
            conv = by_step.setdefault(int(step_s), ConvergenceSeries())
            conv.episodes.append(int(ep))
            conv.mid_extracted.append(float(mid))
            conv.init_extracted.append(float(init))
            conv.mid_all.append(float(mid_all))
            conv.init_all.append(float(init_all))
    logs = []
    for step in sorted(by_step):
        log = StepLog(
            step=step, episodes_run=0, skipped=False, n_new_event_outputs=0,
            n_new_hierarchy=0, speaker_key_count=0, listener_key_count=0,
            hierarchy_size=0, listener_pool=0,
        )
        log.convergence = by_step[step]
        logs.append(log)
    return logs


def emit_fig4(step_logs: list[StepLog], out_dir: Path) -> list[Path]:
    """Greedy Q-value convergence of learned events, per step and event kind."""
    steps = [sl for sl in step_logs if not sl.skipped and sl.convergence.episodes]
    if not steps:
        raise FigureDataError("fig4 needs at least one trained step with convergence samples")
    written = []
    for sl in steps:
        conv = sl.convergence
        for kind, values in (("intermediary", conv.mid_extracted), ("initial", conv.init_extracted)):
            if not values:
                continue
            path = out_dir / f"fig4_step{sl.step}_{kind}.dat"
            _write_series(path, f"episode greedy_q (step {sl.step}, {kind} events)", conv.episodes, values)
            written.append(path)
    if not written:
        raise FigureDataError("fig4 found no extracted events to plot")
    return written


def emit_fig5(
    report_met: analysis.MetricsReport, report_violated: analysis.MetricsReport, out_dir: Path,
    window: int = 200,
) -> list[Path]:
    """Task execution time with the reward condition met vs violated."""
    if report_met.n_episodes == 0 or report_violated.n_episodes == 0:
        raise FigureDataError("fig5 needs two non-empty training reports")
    written = []
    for name, rep in (("condition_met", report_met), ("condition_violated", report_violated)):
        xs = [e.m for e in rep.per_episode]
        ys = running_mean([e.execution_time for e in rep.per_episode], window)
        path = out_dir / f"fig5_{name}.dat"
        _write_series(path, f"episode mean_execution_time ({name})", xs, ys)
        written.append(path)
    return written


def emit_fig6(
    cl: analysis.MetricsReport,
    flat: analysis.MetricsReport,
    scenario: Scenario,
    out_dir: Path,
    window: int = 200,
) -> list[Path]:
    """Execution time and cost vs episode, split by the tasks' curriculum step."""
    steps = analysis.task_steps(scenario)
    if cl.n_episodes == 0 or flat.n_episodes == 0:
        raise FigureDataError("fig6 needs both training reports")
    written = []
    for tag, rep in (("cl", cl), ("flat", flat)):
        for step in sorted(set(steps.values())):
            eps = [e for e in rep.per_episode if steps[e.task] == step]
            if not eps:
                raise FigureDataError(f"fig6: no episodes for step-{step} tasks in {tag}")
            xs = [e.m for e in eps]
            times = running_mean([e.execution_time for e in eps], window)
            costs = running_mean([e.cost for e in eps], window)
            p1 = out_dir / f"fig6_time_step{step}_{tag}.dat"
            p2 = out_dir / f"fig6_cost_step{step}_{tag}.dat"
            _write_series(p1, f"episode mean_execution_time (step-{step} tasks, {tag})", xs, times)
            _write_series(p2, f"episode mean_cost (step-{step} tasks, {tag})", xs, costs)
            written += [p1, p2]
    return written


def emit_fig7(
    cl: analysis.MetricsReport, flat: analysis.MetricsReport, out_dir: Path, window: int = 500
) -> list[Path]:
    """Task execution reliability vs episode."""
    if cl.n_episodes == 0 or flat.n_episodes == 0:
        raise FigureDataError("fig7 needs both training reports")
    written = []
    for tag, rep in (("cl", cl), ("flat", flat)):
        xs = [e.m for e in rep.per_episode]
        ys = running_mean([1.0 if e.within_window else 0.0 for e in rep.per_episode], window)
        path = out_dir / f"fig7_{tag}.dat"
        _write_series(path, f"episode reliability ({tag})", xs, ys)
        written.append(path)
    return written


def emit_fig8(
    cl_eval: analysis.MetricsReport,
    flat_eval: analysis.MetricsReport,
    scenario: Scenario,
    out_dir: Path,
) -> list[Path]:
    """End-of-learning time/cost/reliability/efficiency vs events per task."""
    if cl_eval.n_episodes == 0 or flat_eval.n_episodes == 0:
        raise FigureDataError("fig8 needs both evaluation reports")
    sizes = {t.id: t.max_len for t in scenario.tasks}
    written = []
    for tag, rep in (("cl", cl_eval), ("flat", flat_eval)):
        groups: dict[int, list[analysis.EpisodeMetrics]] = {}
        for e in rep.per_episode:
            groups.setdefault(sizes[e.task], []).append(e)
        xs = sorted(groups)
        metrics = {
            "time": [analysis.mean_execution_time(groups[x]) for x in xs],
            "cost": [analysis.mean_cost(groups[x]) for x in xs],
            "reliability": [analysis.reliability_of(groups[x]) for x in xs],
            "efficiency": [analysis.mean_belief_efficiency(groups[x]) for x in xs],
        }
        for name, ys in metrics.items():
            path = out_dir / f"fig8_{name}_{tag}.dat"
            _write_series(path, f"events_per_task {name} ({tag})", xs, ys)
            written.append(path)
    return written
