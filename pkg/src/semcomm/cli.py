"""Command line entry point.

Verbs: `scenario gen`, `run`, `figures`, `acceptance`. Exit codes: 0 on
success, 1 for configuration errors, 2 for runtime errors, 3 when the
acceptance suite reports a failing criterion. The SEMCOMM_OUTDIR
environment variable overrides any configured output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .analysis import compute_metrics
from .baseline import FlatMemoryError
from .environment import EpisodeLog
from .experiment import (
    ExperimentConfig,
    ExperimentConfigError,
    config_from_json,
    run_experiment,
)
from .figures import (
    FIGURE_IDS,
    FigureDataError,
    emit_fig4,
    emit_fig5,
    emit_fig6,
    emit_fig7,
    emit_fig8,
)
from .scenario import ScenarioConfig, ScenarioConfigError, ScenarioError, generate_scenario
from .scenario_io import ScenarioParseError, load_scenario, save_scenario

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_ACCEPTANCE = 3

_CONFIG_ERRORS = (
    ExperimentConfigError,
    ScenarioConfigError,
    ScenarioParseError,
    FileNotFoundError,
    json.JSONDecodeError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit(2); remap to config error
        raise _UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="semcomm", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    scen = sub.add_parser("scenario", parser_class=_Parser)
    scen_sub = scen.add_subparsers(dest="scenario_verb", required=True)
    gen = scen_sub.add_parser("gen", parser_class=_Parser, help="generate a scenario file")
    gen.add_argument("--config", help="JSON file of generator settings (defaults: benchmark scale)")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True)

    run = sub.add_parser("run", parser_class=_Parser, help="train and evaluate on a scenario")
    run.add_argument("--config", help="JSON experiment config; flags below override it")
    run.add_argument("--scenario", help="path to a scenario file")
    run.add_argument("--method", choices=["cl", "flat", "both"])
    run.add_argument("--episodes", type=int)
    run.add_argument("--eval-episodes", type=int)
    run.add_argument("--seed", type=int, help="base seed for the replica streams")
    run.add_argument("--scenario-seed", type=int)
    run.add_argument("--replicas", type=int)
    run.add_argument("--jobs", type=int)
    run.add_argument("--alpha", type=float)
    run.add_argument("--theorem1", help="auto | violate | pin:<reward>")
    run.add_argument("--outdir")

    figs = sub.add_parser("figures", parser_class=_Parser, help="emit figure data from a run dir")
    figs.add_argument("--figure", choices=list(FIGURE_IDS), required=True)
    figs.add_argument("--run", required=True, help="experiment output directory")
    figs.add_argument("--run-violate", help="second run dir (fig5: condition-violated arm)")
    figs.add_argument("--replica", type=int, default=0)
    figs.add_argument("--out", required=True)

    acc = sub.add_parser("acceptance", parser_class=_Parser, help="run the acceptance suite")
    acc.add_argument("--jobs", type=int, default=1)
    return parser


def _cmd_scenario_gen(args) -> int:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        cfg = ScenarioConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})
    else:
        cfg = ScenarioConfig()
    scenario = generate_scenario(cfg, args.seed)
    save_scenario(scenario, args.out)
    print(f"wrote scenario with {scenario.belief_set.total_count} beliefs, "
          f"{scenario.n_events} events, {len(scenario.tasks)} tasks to {args.out}")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = config_from_json(args.config) if args.config else ExperimentConfig()
    overrides = {
        "scenario_path": args.scenario,
        "method": args.method,
        "episodes": args.episodes,
        "eval_episodes": args.eval_episodes,
        "base_seed": args.seed,
        "scenario_seed": args.scenario_seed,
        "replicas": args.replicas,
        "jobs": args.jobs,
        "alpha": args.alpha,
        "theorem1_mode": args.theorem1,
        "outdir": args.outdir,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    cfg.validate()
    run_experiment(cfg)
    print(f"run complete; artifacts in {cfg.outdir}")
    return EXIT_OK


def _load_run(run_dir: Path, replica: int, name: str, cfg: dict):
    scenario = load_scenario(run_dir / "scenario.txt")
    log = EpisodeLog.from_csv(run_dir / f"replica_{replica:03d}" / f"{name}_log.csv")
    report = compute_metrics(
        log,
        scenario,
        alpha=cfg.get("alpha", 0.5),
        gamma=cfg.get("learn", {}).get("gamma", 0.95),
        window_cap_factor=cfg.get("window_cap_factor", 3.0),
    )
    return scenario, report


def _cmd_figures(args) -> int:
    run_dir = Path(args.run)
    out = Path(args.out)
    with open(run_dir / "run.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    out.mkdir(parents=True, exist_ok=True)

    if args.figure == "fig4":
        from .figures import load_convergence_csv

        steps = load_convergence_csv(run_dir / f"replica_{args.replica:03d}" / "cl_convergence.csv")
        written = emit_fig4(steps, out)
    elif args.figure == "fig5":
        if not args.run_violate:
            raise FigureDataError("fig5 needs --run-violate pointing at the violated-condition run")
        _, met = _load_run(run_dir, args.replica, "cl_train", manifest)
        _, violated = _load_run(Path(args.run_violate), args.replica, "cl_train", manifest)
        written = emit_fig5(met, violated, out)
    elif args.figure == "fig6":
        scenario, cl = _load_run(run_dir, args.replica, "cl_train", manifest)
        _, flat = _load_run(run_dir, args.replica, "flat_train", manifest)
        written = emit_fig6(cl, flat, scenario, out)
    elif args.figure == "fig7":
        _, cl = _load_run(run_dir, args.replica, "cl_train", manifest)
        _, flat = _load_run(run_dir, args.replica, "flat_train", manifest)
        written = emit_fig7(cl, flat, out)
    else:
        scenario, cl = _load_run(run_dir, args.replica, "cl_eval", manifest)
        _, flat = _load_run(run_dir, args.replica, "flat_eval", manifest)
        written = emit_fig8(cl, flat, scenario, out)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_acceptance(args) -> int:
    from .acceptance import run_acceptance

    results = run_acceptance(jobs=args.jobs)
    failed = [r for r in results if not r.passed]
    return EXIT_ACCEPTANCE if failed else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.verb == "scenario":
            return _cmd_scenario_gen(args)
        if args.verb == "run":
            return _cmd_run(args)
        if args.verb == "figures":
            return _cmd_figures(args)
        return _cmd_acceptance(args)
    except _CONFIG_ERRORS as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScenarioError, FigureDataError, FlatMemoryError, ValueError, RuntimeError) as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
