"""Goal-oriented semantic communication simulator.

A speaker and a listener cooperatively learn minimal perfect descriptions
of environment events via bottom-up curriculum multi-agent Q-learning,
benchmarked against flat RL over the full description power set.
"""

from .agents import LearnConfig, build_spaces, select_action, update_q
from .analysis import (
    MetricsReport,
    Theorem1Bound,
    brute_force_perfect_descriptors,
    compute_metrics,
    flat_qtable_accounting,
    qtable_accounting,
    recommended_task_reward,
    theorem1_bound,
)
from .baseline import run_flat_rl
from .curriculum import CurriculumState, run_cl_step, run_curriculum
from .environment import Description, EpisodeLog, EpisodeState, SemanticEnv, SlotOutcome
from .experiment import ExperimentConfig, run_experiment
from .rng import RngBundle, make_rng
from .scenario import (
    BeliefId,
    BeliefSet,
    Event,
    EventKind,
    PerfectDescriptor,
    Scenario,
    ScenarioConfig,
    TaskSpec,
    generate_scenario,
    lookup_perfect,
    validate_descriptor_structure,
)
from .scenario_io import load_scenario, save_scenario

__version__ = "0.1.0"
