"""Reflective gridworld agents: governed, norm-learning, self-modelling.

A deterministic gridworld plus a critic-style learning agent wrapped in a
reflective layer: learned self/other/norm models, a consequence engine for
internal what-if simulation, a Socratic governor on the action path, and
eight composable information loops gated by capability tiers 0-4.
"""

from .agent import (
    Feedback,
    PerformanceStandard,
    PlannerPolicy,
    QTablePolicy,
    checkpoint_hash,
    criticize,
    learn,
    propose_exploration,
    select_action,
)
from .consequence import ConsequenceEngine, Hypothesis, Rollout
from .engine import Engine, MetricsReport, RunResult
from .errors import ConfigError, ReflectsimError
from .governance import (
    GovernorContext,
    Inconsistency,
    LearnerReport,
    ProgressReport,
    Verdict,
    assess_progress,
    deliberate,
    introspect_learning,
    re_represent,
    reconcile,
    switch_strategy,
    vet,
    what_if,
)
from .learning import (
    KolbPhase,
    infer_norms,
    integrate_design_goal,
    integrate_sign,
    kolb_tick,
    learn_other,
    learn_transitions,
)
from .loops import COMPOSITIONS, LoopId, TierConfig, TraceEvent, check_composition
from .models import (
    ModelSnapshot,
    Observation,
    ObservationLog,
    ReflectiveModelStore,
    RuleSetModel,
    TransitionModel,
)
from .norms import NormKind, NormSource, NormSpec, parse_norm
from .scenario import ScenarioConfig, load_scenario, parse_scenario
from .world import (
    Action,
    GridSpec,
    Percept,
    TwinConfig,
    World,
    WorldState,
    make_twin,
    parse_state_key,
    state_key,
)

__version__ = "0.1.0"
