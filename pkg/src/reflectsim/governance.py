"""Reflective reasoning and behaviour governance.

The governor is the Socratic check on the decision path: every intended
action is vetted against the agent's norm model via consequence rollouts
before actuation. A clean action passes; otherwise the governor looks for
an alternative, preferring any norm-clean candidate and falling back to
the minimal-cost compromise when nothing is clean. Wait is always among
the candidates, so a safe disengagement is always considered.

Candidate generation widens with capability tier: tiers 1-2 weigh the five
single-step actions; tier 3+ adds multi-step plans from the deliberation
generators, including obligation-driven interception plans, which is what
makes harm prevention (rather than mere avoidance) possible.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from .agent import PerformanceStandard, Policy, propose_exploration
from .consequence import ConsequenceEngine, Hypothesis, Rollout, TWIN
from .errors import EmptyModel, InsufficientHistory, UnknownStrategy
from .models import ModelSnapshot, MotionRule, RuleSetModel, TransitionModel
from .norms import NormKind, PreventOtherEntering
from .scenario import GovernanceConfig
from .world import (
    ACTIONS,
    ACTION_INDEX,
    Action,
    DELTAS,
    GridSpec,
    HarmEvent,
    RewardCollected,
    WorldState,
    parse_state_key,
    state_key,
)


@dataclass(frozen=True)
class Verdict:
    """Governance decision on one intended action."""

    kind: str  # "allow" | "block" | "compromise"
    violations: tuple[tuple[str, int], ...] = ()  # (norm id, predicted step)
    suggestion: Optional[Action] = None  # block only
    chosen: Optional[Action] = None  # compromise only
    residual_cost: float = 0.0

    def payload(self) -> dict:
        return {
            "kind": self.kind,
            "violations": [list(v) for v in self.violations],
            "suggestion": self.suggestion.value if self.suggestion else None,
            "chosen": self.chosen.value if self.chosen else None,
            "residual_cost": self.residual_cost,
        }


@dataclass(frozen=True)
class GoalRevision:
    goal_id: str
    weight: float
    description: str


@dataclass(frozen=True)
class ProgressReport:
    status: str  # "stuck" | "not_stuck"
    window: int
    improvement: float
    suggestion: Optional[GoalRevision] = None


@dataclass(frozen=True)
class LearnerReport:
    strategy: str
    hyperparameters: dict
    coverage: float
    accuracy: Optional[float]


@dataclass(frozen=True)
class Inconsistency:
    key: tuple[str, str]  # (state key, action value)
    tabular: str
    rule_based: str
    resolution: str = "trust_empirical"


@dataclass
class GovernorContext:
    """Everything vet/deliberate need beyond the snapshot."""

    ce: ConsequenceEngine
    standard: PerformanceStandard
    cfg: GovernanceConfig
    tier: int
    policy: Policy
    proposal_counts: dict[tuple[str, Action], int]


def what_if(
    state: WorldState,
    action: Action,
    snapshot: ModelSnapshot,
    horizon: int,
    ce: ConsequenceEngine,
    basis: str = TWIN,
) -> tuple[Rollout, float]:
    """Single-action what-if query; pure."""
    ro = ce.rollout(snapshot, state, [action], horizon, basis)
    return ro, ro.norm_cost()


def _effective_horizon(snapshot: ModelSnapshot, cfg: GovernanceConfig) -> int:
    horizon = cfg.horizon
    for n in snapshot.norm_model.active_norms():
        if n.kind is NormKind.OBLIGATION and isinstance(n.predicate, PreventOtherEntering):
            horizon = max(horizon, n.predicate.horizon)
    return max(1, horizon)


def vet(state: WorldState, intended: Action, snapshot: ModelSnapshot, ctx: GovernorContext) -> Verdict:
    """Gate one intended action before actuation.

    Cost-free intentions pass untouched. Otherwise all candidates are
    ranked; a zero-cost candidate yields Block with its first action as the
    suggestion, and if nothing is clean the minimal-cost candidate becomes
    a Compromise (possibly the intended action itself).
    """
    horizon = _effective_horizon(snapshot, ctx.cfg)
    has_obligations = any(n.kind is NormKind.OBLIGATION for n in snapshot.norm_model.active_norms())
    if horizon == 1 and not has_obligations:
        # Fast path, equivalent to a horizon-1 rollout: one twin step plus
        # the prohibition predicates. Dominates tier-1 runs.
        grid = ctx.ce.world.grid
        nxt, _ = ctx.ce.twin.step(state, intended)
        cited = tuple(
            (n.id, 1)
            for n in snapshot.norm_model.active_norms()
            if n.kind is NormKind.PROHIBITION and n.predicate.holds(state, intended, nxt, grid)
        )
        if not cited:
            return Verdict(kind="allow")
    else:
        ro, cost = what_if(state, intended, snapshot, horizon, ctx.ce)
        if cost == 0.0:
            return Verdict(kind="allow")
        cited = tuple((v.norm_id, v.step_index) for v in ro.violations + ro.obligation_breaches)
    candidates = [Hypothesis(id=f"act:{a.value}", plan=(a,)) for a in ACTIONS]
    if ctx.tier >= 3:
        candidates.extend(deliberate(state, snapshot, ctx.cfg.candidates, ctx.cfg.plan_horizon, ctx))
        candidates = _dedup(candidates)
    ranked = ctx.ce.test_hypotheses(candidates, snapshot, state, horizon, ctx.standard)

    best = ranked[0]
    if best.norm_cost == 0.0:
        first = best.plan[0]
        if first == intended:
            # The intended action opens a predicted-clean plan; padding was
            # the only problem. Re-vetted next step anyway.
            return Verdict(kind="allow")
        return Verdict(kind="block", violations=cited, suggestion=first)
    return Verdict(kind="compromise", violations=cited, chosen=best.plan[0], residual_cost=best.norm_cost)


def _dedup(hypotheses: list[Hypothesis]) -> list[Hypothesis]:
    seen: set[tuple[Action, ...]] = set()
    out = []
    for h in hypotheses:
        if h.plan not in seen:
            seen.add(h.plan)
            out.append(h)
    return out


def deliberate(
    state: WorldState,
    snapshot: ModelSnapshot,
    k: int,
    horizon: int,
    ctx: GovernorContext,
) -> list[Hypothesis]:
    """Produce >= k diverse candidate plans and rank them.

    Diversity comes from distinct generators: the greedy policy plan, an
    exploration plan, the all-Wait disengage plan, a planner walk over the
    learned model, and interception plans whenever an active obligation
    predicts harm under inaction. The disengage plan always survives.
    """
    k = max(2, k)
    plans: list[tuple[str, tuple[Action, ...]]] = []
    plans.append(("policy", _policy_plan(state, horizon, ctx, greedy=True)))
    plans.append(("explore", _policy_plan(state, horizon, ctx, greedy=False)))
    plans.append(("disengage", (Action.WAIT,) * horizon))
    plans.append(("planner", _planner_plan(state, snapshot, horizon)))
    plans.extend(("rescue", p) for p in _rescue_plans(state, snapshot, horizon, ctx))

    # Exploration variants keep the pool at k even when generators agree.
    rank = 1
    while len({p for _, p in plans}) < k and rank < len(ACTIONS):
        plans.append((f"explore+{rank}", _policy_plan(state, horizon, ctx, greedy=False, explore_rank=rank)))
        rank += 1

    seen: set[tuple[Action, ...]] = set()
    hypotheses = []
    for source, plan in plans:
        if plan in seen:
            continue
        seen.add(plan)
        hypotheses.append(Hypothesis(id=source, plan=plan))
    eff_horizon = max(horizon, _effective_horizon(snapshot, ctx.cfg))
    return ctx.ce.test_hypotheses(hypotheses, snapshot, state, eff_horizon, ctx.standard)


def _policy_plan(
    state: WorldState,
    horizon: int,
    ctx: GovernorContext,
    greedy: bool,
    explore_rank: int = 0,
) -> tuple[Action, ...]:
    """Walk the twin, picking either the greedy or the least-proposed action."""
    plan: list[Action] = []
    current = state
    for i in range(horizon):
        key = state_key(current)
        if greedy:
            action = ctx.policy.greedy(key)
        else:
            order = propose_exploration(key, ctx.policy, ctx.proposal_counts)
            action = order[min(explore_rank, len(order) - 1) if i == 0 else 0]
        plan.append(action)
        current, _ = ctx.ce.twin.step(current, action)
    return tuple(plan)


def _planner_plan(state: WorldState, snapshot: ModelSnapshot, horizon: int) -> tuple[Action, ...]:
    """BFS over the learned transition graph toward the nearest known reward
    pickup; all-Wait when the model knows of none."""
    start = state_key(state)
    parent: dict[str, tuple[str, Action]] = {}
    seen = {start}
    queue = deque([start])
    goal: Optional[str] = None
    while queue and goal is None:
        key = queue.popleft()
        for action in ACTIONS:
            nxt = snapshot.transition.predict(key, action)
            if nxt is None:
                continue
            if _consumed_count(nxt) > _consumed_count(key):
                parent[nxt] = (key, action)
                goal = nxt
                break
            if nxt not in seen:
                seen.add(nxt)
                parent[nxt] = (key, action)
                queue.append(nxt)
    if goal is None:
        return (Action.WAIT,) * horizon
    path: list[Action] = []
    cur = goal
    while cur != start:
        prev, action = parent[cur]
        path.append(action)
        cur = prev
    path.reverse()
    path = path[:horizon]
    return tuple(path) + (Action.WAIT,) * (horizon - len(path))


def _consumed_count(key: str) -> int:
    consumed = key.rsplit("|", 1)[1]
    return consumed.count("+") + 1 if consumed else 0


def _rescue_plans(
    state: WorldState,
    snapshot: ModelSnapshot,
    horizon: int,
    ctx: GovernorContext,
    limit: int = 3,
) -> list[tuple[Action, ...]]:
    """Interception plans for active obligations.

    Only produced when inaction predicts a breach: for each cell the victim
    NPC will cross before harm, plan the shortest walk that parks the agent
    there no later than the NPC arrives; occupancy then blocks the NPC.
    """
    obligations = [
        n for n in snapshot.norm_model.active_norms()
        if n.kind is NormKind.OBLIGATION and isinstance(n.predicate, PreventOtherEntering)
    ]
    if not obligations:
        return []
    eff = max(horizon, max(n.predicate.horizon for n in obligations))
    null_ro = ctx.ce.rollout(snapshot, state, [Action.WAIT], eff)
    if not null_ro.obligation_breaches:
        return []

    grid = ctx.ce.world.grid
    # Victim paths under inaction: cells each NPC enters, in arrival order.
    npc_path: dict[str, list[tuple[int, tuple[int, int]]]] = {}
    prev = {nid: pos for nid, pos in state.npc_positions if pos is not None}
    harmed_at: dict[str, int] = {}
    for i, (st, events) in enumerate(null_ro.trajectory):
        for ev in events:
            if isinstance(ev, HarmEvent):
                harmed_at[ev.npc_id] = i + 1
        for nid, pos in st.npc_positions:
            if pos is not None and prev.get(nid) not in (None, pos):
                npc_path.setdefault(nid, []).append((i + 1, pos))
            if pos is not None:
                prev[nid] = pos

    plans: list[tuple[Action, ...]] = []
    for nid, harm_step in sorted(harmed_at.items()):
        for arrive_step, cell in npc_path.get(nid, []):
            if arrive_step >= harm_step:
                continue
            walk = _shortest_walk(grid, state.agent_pos, cell)
            if walk is None or len(walk) > arrive_step or len(walk) > eff:
                continue
            plan = tuple(walk) + (Action.WAIT,) * (eff - len(walk))
            plans.append(plan[:eff])
            if len(plans) >= limit:
                return plans
    return plans


def _shortest_walk(grid: GridSpec, start, target) -> Optional[list[Action]]:
    """BFS over passable cells, deterministic expansion in action order."""
    if start == target:
        return []
    parent: dict[tuple[int, int], tuple[tuple[int, int], Action]] = {}
    seen = {start}
    queue = deque([start])
    while queue:
        pos = queue.popleft()
        for action in ACTIONS[:4]:
            dx, dy = DELTAS[action]
            nxt = (pos[0] + dx, pos[1] + dy)
            if nxt in seen or not grid.passable(nxt):
                continue
            parent[nxt] = (pos, action)
            if nxt == target:
                path = []
                cur = nxt
                while cur != start:
                    p, a = parent[cur]
                    path.append(a)
                    cur = p
                path.reverse()
                return path
            seen.add(nxt)
            queue.append(nxt)
    return None


# --- progress and learning introspection ------------------------------------

def assess_progress(episode_returns: list[float], window: int, eps: float) -> ProgressReport:
    """Black-box stuckness check: best of the last window vs the one before.

    Needs two full windows of completed episodes.
    """
    if len(episode_returns) < 2 * window:
        raise InsufficientHistory(f"need {2 * window} episodes, have {len(episode_returns)}")
    recent = episode_returns[-window:]
    previous = episode_returns[-2 * window:-window]
    improvement = max(recent) - max(previous)
    if improvement < eps:
        suggestion = GoalRevision(
            goal_id="exploration_bonus",
            weight=0.5,
            description="reward first visits to unvisited state-action pairs",
        )
        return ProgressReport("stuck", window, improvement, suggestion)
    return ProgressReport("not_stuck", window, improvement, None)


@dataclass
class TraceStats:
    """Counters the engine maintains for introspection reports."""

    executed_counts: dict[tuple[str, Action], int]
    reachable_pairs: int
    prediction_outcomes: list[bool]  # recent model-prediction hits/misses
    accuracy_window: int = 50


def introspect_learning(policy: Policy, stats: TraceStats) -> LearnerReport:
    """White-box report on the active learning mechanism."""
    visited = sum(1 for c in stats.executed_counts.values() if c > 0)
    coverage = visited / stats.reachable_pairs if stats.reachable_pairs else 0.0
    recent = stats.prediction_outcomes[-stats.accuracy_window:]
    accuracy = sum(recent) / len(recent) if recent else None
    return LearnerReport(
        strategy=policy.strategy_id,
        hyperparameters=policy.hyperparameters(),
        coverage=min(coverage, 1.0),
        accuracy=accuracy,
    )


def switch_strategy(target: str, registry: dict[str, Callable[[], Policy]]) -> Policy:
    """Swap the policy strategy; models and goals are untouched by design."""
    if target not in registry:
        raise UnknownStrategy(target)
    return registry[target]()


# --- re-representation (tier 4) ----------------------------------------------

def re_represent(model: TransitionModel, grid: GridSpec) -> RuleSetModel:
    """Generalize the tabular self-model into displacement rules.

    One rule per action over the target-cell property 'passable'; tabular
    entries the rules cannot reproduce (reward pickups, NPC motion, injected
    anomalies) become explicit exceptions, which take precedence.
    """
    if not model.table:
        raise EmptyModel("cannot re-represent an empty transition model")
    rules = [
        MotionRule("target_passable", a, DELTAS[a]) for a in ACTIONS[:4]
    ] + [MotionRule("any", Action.WAIT, None)]
    ruleset = RuleSetModel(rules, exceptions={})
    for (key, action), nxt in model.table.items():
        if ruleset.predict(key, action, grid) != nxt:
            ruleset.exceptions[(key, action)] = nxt
    return ruleset


def reconcile(tabular: TransitionModel, ruleset: RuleSetModel, grid: GridSpec) -> list[Inconsistency]:
    """Find all keys where the two representations disagree and let the
    empirical table win by rewriting the rule set's exception list."""
    out: list[Inconsistency] = []
    for (key, action), nxt in sorted(tabular.table.items(), key=lambda kv: (kv[0][0], ACTION_INDEX[kv[0][1]])):
        predicted = ruleset.predict(key, action, grid)
        if predicted != nxt:
            out.append(Inconsistency(key=(key, action.value), tabular=nxt, rule_based=predicted))
            ruleset.exceptions[(key, action)] = nxt
    return out
