"""Run engine: the fixed per-step pipeline and episodic loop schedules.

Per-step order (loops fire only when the tier enables them):

    inject (L4) -> sense -> record + learn (L2/L3) -> propose (L5 may
    substitute) -> vet (L1) -> actuate -> critic -> learn -> episode hooks
    (L6 at episode end, L7/L8 on episode schedules)

The order is total and documented rather than event-driven so that
identical (scenario, tier, seed) inputs replay byte-for-byte. Tier 0 skips
the reflective layer entirely and runs the bare operational agent.
"""
from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from . import agent as agent_mod
from .agent import (
    Feedback,
    PerformanceStandard,
    PlannerPolicy,
    Policy,
    QTablePolicy,
    checkpoint_hash,
    criticize,
    propose_exploration,
)
from .consequence import ConsequenceEngine, Hypothesis
from .errors import ConfigError
from .governance import (
    GovernorContext,
    TraceStats,
    Verdict,
    assess_progress,
    deliberate,
    introspect_learning,
    re_represent,
    reconcile,
    switch_strategy,
    vet,
)
from .learning import (
    KolbPhase,
    NormChange,
    infer_norms,
    integrate_design_goal,
    integrate_sign,
    kolb_tick,
    learn_other,
    learn_transitions,
)
from .loops import COMPOSITIONS, LoopId, TierConfig, TraceSink
from .models import Observation, ReflectiveModelStore, ModelSnapshot
from .norms import enumerate_instances
from .scenario import ScenarioConfig
from .world import (
    ACTIONS,
    Action,
    EpisodeEnded,
    HarmEvent,
    Percept,
    RewardCollected,
    SanctionEvent,
    SignPerceived,
    World,
    state_key,
)

TRACE_SCHEMA = 1


def event_payload(ev) -> dict:
    """Canonical, compact serialization of one step event."""
    if isinstance(ev, RewardCollected):
        return {"t": "reward", "pos": list(ev.pos), "value": ev.value}
    if isinstance(ev, SanctionEvent):
        return {"t": "sanction", "norm": ev.norm_id, "penalty": ev.penalty}
    if isinstance(ev, HarmEvent):
        return {"t": "harm", "npc": ev.npc_id, "pos": list(ev.pos)}
    if isinstance(ev, SignPerceived):
        return {"t": "sign", "norm": ev.norm_id, "pos": list(ev.pos)}
    if isinstance(ev, EpisodeEnded):
        return {"t": "episode_end", "reason": ev.reason, "penalty": ev.penalty}
    raise TypeError(f"unknown event {ev!r}")


@dataclass
class MetricsReport:
    """Per-run counters; every figure is recomputable from the trace alone."""

    violations: int = 0
    blocks: int = 0
    compromises: int = 0
    harm_events: int = 0
    total_reward: float = 0.0
    steps: int = 0
    episodes_completed: int = 0
    norms_inferred: list = field(default_factory=list)  # {id, promoted_at, first_support_step, latency, support}
    sign_integrations: list = field(default_factory=list)  # {norm, perceived_step, integrated_step}
    stuck_detections: int = 0
    coverage_curve: list = field(default_factory=list)  # [step, coverage]
    harms_prevented: Optional[int] = None  # needs a tier-0 baseline to compute

    def payload(self) -> dict:
        return {
            "violations": self.violations,
            "blocks": self.blocks,
            "compromises": self.compromises,
            "harm_events": self.harm_events,
            "total_reward": self.total_reward,
            "steps": self.steps,
            "episodes_completed": self.episodes_completed,
            "norms_inferred": self.norms_inferred,
            "sign_integrations": self.sign_integrations,
            "stuck_detections": self.stuck_detections,
            "coverage_curve": self.coverage_curve,
            "harms_prevented": self.harms_prevented,
        }


@dataclass
class RunResult:
    metrics: MetricsReport
    episode_returns: list[float]
    trace_lines: Optional[list[str]] = None


@dataclass
class _Curiosity:
    active: bool = False
    bottom_decile: tuple = ()
    initial_coverage: float = 0.0
    episodes_left: int = 0
    entries_at_start: int = 0


class Engine:
    """One seeded run of one scenario at one tier."""

    def __init__(
        self,
        scenario: ScenarioConfig,
        tier: int,
        seed: int,
        trace_path: Optional[str] = None,
        keep_trace: bool = True,
        collect_trace: bool = True,
    ):
        self.scenario = scenario
        self.tier_config = TierConfig(tier)
        self.tier = tier
        self.seed = seed
        if scenario.injections and tier < 2:
            raise ConfigError("scheduled injections need tier >= 2 (Loop 4 is gated off)")

        self.world = World(scenario.grid, scenario.norms)
        self.state = self.world.initial_state()
        self.store = ReflectiveModelStore()
        for gid, weight in scenario.standard_weights.items():
            self.store.goals.upsert(gid, weight, "design", step=0)
        for nid in sorted(scenario.known_ids):
            self.store.norm_model.add(scenario.norm_by_id(nid))
        self.store.norm_model.seed_hypotheses(
            enumerate_instances(
                scenario.grid, scenario.inference.templates_enabled, scenario.inference.step_thresholds
            )
        )

        self.policy: Policy = self._make_policy(scenario.policy.strategy)
        self.ce = ConsequenceEngine(self.world, scenario.twin)

        self.trace: Optional[TraceSink] = None
        if trace_path or collect_trace:
            self.trace = TraceSink(self.tier_config, trace_path, keep=keep_trace)

        self.proposal_counts: dict[tuple[str, Action], int] = {}
        self.executed_counts: dict[tuple[str, Action], int] = {}
        self.prediction_outcomes: list[bool] = []
        self.episode_returns: list[float] = []
        self.episode_return = 0.0
        self.episode_start_step = 0
        self.episode_visited: list[str] = []
        self.metrics = MetricsReport()
        self.kolb_phase = KolbPhase.CONCRETE_EXPERIENCE
        self.curiosity = _Curiosity()
        self.compositions_active = frozenset(
            name for name in scenario.compositions
            if name in COMPOSITIONS and COMPOSITIONS[name] <= self.tier_config.enabled_loops
        )
        self._recent_nonallow: deque = deque(maxlen=10)
        self._pending_hypothesis: Optional[Hypothesis] = None
        self._sign_first_seen: dict[str, int] = {}
        self._reachable_pairs_cache: Optional[list[tuple[str, Action]]] = None
        self._injections = list(scenario.injections)
        self._pending_percept: Percept = self.world.initial_percept(self.state)
        self._pending_obs: Optional[Observation] = None
        self._header_emitted = False

    # --- setup helpers -------------------------------------------------------

    def _make_policy(self, strategy: str) -> Policy:
        cfg = self.scenario.policy
        if strategy == "qtable":
            return QTablePolicy(
                alpha=cfg.alpha, gamma=cfg.gamma, epsilon=cfg.epsilon,
                init_q=cfg.init_q, seed=self.seed,
            )
        return PlannerPolicy(
            gamma=cfg.gamma,
            planning_horizon=cfg.planning_horizon,
            transition_lookup=lambda k, a: self.store.transition.predict(k, a),
        )

    def _emit_header(self, max_steps: int):
        if self.trace is None or self._header_emitted:
            return
        self._header_emitted = True
        text = self.scenario.text
        self.trace.emit(
            step=0, episode=0, loop=None, kind="header",
            payload={
                "schema": TRACE_SCHEMA,
                "scenario_name": self.scenario.name,
                "scenario_sha256": hashlib.sha256(text.encode()).hexdigest(),
                "scenario_text": text,
                "tier": self.tier,
                "seed": self.seed,
                "max_steps": max_steps,
            },
            seed_context=self.seed,
        )

    def _emit(self, loop, kind, payload, phase=None):
        if self.trace is None:
            return None
        draws = getattr(self.policy, "draws", 0)
        return self.trace.emit(
            step=self.state.step, episode=self.state.episode, loop=loop,
            kind=kind, payload=payload, seed_context=draws, phase=phase,
        )

    def standard(self) -> PerformanceStandard:
        # Rebuilt only when the goal store has actually been revised.
        revs = len(self.store.goals.revisions)
        cached = getattr(self, "_standard_cache", None)
        if cached is None or cached[0] != revs:
            cached = (revs, PerformanceStandard(self.store.goals.weights()))
            self._standard_cache = cached
        return cached[1]

    def governor_context(self) -> GovernorContext:
        return GovernorContext(
            ce=self.ce,
            standard=self.standard(),
            cfg=self.scenario.governance,
            tier=self.tier,
            policy=self.policy,
            proposal_counts=self.proposal_counts,
        )

    # --- reachability (used for coverage metrics and curiosity) -------------

    def reachable_pairs(self) -> list[tuple[str, Action]]:
        """All (state-key, action) pairs reachable from the episode start
        under real dynamics; exact at desk scale, cached per run."""
        if self._reachable_pairs_cache is None:
            start = self.world.initial_state()
            seen = {state_key(start)}
            frontier = [start]
            while frontier:
                st = frontier.pop()
                for action in ACTIONS:
                    nxt, _ = self.world.step(st, action)
                    key = state_key(nxt)
                    if key not in seen:
                        seen.add(key)
                        frontier.append(nxt)
            self._reachable_pairs_cache = [(k, a) for k in sorted(seen) for a in ACTIONS]
        return self._reachable_pairs_cache

    def coverage(self) -> float:
        pairs = self.reachable_pairs()
        visited = sum(1 for p in pairs if self.executed_counts.get(p, 0) > 0)
        return visited / len(pairs) if pairs else 0.0

    # --- the step pipeline ---------------------------------------------------

    def run_step(self) -> None:
        scn = self.scenario
        tier = self.tier
        state = self.state
        key = state_key(state)

        # Loop 4: scheduled design injections land at exactly their step.
        if tier >= 2:
            while self._injections and self._injections[0].at_step <= state.step:
                inj = self._injections.pop(0)
                applied = integrate_design_goal(self.store.norm_model, self.store.goals, inj, state.step)
                self.store.bump()
                self._emit(LoopId.L4, "injection", {"applied": applied, "at_step": inj.at_step})

        # Sense: percept produced by the previous actuation (or episode start).
        percept = self._pending_percept

        # Loop 2/3: record, learn, infer, integrate.
        if tier >= 2:
            self._reflect(percept)

        # Propose: performance element, optionally overridden by Loop 5.
        policy_intended = agent_mod.select_action(key, self.policy)
        intended = policy_intended
        proposal_source = "policy"
        if tier >= 3:
            substituted = self._experiment_proposal(key, state)
            if substituted is not None:
                intended, proposal_source = substituted
        if tier >= 2:
            self._kolb_advance(KolbPhase.ACTIVE_EXPERIMENTATION, {"proposal_source": proposal_source})
        self.proposal_counts[(key, intended)] = self.proposal_counts.get((key, intended), 0) + 1

        # Loop 1: vet before actuation; hard ordering contract.
        verdict = Verdict(kind="allow")
        executed = intended
        blocks = 0
        if tier >= 1:
            snapshot = self._borrow_snapshot()
            verdict = vet(state, intended, snapshot, self.governor_context())
            if verdict.kind == "block":
                executed = verdict.suggestion if verdict.suggestion is not None else Action.WAIT
                blocks = 1
                self.metrics.blocks += 1
            elif verdict.kind == "compromise":
                executed = verdict.chosen if verdict.chosen is not None else Action.WAIT
                self.metrics.compromises += 1
            ev = self._emit(LoopId.L1, "verdict", verdict.payload() | {"intended": intended.value})
            if verdict.kind != "allow" and ev is not None:
                self._recent_nonallow.append((ev.seq, state.step, intended.value, verdict.kind))

        # Actuate.
        new_state, new_percept = self.world.step(state, executed)
        if tier >= 2:
            self._kolb_advance(KolbPhase.CONCRETE_EXPERIENCE, {"executed": executed.value})
        ended = any(isinstance(e, EpisodeEnded) for e in new_percept.events)
        if not ended and new_state.step - self.episode_start_step >= scn.run.max_episode_steps:
            new_percept = Percept(
                new_state, new_percept.events + (EpisodeEnded("step_limit", 0.0),), new_percept.step
            )
            ended = True

        # Critic: environment feedback plus intervention penalties.
        novel = self.executed_counts.get((key, executed), 0) == 0
        feedback = criticize(new_percept, self.standard(), blocks=blocks, novel_visit=novel)
        self.episode_return += feedback.scalar

        # Learning element. A block's penalty is attributed to the intended
        # action (the thing to stop proposing), not the executed fallback.
        new_key = state_key(new_state)
        predicted = self.store.transition.predict(key, executed)
        if predicted is not None:
            self.prediction_outcomes.append(predicted == new_key)
        if blocks:
            weights = self.standard().weights
            env_components = {g: c for g, c in feedback.components.items() if g != "intervention"}
            env_scalar = sum(weights[g] * c for g, c in env_components.items())
            agent_mod.learn(Feedback(env_scalar, env_components, feedback.step), (key, executed, new_key), self.policy)
            pen = weights.get("intervention", 0.0) * -float(blocks)
            agent_mod.learn(Feedback(pen, {"intervention": -float(blocks)}, feedback.step), (key, intended, key), self.policy)
            if tier >= 3:
                self._emit(LoopId.L5, "intervention_learning", {"intended": intended.value, "penalty": pen})
        else:
            agent_mod.learn(feedback, (key, executed, new_key), self.policy)
        if isinstance(self.policy, PlannerPolicy):
            self.policy.sweep(self.episode_visited[-64:] + [key])

        self.executed_counts[(key, executed)] = self.executed_counts.get((key, executed), 0) + 1
        self.episode_visited.append(key)

        # Hypothesis outcome check for a substituted experiment (Loop 5).
        if self._pending_hypothesis is not None:
            self._resolve_hypothesis(new_percept)

        # Bookkeeping, trace, metrics.
        self._pending_obs = Observation(new_state.step, key, executed, new_key, new_percept.events)
        self._update_metrics(new_percept, feedback)
        if self.trace is not None:
            self._emit(None, "step", {
                "key": key,
                "policy": policy_intended.value,
                "intended": intended.value,
                "executed": executed.value,
                "source": proposal_source,
                "verdict": verdict.kind,
                "events": [event_payload(e) for e in new_percept.events],
                "feedback": {"scalar": feedback.scalar, "components": feedback.components},
            })

        if ended:
            self._end_episode(new_state, new_percept)
        else:
            self.state = new_state
            self._pending_percept = new_percept

    def _borrow_snapshot(self) -> ModelSnapshot:
        # Zero-copy view: safe because the pipeline is single-threaded and
        # nothing mutates the store while the governor reads it. Concurrent
        # consumers must use store.snapshot_models() instead.
        s = self.store
        return ModelSnapshot(s.version, s.transition, s.other, s.norm_model, s.goals)

    # --- reflective layer pieces ---------------------------------------------

    def _reflect(self, percept: Percept) -> None:
        scn = self.scenario
        if self._pending_obs is not None:
            obs = self._pending_obs
            self._pending_obs = None
            self.store.record(obs)
            self._kolb_advance(KolbPhase.REFLECTIVE_OBSERVATION, {"recorded_step": obs.step})
            delta = [obs]
            corrections = learn_transitions(delta, self.store.transition)
            corrections += learn_other(delta, self.store.other)
            changes = infer_norms(delta, self.store.norm_model, scn.inference, scn.grid)
            self.store.bump()
            self._kolb_advance(
                KolbPhase.ABSTRACT_CONCEPTUALISATION,
                {"corrections": len(corrections), "norm_changes": len(changes)},
            )
            for corr in corrections:
                self._emit(LoopId.L2, "model_correction", {
                    "kind": corr.kind, "key": corr.key, "old": corr.old, "new": corr.new,
                })
            for change in changes:
                self._note_norm_change(change)
        else:
            # Episode start: the cycle still turns, with nothing to fold in.
            self._kolb_advance(KolbPhase.REFLECTIVE_OBSERVATION, {"recorded_step": None})
            self._kolb_advance(KolbPhase.ABSTRACT_CONCEPTUALISATION, {"corrections": 0, "norm_changes": 0})

        for ev in percept.iter_events(SignPerceived):
            self._sign_first_seen.setdefault(ev.norm_id, percept.step)
            spec = self.scenario.norm_by_id(ev.norm_id)
            before = checkpoint_hash(self.policy)
            added = integrate_sign(self.store.norm_model, spec)
            if added:
                self.store.bump()
                goal = self.scenario.sign_goals.get(ev.pos)
                if goal is not None:
                    self.store.goals.upsert(goal.goal_id, goal.weight, "environment", self.state.step)
                after = checkpoint_hash(self.policy)
                self.metrics.sign_integrations.append({
                    "norm": ev.norm_id,
                    "perceived_step": self._sign_first_seen[ev.norm_id],
                    "integrated_step": self.state.step,
                })
                self._emit(LoopId.L3, "sign_integration", {
                    "norm": ev.norm_id,
                    "policy_hash_before": before,
                    "policy_hash_after": after,
                })

    def _note_norm_change(self, change: NormChange) -> None:
        stats = self.store.norm_model.hypothesis_space.get(change.predicate_key)
        first_step = stats[1].first_support_step if stats else None
        if change.kind == "promotion":
            self.metrics.norms_inferred.append({
                "id": change.norm_id,
                "promoted_at": change.step,
                "first_support_step": first_step,
                "latency": change.step - first_step if first_step is not None else None,
                "support": change.support,
            })
        self._emit(LoopId.L3, f"norm_{change.kind}", {
            "norm": change.norm_id,
            "predicate": change.predicate_key,
            "support": change.support,
            "counterexamples": change.counterexamples,
            "severity": change.severity,
        })

    def _kolb_advance(self, expected: KolbPhase, detail: dict) -> None:
        # The fixed pipeline turns the cycle exactly once per step, so the
        # tick always lands on the phase the call site is performing.
        self.kolb_phase = kolb_tick(self.kolb_phase)
        assert self.kolb_phase is expected
        self._emit(LoopId.L2, "kolb", detail, phase=self.kolb_phase.value)

    # --- Loop 5: experiments ---------------------------------------------------

    def _experiment_proposal(self, key: str, state) -> Optional[tuple[Action, str]]:
        scn = self.scenario
        if self.curiosity.active:
            action, target = self._curiosity_action(key)
            self._emit(LoopId.L5, "experiment", {
                "source": "curiosity", "action": action.value,
                "target_key": target[0], "target_action": target[1].value,
                "target_count": self.proposal_counts.get(target, 0),
            })
            self._pending_hypothesis = Hypothesis(id="curiosity", plan=(action,))
            self._prime_hypothesis(state)
            return action, "curiosity"
        every = scn.run.experiment_every
        if every > 0 and state.step > 0 and state.step % every == 0:
            action = propose_exploration(key, self.policy, self.proposal_counts)[0]
            self._emit(LoopId.L5, "experiment", {
                "source": "exploration", "action": action.value,
                "count": self.proposal_counts.get((key, action), 0),
            })
            self._pending_hypothesis = Hypothesis(id="exploration", plan=(action,))
            self._prime_hypothesis(state)
            return action, "exploration"
        return None

    def _prime_hypothesis(self, state) -> None:
        h = self._pending_hypothesis
        snapshot = self._borrow_snapshot()
        ro = self.ce.rollout(snapshot, state, h.plan, 1)
        h.rollout = ro
        h.norm_cost = ro.norm_cost()
        h.value = self.ce.predicted_value(ro, self.standard())

    def _resolve_hypothesis(self, actual: Percept) -> None:
        h = self._pending_hypothesis
        self._pending_hypothesis = None
        if h is None or h.rollout is None or not h.rollout.trajectory:
            return
        _, predicted_events = h.rollout.trajectory[0]
        pred_dyn = sorted(
            str(event_payload(e)) for e in predicted_events if not isinstance(e, (SanctionEvent, SignPerceived))
        )
        actual_dyn = sorted(
            str(event_payload(e)) for e in actual.events if not isinstance(e, (SanctionEvent, SignPerceived))
        )
        h.status = "supported" if pred_dyn == actual_dyn else "refuted"
        self._emit(LoopId.L5, "hypothesis_test", {
            "id": h.id,
            "plan": "".join(a.value for a in h.plan),
            "status": h.status,
        })

    def _curiosity_action(self, key: str) -> tuple[Action, tuple[str, Action]]:
        """Route exploration toward the globally least-proposed reachable key."""
        model = self.store.transition
        # Reachable keys through the learned graph, deterministic expansion.
        seen = {key}
        order = [key]
        queue = deque([key])
        parent: dict[str, tuple[str, Action]] = {}
        while queue:
            k = queue.popleft()
            for action in ACTIONS:
                nxt = model.predict(k, action)
                if nxt is not None and nxt not in seen:
                    seen.add(nxt)
                    parent[nxt] = (k, action)
                    order.append(nxt)
                    queue.append(nxt)
        target = min(
            ((k, a) for k in order for a in ACTIONS),
            key=lambda p: (self.proposal_counts.get(p, 0), p[0], p[1].value),
        )
        if target[0] == key:
            return target[1], target
        # First action along the learned path toward the target state.
        cur = target[0]
        while parent.get(cur, (None, None))[0] not in (key, None):
            cur = parent[cur][0]
        step_action = parent.get(cur, (None, Action.WAIT))[1]
        return step_action, target

    # --- episode boundaries -----------------------------------------------------

    def _end_episode(self, final_state, percept: Percept) -> None:
        scn = self.scenario
        self.state = final_state  # hooks trace against the closing step
        self.episode_returns.append(self.episode_return)
        self.metrics.episodes_completed += 1
        self.episode_return = 0.0
        self.episode_visited = []
        episodes = self.metrics.episodes_completed

        if self.tier >= 3:
            self._episode_progress(self.world.reset(final_state))
        if self.tier >= 3 and scn.run.l7_every_episodes > 0 and episodes % scn.run.l7_every_episodes == 0:
            report = introspect_learning(self.policy, self._trace_stats())
            self._emit(LoopId.L7, "learner_report", {
                "strategy": report.strategy,
                "hyperparameters": report.hyperparameters,
                "coverage": report.coverage,
                "accuracy": report.accuracy,
            })
        if self.tier >= 4 and scn.run.l8_every_episodes > 0 and episodes % scn.run.l8_every_episodes == 0:
            self._fire_l8()

        if self.curiosity.active:
            self._curiosity_tick()

        self.state = self.world.reset(final_state)
        self.episode_start_step = self.state.step
        self._pending_percept = self.world.initial_percept(self.state)

    def _trace_stats(self) -> TraceStats:
        return TraceStats(
            executed_counts=self.executed_counts,
            reachable_pairs=len(self.reachable_pairs()),
            prediction_outcomes=self.prediction_outcomes,
        )

    def _episode_progress(self, next_start) -> None:
        scn = self.scenario
        window = scn.progress.window
        if len(self.episode_returns) < 2 * window:
            return
        report = assess_progress(self.episode_returns, window, scn.progress.epsilon)
        payload = {
            "status": report.status,
            "window": report.window,
            "improvement": report.improvement,
            "suggestion": None if report.suggestion is None else {
                "goal": report.suggestion.goal_id, "weight": report.suggestion.weight,
            },
        }
        self._emit(LoopId.L6, "progress", payload)
        if report.status != "stuck":
            return
        self.metrics.stuck_detections += 1
        if report.suggestion is not None and scn.run.allow_goal_self_apply:
            self.store.goals.upsert(
                report.suggestion.goal_id, report.suggestion.weight, "progress", self.state.step,
                description=report.suggestion.description,
            )
            self.store.bump()
        if "curiosity" in self.compositions_active and not self.curiosity.active:
            self._activate_curiosity()
        # Stuckness triggers a deliberation over ways forward from the next
        # episode start (always includes the disengage plan); with the right
        # composition it also weighs directions for future learning.
        ranked = deliberate(
            next_start, self._borrow_snapshot(), scn.governance.candidates,
            scn.governance.plan_horizon, self.governor_context(),
        )
        payload = {"hypotheses": [
            {"id": h.id, "plan": "".join(a.value for a in h.plan), "cost": h.norm_cost, "value": h.value}
            for h in ranked
        ]}
        if "deliberative_direction" in self.compositions_active and report.suggestion is not None:
            payload["direction_options"] = [{
                "goal": report.suggestion.goal_id, "weight": report.suggestion.weight,
                "applied": scn.run.allow_goal_self_apply,
            }]
        self._emit(LoopId.L5, "deliberation", payload)

    def _activate_curiosity(self) -> None:
        pairs = self.reachable_pairs()
        ranked = sorted(pairs, key=lambda p: (self.executed_counts.get(p, 0), p[0], p[1].value))
        decile = ranked[: max(1, len(ranked) // 10)]
        covered = sum(1 for p in decile if self.executed_counts.get(p, 0) > 0)
        self.curiosity = _Curiosity(
            active=True,
            bottom_decile=tuple(decile),
            initial_coverage=covered / len(decile),
            episodes_left=self.scenario.curiosity.budget_episodes,
            entries_at_start=len(self.store.transition.table),
        )
        self._emit(LoopId.L6, "curiosity_activated", {
            "composition": "curiosity",
            "decile_size": len(decile),
            "initial_coverage": self.curiosity.initial_coverage,
            "budget_episodes": self.curiosity.episodes_left,
        })

    def _curiosity_tick(self) -> None:
        cur = self.curiosity
        cur.episodes_left -= 1
        decile = cur.bottom_decile
        covered = sum(1 for p in decile if self.executed_counts.get(p, 0) > 0)
        coverage = covered / len(decile) if decile else 1.0
        target = min(1.0, 2 * cur.initial_coverage) if cur.initial_coverage > 0 else 0.1
        done = coverage >= target or cur.episodes_left <= 0
        if done:
            gained = len(self.store.transition.table) - cur.entries_at_start
            cur.active = False
            self._curiosity_gain = gained
            self._emit(LoopId.L6, "curiosity_deactivated", {
                "composition": "curiosity",
                "coverage": coverage,
                "reason": "coverage" if coverage >= target else "budget",
                "transitions_gained": gained,
            })

    def _fire_l8(self) -> None:
        if not self.store.transition.table:
            return
        grid = self.scenario.grid
        ruleset = re_represent(self.store.transition, grid)
        inconsistencies = reconcile(self.store.transition, ruleset, grid)
        payload = {
            "rules": len(ruleset.rules),
            "exceptions": len(ruleset.exceptions),
            "inconsistencies": [
                {"key": list(inc.key), "tabular": inc.tabular, "rule_based": inc.rule_based}
                for inc in inconsistencies
            ],
        }
        if "governance_reflection" in self.compositions_active and self._recent_nonallow:
            reviewed = list(self._recent_nonallow)
            active_ids = {n.id for n in self.store.norm_model.active_norms()}
            still = sum(1 for _seq, _step, _intended, kind in reviewed if kind in ("block", "compromise"))
            payload["reviewed_verdicts"] = [seq for seq, _s, _i, _k in reviewed]
            payload["interventions_reviewed"] = still
            payload["active_norms"] = sorted(active_ids)
        if "curiosity_integrate" in self.compositions_active and getattr(self, "_curiosity_gain", None):
            payload["curiosity_yield"] = self._curiosity_gain
            self._curiosity_gain = None
        self._emit(LoopId.L8, "re_representation", payload)

    # --- metrics -----------------------------------------------------------------

    def _update_metrics(self, percept: Percept, feedback: Feedback) -> None:
        m = self.metrics
        m.steps += 1
        for ev in percept.events:
            if isinstance(ev, SanctionEvent):
                m.violations += 1
            elif isinstance(ev, HarmEvent):
                m.harm_events += 1
            elif isinstance(ev, RewardCollected):
                m.total_reward += ev.value
        if self.trace is not None and m.steps % 100 == 0:
            m.coverage_curve.append([self.state.step, round(self.coverage(), 6)])

    # --- run loop ------------------------------------------------------------------

    def run(self, max_steps: int) -> RunResult:
        self._emit_header(max_steps)
        for _ in range(max_steps):
            self.run_step()
        if self.trace is not None:
            self.trace.emit(
                step=self.state.step, episode=self.state.episode, loop=None,
                kind="metrics", payload=self.metrics.payload(), seed_context=self.seed,
            )
            self.trace.close()
        return RunResult(
            metrics=self.metrics,
            episode_returns=list(self.episode_returns),
            trace_lines=self.trace.lines() if self.trace and self.trace.keep else None,
        )

    # --- control channel -------------------------------------------------------

    def switch_policy_strategy(self, target: str) -> None:
        """Loop 7 control: swap the learning strategy, keep models and goals."""
        registry = {
            "qtable": lambda: self._make_policy("qtable"),
            "planner": lambda: self._make_policy("planner"),
        }
        self.policy = switch_strategy(target, registry)
        if self.tier >= 3:
            self._emit(LoopId.L7, "strategy_switch", {"to": target})

    def latest_reports(self) -> dict:
        """Most recent learner/progress reports, recomputed on demand."""
        report = introspect_learning(self.policy, self._trace_stats())
        out = {"learner": {
            "strategy": report.strategy, "coverage": report.coverage, "accuracy": report.accuracy,
        }}
        window = self.scenario.progress.window
        if len(self.episode_returns) >= 2 * window:
            prog = assess_progress(self.episode_returns, window, self.scenario.progress.epsilon)
            out["progress"] = {"status": prog.status, "improvement": prog.improvement}
        return out
