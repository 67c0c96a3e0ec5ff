"""Consequence engine: internal hypothesis testing before acting.

Rollouts predict trajectories either in the environment twin or by folding
the learned transition and other-agent tables. Norm accounting is always
done against the agent's own norm model, never against ground truth: the
twin may reproduce environment sanction events bit-for-bit at fidelity 1,
but governance only ever reads the model-derived violation list, so hidden
norms stay hidden until learned.

Rollouts are pure functions of (snapshot, state, plan); nothing here
mutates the real world, and a hypothesis batch can be evaluated in any
order without changing the final ranking.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .agent import PerformanceStandard, criticize
from .errors import EmptyPlan
from .models import ModelSnapshot
from .norms import NormKind, PreventOtherEntering
from .world import (
    ACTION_INDEX,
    Action,
    CellKind,
    EpisodeEnded,
    HarmEvent,
    Percept,
    RewardCollected,
    SanctionEvent,
    TwinConfig,
    TwinHandle,
    World,
    WorldState,
    parse_state_key,
    state_key,
)

TWIN = "twin"
LEARNED = "learned"


@dataclass(frozen=True, slots=True)
class Violation:
    norm_id: str
    severity: float
    step_index: int  # 1-based position within the rollout


@dataclass
class Rollout:
    """Predicted consequence record for one candidate plan."""

    plan: tuple[Action, ...]
    horizon: int
    basis: str
    trajectory: list[tuple[WorldState, tuple]]  # (predicted state, dynamics events)
    violations: list[Violation]  # prohibition hits per the agent's norm model
    obligation_breaches: list[Violation]
    reward_total: float
    harm_count: int
    confidence: float

    def norm_cost(self) -> float:
        return sum(v.severity for v in self.violations) + sum(v.severity for v in self.obligation_breaches)

    def digest(self) -> dict:
        return {
            "plan": "".join(a.value for a in self.plan),
            "basis": self.basis,
            "len": len(self.trajectory),
            "cost": self.norm_cost(),
            "violations": [[v.norm_id, v.step_index] for v in self.violations],
            "breaches": [[v.norm_id, v.step_index] for v in self.obligation_breaches],
            "reward": self.reward_total,
            "harms": self.harm_count,
            "confidence": self.confidence,
        }


@dataclass
class Hypothesis:
    """A candidate plan plus its predicted worth, before and after testing."""

    id: str
    plan: tuple[Action, ...]
    value: float = 0.0
    norm_cost: float = 0.0
    status: str = "untested"  # untested | supported | refuted
    rollout: Optional[Rollout] = None


class ConsequenceEngine:
    """Pure simulation services over a world handle and a model snapshot."""

    def __init__(self, world: World, twin_cfg: TwinConfig):
        self.world = world
        self.twin = TwinHandle(world, twin_cfg)

    def rollout(
        self,
        snapshot: ModelSnapshot,
        state: WorldState,
        plan: list[Action] | tuple[Action, ...],
        horizon: int,
        basis: str = TWIN,
    ) -> Rollout:
        """Simulate a plan (padded with Wait to the horizon) without acting.

        Twin basis steps the internal simulator; learned basis folds the
        transition and other-agent tables and truncates with reduced
        confidence at the first Unknown lookup. Both stop early if the
        predicted episode ends.
        """
        if not plan:
            raise EmptyPlan("rollout requires a non-empty plan")
        plan = tuple(plan)
        horizon = max(horizon, len(plan))
        padded = plan + (Action.WAIT,) * (horizon - len(plan))
        if basis == TWIN:
            trajectory, confidence = self._twin_trajectory(state, padded)
        else:
            trajectory, confidence = self._learned_trajectory(state, padded, snapshot)

        violations = self._scan_violations(snapshot, state, padded, trajectory)
        breaches = self._scan_obligations(snapshot, state, trajectory)
        reward_total = 0.0
        harm_count = 0
        for _, events in trajectory:
            for ev in events:
                if isinstance(ev, RewardCollected):
                    reward_total += ev.value
                elif isinstance(ev, HarmEvent):
                    harm_count += 1
        return Rollout(
            plan=plan,
            horizon=horizon,
            basis=basis,
            trajectory=trajectory,
            violations=violations,
            obligation_breaches=breaches,
            reward_total=reward_total,
            harm_count=harm_count,
            confidence=confidence,
        )

    def _twin_trajectory(self, state: WorldState, padded: tuple[Action, ...]):
        trajectory = []
        current = state
        for action in padded:
            current, percept = self.twin.step(current, action)
            trajectory.append((current, percept.events))
            if any(isinstance(e, EpisodeEnded) for e in percept.events):
                break
        return trajectory, 1.0

    def _learned_trajectory(self, state: WorldState, padded: tuple[Action, ...], snapshot: ModelSnapshot):
        grid = self.world.grid
        trajectory = []
        current = state
        known = 0
        completed_slots = 0
        steps_done = 0
        truncated = False
        for action in padded:
            key = state_key(current)
            live = [(nid, pos) for nid, pos in current.npc_positions if pos is not None]
            nxt_key = snapshot.transition.predict(key, action)
            if nxt_key is None:
                truncated = True
                break
            known += 1
            npc_unknown = False
            for nid, pos in live:
                if snapshot.other.predict(nid, pos) is None:
                    # Consequences for an unmodelled NPC are unpredictable.
                    npc_unknown = True
                    break
                known += 1
            if npc_unknown:
                truncated = True
                break
            nxt = parse_state_key(nxt_key)
            nxt = replace(nxt, step=current.step + 1, episode=current.episode, rng_cursor=current.rng_cursor + 1)
            events = self._derive_events(current, nxt, grid)
            trajectory.append((nxt, tuple(events)))
            steps_done += 1
            completed_slots += 1 + len(live)
            current = nxt
            if any(isinstance(e, EpisodeEnded) for e in events):
                break
        if not truncated:
            # Full plan simulated (or the predicted episode ended): complete.
            return trajectory, 1.0
        per_step = 1 + sum(1 for _, pos in current.npc_positions if pos is not None)
        total = completed_slots + (len(padded) - steps_done) * per_step
        return trajectory, known / total if total else 1.0

    @staticmethod
    def _derive_events(prev: WorldState, nxt: WorldState, grid) -> list:
        events: list = []
        gained = nxt.consumed_rewards - prev.consumed_rewards
        for pos in sorted(gained):
            events.append(RewardCollected(pos, grid.cell(pos).value))
        before = dict(prev.npc_positions)
        for nid, pos in nxt.npc_positions:
            if pos is None and before.get(nid) is not None:
                events.append(HarmEvent(nid, before[nid]))
        kind = grid.cell(nxt.agent_pos).kind
        if kind is CellKind.HAZARD:
            events.append(EpisodeEnded("hazard", grid.cell(nxt.agent_pos).value))
        elif kind is CellKind.EXIT:
            events.append(EpisodeEnded("exit", 0.0))
        return events

    def _scan_violations(self, snapshot, state, padded, trajectory) -> list[Violation]:
        grid = self.world.grid
        prohibitions = [n for n in snapshot.norm_model.active_norms() if n.kind is NormKind.PROHIBITION]
        out: list[Violation] = []
        prev = state
        for i, (nxt, _events) in enumerate(trajectory):
            for norm in prohibitions:
                if norm.predicate.holds(prev, padded[i], nxt, grid):
                    out.append(Violation(norm.id, norm.severity, i + 1))
            prev = nxt
        return out

    def _scan_obligations(self, snapshot, state, trajectory) -> list[Violation]:
        obligations = [
            n for n in snapshot.norm_model.active_norms()
            if n.kind is NormKind.OBLIGATION and isinstance(n.predicate, PreventOtherEntering)
        ]
        if not obligations:
            return []
        grid = self.world.grid
        out: list[Violation] = []
        prev = state
        for i, (nxt, events) in enumerate(trajectory):
            for norm in obligations:
                pred: PreventOtherEntering = norm.predicate
                if i + 1 > pred.horizon:
                    continue
                if pred.kind == "hazard":
                    hits = sum(1 for e in events if isinstance(e, HarmEvent))
                else:
                    before = dict(prev.npc_positions)
                    hits = sum(
                        1 for nid, pos in nxt.npc_positions
                        if pos is not None and before.get(nid) not in (None, pos)
                        and grid.kind_at(pos) == pred.kind
                    )
                out.extend(Violation(norm.id, norm.severity, i + 1) for _ in range(hits))
            prev = nxt
        return out

    def predicted_value(self, ro: Rollout, standard: PerformanceStandard) -> float:
        """Goal-weighted worth of a rollout: per-step critic scores, with
        model-predicted sanctions substituted for any ground-truth ones."""
        by_step: dict[int, list] = {}
        for v in ro.violations:
            by_step.setdefault(v.step_index, []).append(SanctionEvent(v.norm_id, v.severity))
        total = 0.0
        for i, (st, events) in enumerate(ro.trajectory):
            cleaned = tuple(e for e in events if not isinstance(e, SanctionEvent))
            cleaned += tuple(by_step.get(i + 1, ()))
            fb = criticize(Percept(st, cleaned, st.step), standard)
            total += fb.scalar
        return total

    def test_hypotheses(
        self,
        hypotheses: list[Hypothesis],
        snapshot: ModelSnapshot,
        state: WorldState,
        horizon: int,
        standard: PerformanceStandard,
        basis: str = TWIN,
    ) -> list[Hypothesis]:
        """Evaluate and rank hypotheses: norm cost up, value down, plan order.

        Input order never affects the result beyond that tie-break.
        """
        if not hypotheses:
            raise EmptyPlan("need at least one hypothesis")
        for h in hypotheses:
            ro = self.rollout(snapshot, state, h.plan, horizon, basis)
            h.rollout = ro
            h.norm_cost = ro.norm_cost()
            h.value = self.predicted_value(ro, standard)
        return sorted(
            hypotheses,
            key=lambda h: (h.norm_cost, -h.value, tuple(ACTION_INDEX[a] for a in h.plan)),
        )
