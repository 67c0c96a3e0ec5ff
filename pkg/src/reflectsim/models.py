"""Reflective model store: observation log, learned models, goals, rule sets.

All model forms are tabular and interpretable on purpose. The store has a
single writer (the agent loop between environment steps); readers take
immutable snapshots that concurrent rollout workers can share safely.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import DuplicateNormId, ModelConflict, OutOfOrder
from .norms import NormSpec, NormSource, Predicate
from .world import ACTION_INDEX, Action, Coord, EpisodeEnded


@dataclass(frozen=True, slots=True)
class Observation:
    """One logged transition: the raw material reflection conceptualizes."""

    step: int
    key: str
    action: Action
    next_key: str
    events: tuple


class ObservationLog:
    """Append-only transition log with an optional ring capacity."""

    def __init__(self, capacity: Optional[int] = None):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.entries: list[Observation] = []

    def record(self, obs: Observation) -> None:
        """Append one observation; steps must advance by exactly one unless
        the previous observation closed an episode."""
        if self.entries:
            last = self.entries[-1]
            new_episode = any(isinstance(e, EpisodeEnded) for e in last.events)
            if obs.step != last.step + 1 and not (new_episode and obs.step > last.step):
                raise OutOfOrder(f"step {obs.step} after {last.step}")
        self.entries.append(obs)
        if self.capacity is not None and len(self.entries) > self.capacity:
            del self.entries[0]

    def __len__(self) -> int:
        return len(self.entries)


class TransitionModel:
    """Deterministic successor table over canonical state keys."""

    def __init__(self):
        self.table: dict[tuple[str, Action], str] = {}
        self.visit_count: dict[tuple[str, Action], int] = {}

    def predict(self, key: str, action: Action) -> Optional[str]:
        return self.table.get((key, action))

    def insert(self, key: str, action: Action, next_key: str) -> None:
        existing = self.table.get((key, action))
        if existing is not None and existing != next_key:
            raise ModelConflict(f"{key}/{action.value}: {existing} vs {next_key}")
        self.table[(key, action)] = next_key
        self.visit_count[(key, action)] = self.visit_count.get((key, action), 0) + 1

    def replace(self, key: str, action: Action, next_key: str) -> None:
        self.table[(key, action)] = next_key
        self.visit_count[(key, action)] = self.visit_count.get((key, action), 0) + 1

    def copy(self) -> "TransitionModel":
        m = TransitionModel()
        m.table = dict(self.table)
        m.visit_count = dict(self.visit_count)
        return m


class OtherAgentModel:
    """First-order per-NPC movement tables: position -> predicted next position."""

    def __init__(self):
        self.tables: dict[str, dict[Coord, Coord]] = {}
        self.visit_count: dict[tuple[str, Coord], int] = {}

    def predict(self, npc_id: str, pos: Coord) -> Optional[Coord]:
        return self.tables.get(npc_id, {}).get(pos)

    def insert(self, npc_id: str, pos: Coord, next_pos: Coord) -> None:
        table = self.tables.setdefault(npc_id, {})
        existing = table.get(pos)
        if existing is not None and existing != next_pos:
            raise ModelConflict(f"npc {npc_id} at {pos}: {existing} vs {next_pos}")
        table[pos] = next_pos
        self.visit_count[(npc_id, pos)] = self.visit_count.get((npc_id, pos), 0) + 1

    def replace(self, npc_id: str, pos: Coord, next_pos: Coord) -> None:
        self.tables.setdefault(npc_id, {})[pos] = next_pos
        self.visit_count[(npc_id, pos)] = self.visit_count.get((npc_id, pos), 0) + 1

    def copy(self) -> "OtherAgentModel":
        m = OtherAgentModel()
        m.tables = {nid: dict(t) for nid, t in self.tables.items()}
        m.visit_count = dict(self.visit_count)
        return m


@dataclass
class HypothesisStats:
    """Evidence tallies for one candidate predicate instance."""

    support: int = 0
    counterexamples: int = 0
    counterexample_steps: list[int] = field(default_factory=list)
    penalty_sum: float = 0.0
    first_support_step: Optional[int] = None

    def mean_penalty(self) -> float:
        return self.penalty_sum / self.support if self.support else 0.0


class NormModel:
    """The agent's picture of prevailing norms plus its inference evidence."""

    def __init__(self):
        self.norms: dict[str, NormSpec] = {}
        self.hypothesis_space: dict[str, tuple[Predicate, HypothesisStats]] = {}
        self._active_cache: Optional[list[NormSpec]] = None

    def add(self, spec: NormSpec) -> None:
        if spec.id in self.norms:
            raise DuplicateNormId(spec.id)
        self.norms[spec.id] = spec
        self._active_cache = None

    def upsert(self, spec: NormSpec) -> None:
        self.norms[spec.id] = spec
        self._active_cache = None

    def active_norms(self) -> list[NormSpec]:
        if self._active_cache is None:
            self._active_cache = [n for n in self.norms.values() if n.active]
        return self._active_cache

    def seed_hypotheses(self, instances: list[Predicate]) -> None:
        for pred in instances:
            self.hypothesis_space.setdefault(pred.key(), (pred, HypothesisStats()))

    def copy(self) -> "NormModel":
        m = NormModel()
        m.norms = dict(self.norms)
        m._active_cache = None
        m.hypothesis_space = {
            k: (pred, replace(stats, counterexample_steps=list(stats.counterexample_steps)))
            for k, (pred, stats) in self.hypothesis_space.items()
        }
        return m


@dataclass(frozen=True, slots=True)
class Goal:
    description: str
    weight: float
    source: str  # "design" | "environment" | "progress"


class GoalStore:
    """Weighted higher-level goals with an append-only revision history."""

    def __init__(self):
        self.goals: dict[str, Goal] = {}
        self.revisions: list[tuple[int, str, Optional[float], float, str]] = []

    def upsert(self, goal_id: str, weight: float, source: str, step: int, description: str = "") -> None:
        old = self.goals.get(goal_id)
        self.goals[goal_id] = Goal(description or (old.description if old else goal_id), weight, source)
        self.revisions.append((step, goal_id, old.weight if old else None, weight, source))

    def weights(self) -> dict[str, float]:
        return {gid: g.weight for gid, g in self.goals.items()}

    def copy(self) -> "GoalStore":
        g = GoalStore()
        g.goals = dict(self.goals)
        g.revisions = list(self.revisions)
        return g


@dataclass(frozen=True)
class MotionRule:
    """One generalized displacement rule: guard is a cell-property predicate
    on the action's target cell ('passable' or 'any')."""

    guard: str  # "target_passable" | "any"
    action: Action
    effect: Optional[Coord]  # displacement, None = NoMove


class RuleSetModel:
    """Re-represented transition knowledge: ordered rules plus exceptions.

    Rules predict the agent-position displacement; all other state-key
    components are assumed unchanged. Entries that do not conform (reward
    pickups, NPC motion, anomalies) live in the exception table, which
    takes precedence. First matching rule wins; no match means NoMove.
    """

    def __init__(self, rules: list[MotionRule], exceptions: dict[tuple[str, Action], str]):
        self.rules = rules
        self.exceptions = exceptions

    def predict(self, key: str, action: Action, grid) -> str:
        from .world import DELTAS, parse_state_key, state_key

        if (key, action) in self.exceptions:
            return self.exceptions[(key, action)]
        st = parse_state_key(key)
        for rule in self.rules:
            if rule.action is not action:
                continue
            dx, dy = DELTAS[action]
            target = (st.agent_pos[0] + dx, st.agent_pos[1] + dy)
            if rule.guard == "target_passable" and not grid.passable(target):
                continue
            if rule.effect is None:
                return key
            moved = replace(st, agent_pos=(st.agent_pos[0] + rule.effect[0], st.agent_pos[1] + rule.effect[1]))
            return state_key(moved)
        return key


@dataclass(frozen=True)
class ModelSnapshot:
    """Immutable, versioned view of every reflective model."""

    version: int
    transition: TransitionModel
    other: OtherAgentModel
    norm_model: NormModel
    goals: GoalStore


class ReflectiveModelStore:
    """Owner of all reflective models; every mutation bumps the version."""

    def __init__(self, log_capacity: Optional[int] = None):
        self.log = ObservationLog(log_capacity)
        self.transition = TransitionModel()
        self.other = OtherAgentModel()
        self.norm_model = NormModel()
        self.goals = GoalStore()
        self.version = 0

    def bump(self) -> int:
        self.version += 1
        return self.version

    def record(self, obs: Observation) -> None:
        self.log.record(obs)
        self.bump()

    def snapshot_models(self) -> ModelSnapshot:
        return ModelSnapshot(
            version=self.version,
            transition=self.transition.copy(),
            other=self.other.copy(),
            norm_model=self.norm_model.copy(),
            goals=self.goals.copy(),
        )

    # --- canonical dump / load ---------------------------------------------

    def dump_json(self) -> str:
        """Canonical serialization of all models (log excluded): stable key
        order so dumps diff meaningfully."""
        payload = {
            "version": 1,
            "store_version": self.version,
            "transition": [
                [k, a.value, v]
                for (k, a), v in sorted(self.transition.table.items(), key=lambda kv: (kv[0][0], ACTION_INDEX[kv[0][1]]))
            ],
            "transition_visits": [
                [k, a.value, c]
                for (k, a), c in sorted(self.transition.visit_count.items(), key=lambda kv: (kv[0][0], ACTION_INDEX[kv[0][1]]))
            ],
            "other": {
                nid: sorted([list(p), list(np_)] for p, np_ in table.items())
                for nid, table in sorted(self.other.tables.items())
            },
            "norms": [
                {
                    "id": n.id, "kind": n.kind.value, "predicate": n.predicate.key(),
                    "severity": n.severity, "source": n.source.value, "active": n.active,
                }
                for n in sorted(self.norm_model.norms.values(), key=lambda n: n.id)
            ],
            "hypotheses": [
                {"predicate": k, "support": s.support, "counterexamples": s.counterexamples}
                for k, (_, s) in sorted(self.norm_model.hypothesis_space.items())
            ],
            "goals": [
                {"id": gid, "weight": g.weight, "source": g.source, "description": g.description}
                for gid, g in sorted(self.goals.goals.items())
            ],
            "goal_revisions": [list(r) for r in self.goals.revisions],
        }
        return json.dumps(payload, separators=(",", ":"), sort_keys=False)

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dump_json())
