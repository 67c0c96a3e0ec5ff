"""Operational critic-agent: action selection, scoring, learning, exploration.

Two switchable policy strategies back the performance element: a tabular
Q-learner and a greedy planner over the learned transition model. Both use
the fixed action ordering (North < South < East < West < Wait) for all
tie-breaking, and the only randomness is the Q-learner's seeded
exploration draw, so runs replay byte-for-byte.
"""
from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import UnknownGoalId, UnknownStrategy
from .world import (
    ACTIONS,
    ACTION_INDEX,
    Action,
    EpisodeEnded,
    HarmEvent,
    Percept,
    RewardCollected,
    SanctionEvent,
)

CHECKPOINT_VERSION = 1


@dataclass
class PerformanceStandard:
    """Goal weights the critic scores against; sourced from the goal store."""

    weights: dict[str, float]

    def require(self, goal_id: str) -> float:
        if goal_id not in self.weights:
            raise UnknownGoalId(f"no weight for goal {goal_id!r}")
        return self.weights[goal_id]


@dataclass
class Feedback:
    """Critic output: per-goal components and their weighted sum."""

    scalar: float
    components: dict[str, float]
    step: int


def criticize(
    percept: Percept,
    standard: PerformanceStandard,
    blocks: int = 0,
    novel_visit: bool = False,
) -> Feedback:
    """Score a percept against the performance standard.

    ``blocks`` is the number of governance Block verdicts this step; each
    costs -1 under the ``intervention`` goal. ``novel_visit`` feeds the
    optional ``exploration_bonus`` goal when a progress revision added it.
    Raises UnknownGoalId when events imply a goal the standard does not
    weight.
    """
    components: dict[str, float] = {gid: 0.0 for gid in standard.weights}

    def add(goal_id: str, value: float):
        standard.require(goal_id)
        components[goal_id] = components.get(goal_id, 0.0) + value

    for ev in percept.events:
        if isinstance(ev, RewardCollected):
            add("task_reward", ev.value)
        elif isinstance(ev, SanctionEvent):
            add("sanction_penalty", -ev.penalty)
        elif isinstance(ev, HarmEvent):
            add("harm_to_other", -1.0)
        elif isinstance(ev, EpisodeEnded) and ev.reason == "hazard":
            add("hazard_penalty", -ev.penalty)
    if blocks:
        add("intervention", -float(blocks))
    if novel_visit and "exploration_bonus" in standard.weights:
        components["exploration_bonus"] = 1.0

    scalar = sum(standard.weights[g] * c for g, c in components.items())
    return Feedback(scalar=scalar, components=components, step=percept.step)


@dataclass
class QTablePolicy:
    """Epsilon-greedy tabular Q-learning with optimistic initialisation."""

    alpha: float
    gamma: float
    epsilon: float
    init_q: float = 0.0
    seed: int = 0
    q: dict[tuple[str, Action], float] = field(default_factory=dict)
    strategy_id: str = "qtable"

    def __post_init__(self):
        self._rng = random.Random(self.seed)
        self.draws = 0

    def q_value(self, key: str, action: Action) -> float:
        return self.q.get((key, action), self.init_q)

    def greedy(self, key: str) -> Action:
        best = ACTIONS[0]
        best_q = self.q_value(key, best)
        for a in ACTIONS[1:]:
            v = self.q_value(key, a)
            if v > best_q:
                best, best_q = a, v
        return best

    def select(self, key: str) -> Action:
        # One draw per call keeps the stream aligned whether or not we explore.
        u = self._rng.random()
        self.draws += 1
        if u < self.epsilon:
            pick = self._rng.random()
            self.draws += 1
            return ACTIONS[int(pick * len(ACTIONS)) % len(ACTIONS)]
        return self.greedy(key)

    def update(self, key: str, action: Action, reward: float, next_key: str) -> None:
        best_next = max(self.q_value(next_key, a) for a in ACTIONS)
        old = self.q_value(key, action)
        self.q[(key, action)] = old + self.alpha * (reward + self.gamma * best_next - old)

    def hyperparameters(self) -> dict:
        return {"alpha": self.alpha, "gamma": self.gamma, "epsilon": self.epsilon, "init_q": self.init_q}


@dataclass
class PlannerPolicy:
    """Greedy one-step lookahead over the learned transition model.

    Keeps a value table refreshed by single value-iteration sweeps over the
    states visited in the current episode; unknown transitions are valued
    at zero so the planner is always total.
    """

    gamma: float
    planning_horizon: int
    transition_lookup: Callable[[str, Action], Optional[str]]
    value: dict[str, float] = field(default_factory=dict)
    reward_est: dict[tuple[str, Action], float] = field(default_factory=dict)
    strategy_id: str = "planner"
    draws: int = 0

    def score(self, key: str, action: Action) -> float:
        r = self.reward_est.get((key, action), 0.0)
        nxt = self.transition_lookup(key, action)
        v = self.value.get(nxt, 0.0) if nxt is not None else 0.0
        return r + self.gamma * v

    def select(self, key: str) -> Action:
        best = ACTIONS[0]
        best_s = self.score(key, best)
        for a in ACTIONS[1:]:
            s = self.score(key, a)
            if s > best_s:
                best, best_s = a, s
        return best

    def greedy(self, key: str) -> Action:
        return self.select(key)

    def update(self, key: str, action: Action, reward: float, next_key: str) -> None:
        self.reward_est[(key, action)] = reward

    def sweep(self, keys: list[str]) -> None:
        """One value-iteration sweep over the given states."""
        for k in keys:
            self.value[k] = max(self.score(k, a) for a in ACTIONS)

    def hyperparameters(self) -> dict:
        return {"gamma": self.gamma, "planning_horizon": self.planning_horizon}


Policy = QTablePolicy | PlannerPolicy


def select_action(key: str, policy: Policy) -> Action:
    """Performance element: pick the next action under the active strategy."""
    return policy.select(key)


def learn(feedback: Feedback, transition: tuple[str, Action, str], policy: Policy) -> Policy:
    """Learning element: one bounded-time update from a scored transition."""
    key, action, next_key = transition
    policy.update(key, action, feedback.scalar, next_key)
    return policy


def propose_exploration(
    key: str,
    policy: Policy,
    visit_counts: dict[tuple[str, Action], int],
) -> list[Action]:
    """Problem generator: actions ordered by ascending visit count.

    Ties break on the fixed action ordering; the list always contains all
    five actions so a proposal is never missing.
    """
    return sorted(ACTIONS, key=lambda a: (visit_counts.get((key, a), 0), ACTION_INDEX[a]))


# --- checkpointing ----------------------------------------------------------

def checkpoint_bytes(policy: Policy) -> bytes:
    """Canonical serialized policy; equal states produce equal bytes."""
    if isinstance(policy, QTablePolicy):
        payload = {
            "version": CHECKPOINT_VERSION,
            "strategy": "qtable",
            "params": policy.hyperparameters() | {"seed": policy.seed},
            "q": [[k, a.value, v] for (k, a), v in sorted(policy.q.items(), key=lambda kv: (kv[0][0], ACTION_INDEX[kv[0][1]]))],
        }
    else:
        payload = {
            "version": CHECKPOINT_VERSION,
            "strategy": "planner",
            "params": policy.hyperparameters(),
            "value": sorted(policy.value.items()),
            "reward_est": [[k, a.value, v] for (k, a), v in sorted(policy.reward_est.items(), key=lambda kv: (kv[0][0], ACTION_INDEX[kv[0][1]]))],
        }
    return json.dumps(payload, separators=(",", ":")).encode()


def checkpoint_hash(policy: Policy) -> str:
    return hashlib.sha256(checkpoint_bytes(policy)).hexdigest()


def save_checkpoint(policy: Policy, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(policy))


def load_checkpoint(path, transition_lookup=None) -> Policy:
    """Rebuild a policy from a checkpoint file.

    The exploration RNG restarts from the stored seed: checkpoints resume
    tables and hyperparameters, not generator state.
    """
    with open(path, "rb") as fh:
        payload = json.loads(fh.read().decode())
    if payload.get("version") != CHECKPOINT_VERSION:
        raise UnknownStrategy(f"unsupported checkpoint version {payload.get('version')}")
    by_value = {a.value: a for a in ACTIONS}
    if payload["strategy"] == "qtable":
        params = payload["params"]
        policy = QTablePolicy(
            alpha=params["alpha"], gamma=params["gamma"], epsilon=params["epsilon"],
            init_q=params["init_q"], seed=params["seed"],
        )
        policy.q = {(k, by_value[av]): v for k, av, v in payload["q"]}
        return policy
    if payload["strategy"] == "planner":
        params = payload["params"]
        policy = PlannerPolicy(
            gamma=params["gamma"], planning_horizon=params["planning_horizon"],
            transition_lookup=transition_lookup or (lambda k, a: None),
        )
        policy.value = dict(payload["value"])
        policy.reward_est = {(k, by_value[av]): v for k, av, v in payload["reward_est"]}
        return policy
    raise UnknownStrategy(f"unknown strategy {payload['strategy']!r}")
