"""Reflective learning: turning logged experience into models, online.

Transition and NPC learning are plain tabulation with conflict-driven
correction. Norm inference is version-space flavoured: a candidate
predicate instance earns support when it holds on a sanctioned transition
and a counterexample when it holds on a clean one; instances reaching the
support threshold with no live counterexample are promoted to inferred
prohibitions, and later counterexamples demote them again. Everything is
incremental: each call touches O(delta) entries.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from .errors import DuplicateNormId, ModelConflict
from .models import NormModel, Observation, OtherAgentModel, TransitionModel
from .norms import NormKind, NormSource, NormSpec, Predicate
from .scenario import InferenceConfig
from .world import GridSpec, SanctionEvent, parse_state_key


class KolbPhase(Enum):
    CONCRETE_EXPERIENCE = "CE"
    REFLECTIVE_OBSERVATION = "RO"
    ABSTRACT_CONCEPTUALISATION = "AC"
    ACTIVE_EXPERIMENTATION = "AE"


_KOLB_ORDER = (
    KolbPhase.CONCRETE_EXPERIENCE,
    KolbPhase.REFLECTIVE_OBSERVATION,
    KolbPhase.ABSTRACT_CONCEPTUALISATION,
    KolbPhase.ACTIVE_EXPERIMENTATION,
)


def kolb_tick(phase: KolbPhase) -> KolbPhase:
    """Advance the experiential-learning cycle by one phase (fixed order)."""
    i = _KOLB_ORDER.index(phase)
    return _KOLB_ORDER[(i + 1) % len(_KOLB_ORDER)]


@dataclass(frozen=True, slots=True)
class Correction:
    """A model entry that had to be rewritten after contradicting evidence."""

    kind: str  # "transition" | "other" | "norm_demotion"
    key: str
    old: str
    new: str
    step: int


def learn_transitions(log_delta: list[Observation], model: TransitionModel) -> list[Correction]:
    """Fold new observations into the self/transition model.

    In a deterministic world a contradiction means the model is stale
    (e.g. the scenario was hot-swapped): the entry is replaced and a
    correction surfaces for the trace.
    """
    corrections: list[Correction] = []
    for obs in log_delta:
        try:
            model.insert(obs.key, obs.action, obs.next_key)
        except ModelConflict:
            old = model.predict(obs.key, obs.action)
            model.replace(obs.key, obs.action, obs.next_key)
            corrections.append(Correction("transition", f"{obs.key}/{obs.action.value}", str(old), obs.next_key, obs.step))
    return corrections


def learn_other(log_delta: list[Observation], model: OtherAgentModel) -> list[Correction]:
    """Fold observed NPC moves into the other-agent model."""
    corrections: list[Correction] = []
    for obs in log_delta:
        before = dict(parse_state_key(obs.key).npc_positions)
        after = dict(parse_state_key(obs.next_key).npc_positions)
        for nid, pos in before.items():
            nxt = after.get(nid)
            if pos is None or nxt is None:
                continue
            try:
                model.insert(nid, pos, nxt)
            except ModelConflict:
                old = model.predict(nid, pos)
                model.replace(nid, pos, nxt)
                corrections.append(Correction("other", f"{nid}@{pos}", str(old), str(nxt), obs.step))
    return corrections


@dataclass(frozen=True, slots=True)
class NormChange:
    kind: str  # "promotion" | "demotion"
    norm_id: str
    predicate_key: str
    support: int
    counterexamples: int
    severity: float
    step: int


def inferred_norm_id(pred: Predicate) -> str:
    return f"inferred:{pred.key()}"


def infer_norms(
    log_delta: list[Observation],
    norm_model: NormModel,
    cfg: InferenceConfig,
    grid: GridSpec,
) -> list[NormChange]:
    """Update hypothesis evidence from a log delta and (de)promote norms.

    Severity of a promoted norm is the mean sanction penalty observed on
    its supporting transitions. A windowed config (window > 0) lets old
    counterexamples expire instead of blocking promotion forever.
    """
    changes: list[NormChange] = []
    for obs in log_delta:
        sanctions = [e for e in obs.events if isinstance(e, SanctionEvent)]
        penalty = sum(e.penalty for e in sanctions)
        prev = parse_state_key(obs.key)
        prev = replace(prev, step=obs.step - 1)
        nxt = parse_state_key(obs.next_key)
        nxt = replace(nxt, step=obs.step)
        for pred_key, (pred, stats) in norm_model.hypothesis_space.items():
            if not pred.holds(prev, obs.action, nxt, grid):
                continue
            nid = inferred_norm_id(pred)
            if sanctions:
                stats.support += 1
                stats.penalty_sum += penalty
                if stats.first_support_step is None:
                    stats.first_support_step = obs.step
            else:
                stats.counterexamples += 1
                stats.counterexample_steps.append(obs.step)
                existing = norm_model.norms.get(nid)
                if existing is not None and existing.active:
                    norm_model.upsert(existing.deactivated())
                    changes.append(NormChange(
                        "demotion", nid, pred_key, stats.support,
                        stats.counterexamples, existing.severity, obs.step,
                    ))
            live_cex = _live_counterexamples(stats, cfg, obs.step)
            if stats.support >= cfg.s_min and live_cex == 0:
                existing = norm_model.norms.get(nid)
                if existing is None or not existing.active:
                    spec = NormSpec(
                        id=nid,
                        kind=NormKind.PROHIBITION,
                        predicate=pred,
                        severity=stats.mean_penalty(),
                        source=NormSource.INFERRED,
                        active=True,
                    )
                    norm_model.upsert(spec)
                    changes.append(NormChange(
                        "promotion", nid, pred_key, stats.support,
                        live_cex, spec.severity, obs.step,
                    ))
    return changes


def _live_counterexamples(stats, cfg: InferenceConfig, now_step: int) -> int:
    if cfg.window <= 0:
        return stats.counterexamples
    return sum(1 for s in stats.counterexample_steps if now_step - s < cfg.window)


def integrate_sign(norm_model: NormModel, spec: NormSpec) -> bool:
    """Insert a sign-announced norm, immediately active, source environment.

    Idempotent: re-perceiving the same sign is a no-op. Returns True when
    the norm was actually new. No policy relearning is triggered anywhere;
    governance simply starts checking behaviour against the new norm.
    """
    announced = replace(spec, source=NormSource.ENVIRONMENT, active=True)
    try:
        norm_model.add(announced)
        return True
    except DuplicateNormId:
        return False


def integrate_design_goal(
    norm_model: NormModel,
    goals,
    injection,
    step: int,
) -> str:
    """Apply a design-time injection (norm or goal reweight) at this step."""
    from .errors import UnknownGoalSchema

    if injection.kind == "norm" and injection.norm is not None:
        norm_model.upsert(replace(injection.norm, source=NormSource.DESIGN))
        return f"norm:{injection.norm.id}"
    if injection.kind == "goal" and injection.goal_id is not None and injection.weight is not None:
        goals.upsert(injection.goal_id, injection.weight, "design", step)
        return f"goal:{injection.goal_id}"
    raise UnknownGoalSchema(f"unrecognized injection payload: {injection!r}")
