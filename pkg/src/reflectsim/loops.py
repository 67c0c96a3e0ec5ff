"""Information loops as first-class, gated, traceable primitives.

Every reflective capability in the engine is attributed to one of eight
loops; a tier configuration gates which loops may activate, and each
activation appends at least one TraceEvent to the run's trace. The trace
serializes to canonical JSON Lines so identical (scenario, tier, seed)
inputs produce byte-identical files.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .errors import ConfigError, MembersDisabled


class LoopId(Enum):
    L1 = "L1"  # Governing Behaviour
    L2 = "L2"  # Abstract Conceptualization of Experience
    L3 = "L3"  # Integrate extrinsic factors
    L4 = "L4"  # Integrate design goals
    L5 = "L5"  # Active Experimentation to Improve Potential Behaviour
    L6 = "L6"  # Reflect on operational goals / progress
    L7 = "L7"  # Reflect on learning mechanisms
    L8 = "L8"  # Reflective Thinking


LOOP_NAMES = {
    LoopId.L1: "Governing Behaviour",
    LoopId.L2: "Abstract Conceptualization of Experience",
    LoopId.L3: "Integrate extrinsic factors",
    LoopId.L4: "Integrate design goals",
    LoopId.L5: "Active Experimentation to Improve Potential Behaviour",
    LoopId.L6: "Reflect on operational goals and progress",
    LoopId.L7: "Reflect on learning mechanisms",
    LoopId.L8: "Reflective Thinking",
}

_TIER_LOOPS: dict[int, frozenset[LoopId]] = {
    0: frozenset(),
    1: frozenset({LoopId.L1}),
    2: frozenset({LoopId.L1, LoopId.L2, LoopId.L3, LoopId.L4}),
    3: frozenset({LoopId.L1, LoopId.L2, LoopId.L3, LoopId.L4, LoopId.L5, LoopId.L6, LoopId.L7}),
    4: frozenset(LoopId),
}


@dataclass(frozen=True)
class TierConfig:
    """Capability tier 0..4 and the loop set it enables (monotone in tier)."""

    tier: int

    def __post_init__(self):
        if self.tier not in _TIER_LOOPS:
            raise ConfigError(f"tier must be 0..4, got {self.tier}")

    @property
    def enabled_loops(self) -> frozenset[LoopId]:
        return _TIER_LOOPS[self.tier]

    def enabled(self, loop: LoopId) -> bool:
        return loop in self.enabled_loops


# Compositions from the loop-primitive algebra; members must all be enabled.
COMPOSITIONS: dict[str, frozenset[LoopId]] = {
    "curiosity": frozenset({LoopId.L2, LoopId.L6}),
    "curiosity_integrate": frozenset({LoopId.L2, LoopId.L6, LoopId.L8}),
    "governance_reflection": frozenset({LoopId.L1, LoopId.L8}),
    "deliberative_direction": frozenset({LoopId.L1, LoopId.L8, LoopId.L6}),
}


def check_composition(name: str, tier_config: TierConfig) -> frozenset[LoopId]:
    """Validate a composition against the active tier; MembersDisabled if
    any member loop is gated off."""
    if name not in COMPOSITIONS:
        raise ConfigError(f"unknown composition {name!r}")
    members = COMPOSITIONS[name]
    disabled = members - tier_config.enabled_loops
    if disabled:
        raise MembersDisabled(
            f"composition {name!r} needs {sorted(l.value for l in disabled)} at tier {tier_config.tier}"
        )
    return members


TRACE_SCHEMA_VERSION = 1

# Canonical field order for byte-exact replay comparison.
_FIELDS = ("seq", "step", "episode", "loop", "phase", "kind", "payload", "seed_context")


@dataclass(frozen=True, slots=True)
class TraceEvent:
    seq: int
    step: int
    episode: int
    loop: str  # LoopId value or "core"
    phase: Optional[str]
    kind: str
    payload: dict
    seed_context: int

    def to_json(self) -> str:
        obj = {name: getattr(self, name) for name in _FIELDS}
        return json.dumps(obj, separators=(",", ":"), sort_keys=False)


class TraceSink:
    """Single serialized writer for a run's trace.

    Keeps events in memory and optionally mirrors them to a JSONL file.
    Gating is enforced at emission time: an event attributed to a disabled
    loop is a programming error, not a recoverable condition.
    """

    def __init__(self, tier_config: TierConfig, path: Optional[str] = None, keep: bool = True):
        self.tier_config = tier_config
        self.path = path
        self.keep = keep
        self.events: list[TraceEvent] = []
        self.seq = 0
        self._fh = open(path, "w") if path else None

    def emit(
        self,
        step: int,
        episode: int,
        loop: Optional[LoopId],
        kind: str,
        payload: dict,
        seed_context: int,
        phase: Optional[str] = None,
    ) -> TraceEvent:
        if loop is not None and not self.tier_config.enabled(loop):
            raise ConfigError(f"loop {loop.value} fired at tier {self.tier_config.tier}")
        ev = TraceEvent(
            seq=self.seq,
            step=step,
            episode=episode,
            loop=loop.value if loop else "core",
            phase=phase,
            kind=kind,
            payload=payload,
            seed_context=seed_context,
        )
        self.seq += 1
        if self.keep:
            self.events.append(ev)
        if self._fh:
            self._fh.write(ev.to_json() + "\n")
        return ev

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None

    def lines(self) -> list[str]:
        return [ev.to_json() for ev in self.events]
