"""Norm specifications and the closed predicate-template language.

A norm is either a prohibition, whose predicate is evaluated on a single
transition (state, action, next_state), or an obligation, whose predicate
ranges over a bounded predicted trajectory. The template set is closed so
that the hypothesis space for norm inference is finite and enumerable for
any given grid.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import TYPE_CHECKING, Iterable

from .errors import ConfigError

if TYPE_CHECKING:  # pragma: no cover - type-only imports
    from .world import Action, GridSpec, WorldState


class NormKind(Enum):
    PROHIBITION = "prohibition"
    OBLIGATION = "obligation"


class NormSource(Enum):
    DESIGN = "design"
    ENVIRONMENT = "environment"
    INFERRED = "inferred"


class Predicate:
    """Base for the closed template set. Subclasses are immutable."""

    def key(self) -> str:
        raise NotImplementedError

    def __repr__(self) -> str:
        return self.key()

    def __eq__(self, other) -> bool:
        return type(self) is type(other) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())


@dataclass(frozen=True, eq=False)
class AgentInZone(Predicate):
    """Holds when the agent ends the transition inside the zone."""

    zone_id: str

    def key(self) -> str:
        return f"AgentInZone({self.zone_id})"

    def holds(self, prev: "WorldState", action: "Action", nxt: "WorldState", grid: "GridSpec") -> bool:
        zone = grid.zones.get(self.zone_id)
        return zone is not None and nxt.agent_pos in zone


@dataclass(frozen=True, eq=False)
class AgentEntersCellKind(Predicate):
    """Holds when the agent moves onto a cell of the named original kind."""

    kind: str  # CellKind value string, e.g. "hazard"

    def key(self) -> str:
        return f"AgentEntersCellKind({self.kind})"

    def holds(self, prev: "WorldState", action: "Action", nxt: "WorldState", grid: "GridSpec") -> bool:
        if nxt.agent_pos == prev.agent_pos:
            return False
        return grid.kind_at(nxt.agent_pos) == self.kind


@dataclass(frozen=True, eq=False)
class OtherEntersCellKind(Predicate):
    """Holds when any NPC moves onto a cell of the named original kind."""

    kind: str

    def key(self) -> str:
        return f"OtherEntersCellKind({self.kind})"

    def holds(self, prev: "WorldState", action: "Action", nxt: "WorldState", grid: "GridSpec") -> bool:
        before = dict(prev.npc_positions)
        for npc_id, pos in nxt.npc_positions:
            old = before.get(npc_id)
            if old is None:
                continue
            if pos is None:
                # Removal only ever happens through hazard entry.
                if self.kind == "hazard":
                    return True
                continue
            if pos != old and grid.kind_at(pos) == self.kind:
                return True
        return False


@dataclass(frozen=True, eq=False)
class StepCountExceeds(Predicate):
    """Holds once the global step counter passes the threshold."""

    threshold: int

    def key(self) -> str:
        return f"StepCountExceeds({self.threshold})"

    def holds(self, prev: "WorldState", action: "Action", nxt: "WorldState", grid: "GridSpec") -> bool:
        return nxt.step > self.threshold


@dataclass(frozen=True, eq=False)
class PreventOtherEntering(Predicate):
    """Obligation template: no NPC may enter the named kind within horizon steps.

    Evaluated over predicted trajectories by the consequence engine; a
    breach is each predicted NPC entry into the kind within the horizon.
    """

    kind: str
    horizon: int

    def key(self) -> str:
        return f"PreventOtherEntering({self.kind},{self.horizon})"


PROHIBITION_TEMPLATES = ("AgentInZone", "AgentEntersCellKind", "OtherEntersCellKind", "StepCountExceeds")
OBLIGATION_TEMPLATES = ("PreventOtherEntering",)


@dataclass(frozen=True)
class NormSpec:
    """A declarative prohibition or obligation with severity and provenance."""

    id: str
    kind: NormKind
    predicate: Predicate
    severity: float
    source: NormSource
    active: bool = True

    def deactivated(self) -> "NormSpec":
        return replace(self, active=False)


_NORM_RE = re.compile(
    r"^(prohibition|obligation)\s+([A-Za-z]+)\(([^)]*)\)((?:\s+\w+=\S+)*)\s*$"
)


def parse_norm(norm_id: str, text: str) -> tuple[NormSpec, bool]:
    """Parse one norm DSL line, e.g. ``prohibition AgentInZone(Z1) severity=5 known=true``.

    Returns (spec, known): ``known`` says whether the agent's norm model is
    seeded with the spec at run start (ground-truth enforcement is
    independent of it).
    """
    m = _NORM_RE.match(text.strip())
    if not m:
        raise ConfigError(f"norm {norm_id!r}: cannot parse {text!r}")
    kind_s, template, args_s, opts_s = m.groups()
    args = [a.strip() for a in args_s.split(",")] if args_s.strip() else []
    opts: dict[str, str] = {}
    for part in opts_s.split():
        k, _, v = part.partition("=")
        opts[k] = v
    severity = float(opts.pop("severity", "1"))
    if severity <= 0:
        raise ConfigError(f"norm {norm_id!r}: severity must be positive")
    known = opts.pop("known", "true").lower() == "true"
    active = opts.pop("active", "true").lower() == "true"
    source_s = opts.pop("source", "design").lower()
    if opts:
        raise ConfigError(f"norm {norm_id!r}: unknown options {sorted(opts)}")
    try:
        source = NormSource(source_s)
    except ValueError:
        raise ConfigError(f"norm {norm_id!r}: unknown source {source_s!r}") from None

    pred = _build_predicate(template, args, norm_id)
    kind = NormKind(kind_s)
    if kind is NormKind.OBLIGATION and template not in OBLIGATION_TEMPLATES:
        raise ConfigError(f"norm {norm_id!r}: {template} is not an obligation template")
    if kind is NormKind.PROHIBITION and template not in PROHIBITION_TEMPLATES:
        raise ConfigError(f"norm {norm_id!r}: {template} is not a prohibition template")
    return NormSpec(norm_id, kind, pred, severity, source, active), known


def _build_predicate(template: str, args: list[str], norm_id: str) -> Predicate:
    try:
        if template == "AgentInZone":
            (zone,) = args
            return AgentInZone(zone)
        if template == "AgentEntersCellKind":
            (kind,) = args
            return AgentEntersCellKind(kind.lower())
        if template == "OtherEntersCellKind":
            (kind,) = args
            return OtherEntersCellKind(kind.lower())
        if template == "StepCountExceeds":
            (n,) = args
            return StepCountExceeds(int(n))
        if template == "PreventOtherEntering":
            kind, horizon = args
            return PreventOtherEntering(kind.lower(), int(horizon))
    except ValueError:
        raise ConfigError(f"norm {norm_id!r}: bad arguments for {template}") from None
    raise ConfigError(f"norm {norm_id!r}: unknown template {template!r}")


def enumerate_instances(
    grid: "GridSpec",
    templates_enabled: Iterable[str],
    step_thresholds: Iterable[int] = (),
) -> list[Predicate]:
    """Enumerate the finite hypothesis space of prohibition predicates for a grid.

    Zone templates range over declared zones; cell-kind templates over the
    enterable kinds actually present; step thresholds are taken verbatim
    from configuration.
    """
    enabled = set(templates_enabled)
    out: list[Predicate] = []
    if "AgentInZone" in enabled:
        out.extend(AgentInZone(z) for z in sorted(grid.zones))
    kinds = sorted(grid.kinds_present() - {"wall", "empty"})
    if "AgentEntersCellKind" in enabled:
        out.extend(AgentEntersCellKind(k) for k in kinds)
    if "OtherEntersCellKind" in enabled and grid.npc_scripts:
        out.extend(OtherEntersCellKind(k) for k in kinds)
    if "StepCountExceeds" in enabled:
        out.extend(StepCountExceeds(n) for n in sorted(set(step_thresholds)))
    return out
