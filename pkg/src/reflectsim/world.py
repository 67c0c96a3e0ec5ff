"""Deterministic gridworld with ground-truth norms, sanctions, and a twin.

Geometry: coordinates are (x, y) with x in [0, width) and y in [0, height).
North is y+1 and East is x+1; scenario maps are written with the top row
being the highest y. Movement into walls or off-grid leaves the position
unchanged. The agent moves before NPCs each step; an NPC whose next path
cell is occupied (by the agent or another NPC) waits. Agent/NPC
co-location on a cell is permitted only by the agent moving in; NPCs never
move onto the agent, which is what makes interception-by-blocking work.

The world itself is fully deterministic. The only randomness anywhere in
the dynamics is the twin's fidelity perturbation, which is a pure function
of (twin seed, rng_cursor), so twin stepping at fidelity 1 is bitwise
identical to real stepping and twin rollouts never mutate real state.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, Optional

from .errors import ConfigError, InvalidState
from .norms import NormKind, NormSpec

Coord = tuple[int, int]


class Action(Enum):
    """Closed action set; enum order is the deterministic tie-break order."""

    NORTH = "N"
    SOUTH = "S"
    EAST = "E"
    WEST = "W"
    WAIT = "."

    # Members are singletons; identity hashing skips Enum's slower default
    # on the Q-table hot path. Nothing observable depends on hash values.
    __hash__ = object.__hash__


ACTIONS: tuple[Action, ...] = tuple(Action)
ACTION_INDEX = {a: i for i, a in enumerate(ACTIONS)}
DELTAS: dict[Action, Coord] = {
    Action.NORTH: (0, 1),
    Action.SOUTH: (0, -1),
    Action.EAST: (1, 0),
    Action.WEST: (-1, 0),
    Action.WAIT: (0, 0),
}


class CellKind(Enum):
    EMPTY = "empty"
    WALL = "wall"
    REWARD = "reward"
    HAZARD = "hazard"
    SIGN = "sign"
    EXIT = "exit"


@dataclass(frozen=True, slots=True)
class Cell:
    kind: CellKind
    value: float = 0.0  # reward value or hazard penalty
    norm_id: Optional[str] = None  # sign cells only
    radius: int = 0  # sign cells only, Chebyshev


@dataclass(frozen=True, slots=True)
class NpcScript:
    """Deterministic waypoint follower.

    ``path`` is the full expanded cell sequence (consecutive cells
    4-adjacent, all distinct) so an NPC's progress is derivable from its
    position alone, keeping the world Markov in WorldState.
    """

    npc_id: str
    path: tuple[Coord, ...]
    loop: bool = True

    def next_cell(self, pos: Coord) -> Optional[Coord]:
        try:
            i = self.path.index(pos)
        except ValueError:
            return None
        if i + 1 < len(self.path):
            return self.path[i + 1]
        return self.path[0] if self.loop and len(self.path) > 1 else None


def expand_waypoints(waypoints: list[Coord], npc_id: str) -> tuple[Coord, ...]:
    """Expand corner waypoints into a full path, moving along x before y.

    The expansion must not revisit a cell: progress is recovered from
    position, so the path has to be position-unambiguous.
    """
    if not waypoints:
        raise ConfigError(f"npc {npc_id!r}: empty waypoint list")
    path: list[Coord] = [waypoints[0]]
    for target in waypoints[1:]:
        x, y = path[-1]
        tx, ty = target
        while x != tx:
            x += 1 if tx > x else -1
            path.append((x, y))
        while y != ty:
            y += 1 if ty > y else -1
            path.append((x, y))
    if len(set(path)) != len(path):
        raise ConfigError(f"npc {npc_id!r}: expanded path revisits a cell")
    return tuple(path)


@dataclass(frozen=True, slots=True)
class TwinConfig:
    """Fidelity knob for the internal simulator.

    With probability 1 - fidelity per simulated step the action is treated
    as Wait; fidelity 1 makes twin stepping exactly the real step function.
    """

    fidelity: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fidelity <= 1.0:
            raise ConfigError(f"twin fidelity {self.fidelity} outside [0,1]")


@dataclass(frozen=True)
class GridSpec:
    """Static scenario layout plus scripted NPCs and declared zones."""

    width: int
    height: int
    cells: dict[Coord, Cell]  # omitted coords are Empty
    zones: dict[str, frozenset[Coord]]
    npc_scripts: dict[str, NpcScript]
    agent_start: Coord

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("grid dimensions must be positive")
        for zid, coords in self.zones.items():
            for c in coords:
                if not self.in_bounds(c):
                    raise ConfigError(f"zone {zid!r}: {c} outside grid")
        if not self.in_bounds(self.agent_start) or self.kind_at(self.agent_start) == "wall":
            raise ConfigError("agent start must be an in-grid, non-wall cell")
        for script in self.npc_scripts.values():
            for c in script.path:
                if not self.in_bounds(c) or self.kind_at(c) == "wall":
                    raise ConfigError(f"npc {script.npc_id!r}: path cell {c} blocked or outside grid")

    def in_bounds(self, pos: Coord) -> bool:
        return 0 <= pos[0] < self.width and 0 <= pos[1] < self.height

    def cell(self, pos: Coord) -> Cell:
        return self.cells.get(pos, _EMPTY_CELL)

    def kind_at(self, pos: Coord) -> str:
        return self.cell(pos).kind.value

    def passable(self, pos: Coord) -> bool:
        return self.in_bounds(pos) and self.cell(pos).kind is not CellKind.WALL

    def kinds_present(self) -> set[str]:
        kinds = {"empty"}
        kinds.update(c.kind.value for c in self.cells.values())
        return kinds

    def reward_total(self) -> float:
        return sum(c.value for c in self.cells.values() if c.kind is CellKind.REWARD)

    def sign_cells(self) -> Iterator[tuple[Coord, Cell]]:
        for pos, c in sorted(self.cells.items()):
            if c.kind is CellKind.SIGN:
                yield pos, c


_EMPTY_CELL = Cell(CellKind.EMPTY)


@dataclass(frozen=True, slots=True)
class WorldState:
    """Dynamic world snapshot; immutable so twins can share it freely."""

    agent_pos: Coord
    npc_positions: tuple[tuple[str, Optional[Coord]], ...]  # sorted by npc id, None = removed
    consumed_rewards: frozenset[Coord]
    step: int = 0
    episode: int = 0
    rng_cursor: int = 0

    def npc_at(self, npc_id: str) -> Optional[Coord]:
        for nid, pos in self.npc_positions:
            if nid == npc_id:
                return pos
        return None

    def live_npc_cells(self) -> set[Coord]:
        return {pos for _, pos in self.npc_positions if pos is not None}


# --- step events -----------------------------------------------------------

@dataclass(frozen=True, slots=True)
class RewardCollected:
    pos: Coord
    value: float


@dataclass(frozen=True, slots=True)
class SanctionEvent:
    norm_id: str
    penalty: float


@dataclass(frozen=True, slots=True)
class HarmEvent:
    npc_id: str
    pos: Coord


@dataclass(frozen=True, slots=True)
class SignPerceived:
    norm_id: str
    pos: Coord


@dataclass(frozen=True, slots=True)
class EpisodeEnded:
    reason: str  # "hazard" | "exit" | "step_limit"
    penalty: float = 0.0


StepEvent = object  # union of the five event dataclasses


@dataclass(frozen=True, slots=True)
class Percept:
    """What the agent senses after a transition: snapshot plus events."""

    snapshot: WorldState
    events: tuple
    step: int

    def iter_events(self, cls) -> Iterator:
        return (e for e in self.events if isinstance(e, cls))


def chebyshev(a: Coord, b: Coord) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def unit_draw(seed: int, cursor: int) -> float:
    """Deterministic uniform draw in [0,1) keyed by (seed, cursor).

    Counter-based so twin stepping from any state is reproducible without
    carrying generator objects around.
    """
    digest = hashlib.sha256(f"{seed}:{cursor}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


class World:
    """Ground-truth environment: grid, norms, and the deterministic step rule.

    Ground-truth prohibitions are enforced here as SanctionEvents; the
    agent's own norm model lives in the reflective layer and has no effect
    on the environment.
    """

    def __init__(self, grid: GridSpec, ground_truth_norms: list[NormSpec]):
        self.grid = grid
        self.norms = list(ground_truth_norms)
        self._prohibitions = [n for n in self.norms if n.kind is NormKind.PROHIBITION and n.active]
        self._signs = list(grid.sign_cells())

    def initial_state(self, episode: int = 0, step: int = 0, rng_cursor: int = 0) -> WorldState:
        npcs = tuple(sorted((nid, s.path[0]) for nid, s in self.grid.npc_scripts.items()))
        return WorldState(
            agent_pos=self.grid.agent_start,
            npc_positions=npcs,
            consumed_rewards=frozenset(),
            step=step,
            episode=episode,
            rng_cursor=rng_cursor,
        )

    def reset(self, state: WorldState) -> WorldState:
        """Start the next episode: positions and rewards reset, counters continue."""
        return self.initial_state(episode=state.episode + 1, step=state.step, rng_cursor=state.rng_cursor)

    def validate(self, state: WorldState) -> None:
        if not self.grid.passable(state.agent_pos):
            raise InvalidState(f"agent on blocked cell {state.agent_pos}")
        for nid, pos in state.npc_positions:
            if pos is not None and not self.grid.passable(pos):
                raise InvalidState(f"npc {nid!r} on blocked cell {pos}")
        for c in state.consumed_rewards:
            if self.grid.cell(c).kind is not CellKind.REWARD:
                raise InvalidState(f"consumed marker on non-reward cell {c}")

    def sign_events(self, pos: Coord) -> list[SignPerceived]:
        if not self._signs:
            return []
        return [
            SignPerceived(cell.norm_id, cell_pos)
            for cell_pos, cell in self._signs
            if cell.norm_id is not None and chebyshev(pos, cell_pos) <= cell.radius
        ]

    def initial_percept(self, state: WorldState) -> Percept:
        """Sense pass at episode start: signs in range, no transition events."""
        return Percept(snapshot=state, events=tuple(self.sign_events(state.agent_pos)), step=state.step)

    def step(self, state: WorldState, action: Action) -> tuple[WorldState, Percept]:
        """Advance one tick. Deterministic given (state, action).

        Order: agent move, reward/hazard resolution, NPC moves (sorted id
        order, blocked NPCs wait), harm resolution, sanction evaluation,
        sign perception. Canonical event order in the percept: rewards,
        sanctions, harms, signs, episode end.
        """
        grid = self.grid
        events: list = []

        # Agent movement; walls and edges bounce.
        dx, dy = DELTAS[action]
        target = (state.agent_pos[0] + dx, state.agent_pos[1] + dy)
        agent_pos = target if grid.passable(target) else state.agent_pos

        consumed = state.consumed_rewards
        cell = grid.cell(agent_pos)
        episode_end: Optional[EpisodeEnded] = None
        if cell.kind is CellKind.REWARD and agent_pos not in consumed:
            consumed = consumed | {agent_pos}
            events.append(RewardCollected(agent_pos, cell.value))
        elif cell.kind is CellKind.HAZARD:
            episode_end = EpisodeEnded("hazard", cell.value)
        elif cell.kind is CellKind.EXIT:
            episode_end = EpisodeEnded("exit", 0.0)

        # NPC movement: agent already placed; occupancy blocks.
        harms: list[HarmEvent] = []
        if state.npc_positions:
            occupied = {agent_pos}
            npc_after: dict[str, Optional[Coord]] = dict(state.npc_positions)
            occupied.update(p for p in npc_after.values() if p is not None)
            for nid in sorted(npc_after):
                pos = npc_after[nid]
                if pos is None:
                    continue
                nxt = grid.npc_scripts[nid].next_cell(pos)
                if nxt is None or nxt in occupied:
                    continue
                occupied.discard(pos)
                if grid.cell(nxt).kind is CellKind.HAZARD:
                    harms.append(HarmEvent(nid, nxt))
                    npc_after[nid] = None
                else:
                    npc_after[nid] = nxt
                    occupied.add(nxt)
            npc_positions = tuple(sorted(npc_after.items()))
        else:
            npc_positions = state.npc_positions

        new_state = WorldState(
            agent_pos=agent_pos,
            npc_positions=npc_positions,
            consumed_rewards=consumed,
            step=state.step + 1,
            episode=state.episode,
            rng_cursor=state.rng_cursor + 1,
        )

        for norm in self._prohibitions:
            if norm.predicate.holds(state, action, new_state, grid):
                events.append(SanctionEvent(norm.id, norm.severity))
        events.extend(harms)
        events.extend(self.sign_events(agent_pos))
        if episode_end is not None:
            events.append(episode_end)

        return new_state, Percept(snapshot=new_state, events=tuple(events), step=new_state.step)


@dataclass(frozen=True)
class TwinHandle:
    """Cloneable internal simulator: a pure step function over shared state.

    Holds no mutable state of its own, so any number of rollouts can run
    concurrently; the real world is never touched.
    """

    world: World
    cfg: TwinConfig

    def step(self, state: WorldState, action: Action) -> tuple[WorldState, Percept]:
        if self.cfg.fidelity < 1.0:
            if unit_draw(self.cfg.seed, state.rng_cursor) >= self.cfg.fidelity:
                action = Action.WAIT
        return self.world.step(state, action)


def make_twin(world: World, state: WorldState, cfg: TwinConfig) -> TwinHandle:
    """Build an isolated simulator for consequence rollouts.

    The state argument is validated but not captured: TwinHandle.step is a
    pure function, so callers fold it over whatever state they like.
    """
    world.validate(state)
    return TwinHandle(world, cfg)


# --- canonical state keys ---------------------------------------------------

def state_key(state: WorldState) -> str:
    """Canonical, invertible key over (agent_pos, npc_positions, consumed).

    Consumed rewards are part of the key so the world is Markov in it.
    """
    ax, ay = state.agent_pos
    npcs = ";".join(
        f"{nid}:-" if pos is None else f"{nid}:{pos[0]},{pos[1]}"
        for nid, pos in state.npc_positions
    )
    consumed = "+".join(f"{x},{y}" for x, y in sorted(state.consumed_rewards))
    return f"{ax},{ay}|{npcs}|{consumed}"


def parse_state_key(key: str) -> WorldState:
    """Rebuild the dynamic components from a canonical key (counters zeroed)."""
    agent_s, npc_s, consumed_s = key.split("|")
    ax, ay = (int(v) for v in agent_s.split(","))
    npcs: list[tuple[str, Optional[Coord]]] = []
    if npc_s:
        for part in npc_s.split(";"):
            nid, _, pos_s = part.partition(":")
            if pos_s == "-":
                npcs.append((nid, None))
            else:
                px, py = (int(v) for v in pos_s.split(","))
                npcs.append((nid, (px, py)))
    consumed = frozenset(
        (int(p.split(",")[0]), int(p.split(",")[1])) for p in consumed_s.split("+") if p
    )
    return WorldState((ax, ay), tuple(npcs), consumed)
