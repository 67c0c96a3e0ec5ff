"""Scenario file format: ASCII grid plus keyed configuration sections.

Grammar (full-line comments start with ``;``; ``#`` is the wall glyph):

    [grid]          one row per line, top row = highest y; glyphs:
                    ``.`` empty, ``#`` wall, ``r`` reward, ``h`` hazard,
                    ``s`` sign, ``e`` exit, ``A`` agent start, digits NPC starts.
                    Alternatively a single ``file = PATH`` line referencing a
                    row file relative to the scenario.
    [zones]         ZONE_ID = (x,y) (x,y) ...
    [norms]         NORM_ID = prohibition|obligation Template(args)
                    severity=S [known=true|false] [active=..] [source=..]
    [signs]         (x,y) = norm=NORM_ID radius=R [goal=GOAL_ID weight=W]
    [npcs]          DIGIT = waypoints (x,y) (x,y) ... [loop=true|false]
    [rewards]       (x,y) = VALUE and/or default = VALUE
    [hazards]       same shape as [rewards]
    [twin]          fidelity = F, seed = N
    [inference]     s_min, window, templates = T1, T2, step_thresholds = n1, n2
    [standard]      GOAL_ID = WEIGHT  (performance-standard weights)
    [policy]        strategy, alpha, gamma, epsilon, init_q, planning_horizon
    [governance]    horizon, candidates, plan_horizon
    [progress]      window, epsilon
    [run]           max_steps, max_episode_steps, experiment_every,
                    l7_every_episodes, l8_every_episodes, allow_goal_self_apply
    [compositions]  enable = name1, name2
    [curiosity]     budget_episodes
    [injections]    STEP = norm NORM_ID = <norm dsl>   |   STEP = goal GOAL_ID WEIGHT

Unknown sections and unknown keys are rejected.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .norms import (
    NormKind,
    NormSpec,
    PROHIBITION_TEMPLATES,
    AgentInZone,
    parse_norm,
)
from .world import Cell, CellKind, Coord, GridSpec, NpcScript, TwinConfig, expand_waypoints

_COORD_RE = re.compile(r"\((-?\d+)\s*,\s*(-?\d+)\)")

GLYPHS = {".", "#", "r", "h", "s", "e", "A"}

BUNDLED = {
    "forbidden-field": "forbidden_field.scn",
    "sanction-school": "sanction_school.scn",
    "signpost": "signpost.scn",
    "trap": "trap.scn",
    "corridor-rescue": "corridor_rescue.scn",
    "blocked-door": "blocked_door.scn",
    "audit-box": "audit_box.scn",
}

DEFAULT_STANDARD = {
    "task_reward": 1.0,
    "sanction_penalty": 10.0,
    "harm_to_other": 20.0,
    "hazard_penalty": 1.0,
    "intervention": 1.0,
}


@dataclass(frozen=True)
class InferenceConfig:
    s_min: int = 3
    window: int = 0  # 0 = counterexamples never expire
    templates_enabled: tuple[str, ...] = PROHIBITION_TEMPLATES
    step_thresholds: tuple[int, ...] = ()

    def __post_init__(self):
        if self.s_min < 1:
            raise ConfigError("inference s_min must be >= 1")


@dataclass(frozen=True)
class PolicyConfig:
    strategy: str = "qtable"
    alpha: float = 0.5
    gamma: float = 0.9
    epsilon: float = 0.1
    init_q: float = 0.0
    planning_horizon: int = 3

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha must be in (0,1]")
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma must be in [0,1)")
        if not 0 <= self.epsilon <= 1:
            raise ConfigError("epsilon must be in [0,1]")
        if self.strategy not in ("qtable", "planner"):
            raise ConfigError(f"unknown policy strategy {self.strategy!r}")


@dataclass(frozen=True)
class GovernanceConfig:
    horizon: int = 1  # single-action what-if lookahead
    candidates: int = 4  # k for deliberation
    plan_horizon: int = 6  # plan length for deliberation


@dataclass(frozen=True)
class ProgressConfig:
    window: int = 5
    epsilon: float = 0.1


@dataclass(frozen=True)
class RunConfig:
    max_steps: int = 1000
    max_episode_steps: int = 200
    experiment_every: int = 7
    l7_every_episodes: int = 5
    l8_every_episodes: int = 5
    allow_goal_self_apply: bool = False


@dataclass(frozen=True)
class CuriosityConfig:
    budget_episodes: int = 50


@dataclass(frozen=True)
class Injection:
    at_step: int
    kind: str  # "norm" | "goal"
    norm: Optional[NormSpec] = None
    goal_id: Optional[str] = None
    weight: Optional[float] = None


@dataclass(frozen=True)
class SignGoal:
    goal_id: str
    weight: float


@dataclass
class ScenarioConfig:
    """Everything a run needs; produced only by the validating parser."""

    name: str
    text: str
    grid: GridSpec
    norms: list[NormSpec]  # ground truth, including obligations
    known_ids: frozenset[str]  # seeded into the agent's norm model at start
    twin: TwinConfig
    inference: InferenceConfig
    standard_weights: dict[str, float]
    policy: PolicyConfig
    governance: GovernanceConfig
    progress: ProgressConfig
    run: RunConfig
    compositions: tuple[str, ...]
    curiosity: CuriosityConfig
    injections: list[Injection]
    sign_goals: dict[Coord, SignGoal] = field(default_factory=dict)

    def norm_by_id(self, norm_id: str) -> NormSpec:
        for n in self.norms:
            if n.id == norm_id:
                return n
        raise ConfigError(f"unknown norm id {norm_id!r}")


def _parse_coords(text: str, where: str) -> list[Coord]:
    coords = [(int(x), int(y)) for x, y in _COORD_RE.findall(text)]
    if not coords:
        raise ConfigError(f"{where}: expected coordinate list, got {text!r}")
    return coords


def _split_sections(text: str) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current: Optional[str] = None
    for raw in text.splitlines():
        line = raw.rstrip()
        if not line.strip() or line.lstrip().startswith(";"):
            continue
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]")
            sections[current] = []
            continue
        if current is None:
            raise ConfigError(f"content before first section: {line!r}")
        sections[current].append(line if current == "grid" else stripped)
    return sections


def _kv_lines(lines: list[str], section: str) -> list[tuple[str, str]]:
    out = []
    for line in lines:
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"[{section}]: expected 'key = value', got {line!r}")
        out.append((key.strip(), value.strip()))
    return out


def _apply_kv(section: str, lines: list[str], converters: dict) -> dict:
    """Parse key=value lines through per-key converters, rejecting unknowns."""
    values: dict = {}
    for key, value in _kv_lines(lines, section):
        if key not in converters:
            raise ConfigError(f"[{section}]: unknown key {key!r}")
        try:
            values[key] = converters[key](value)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None
    return values


def _bool(value: str) -> bool:
    v = value.lower()
    if v in ("true", "yes", "1"):
        return True
    if v in ("false", "no", "0"):
        return False
    raise ConfigError(f"expected boolean, got {value!r}")


def _name_list(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


def _int_list(value: str) -> tuple[int, ...]:
    return tuple(int(v.strip()) for v in value.split(",") if v.strip())


def parse_scenario(text: str, name: str = "<inline>", base_dir: Optional[Path] = None) -> ScenarioConfig:
    sections = _split_sections(text)
    known = {
        "grid", "zones", "norms", "signs", "npcs", "rewards", "hazards", "twin",
        "inference", "standard", "policy", "governance", "progress", "run",
        "compositions", "curiosity", "injections",
    }
    unknown = set(sections) - known
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    if "grid" not in sections:
        raise ConfigError("missing required [grid] section")

    rows = _grid_rows(sections["grid"], base_dir)
    glyph_at, agent_start, npc_glyph_pos, width, height = _scan_rows(rows)

    zones: dict[str, frozenset[Coord]] = {}
    for zid, value in _kv_lines(sections.get("zones", []), "zones"):
        if zid in zones:
            raise ConfigError(f"[zones]: duplicate zone {zid!r}")
        zones[zid] = frozenset(_parse_coords(value, f"zone {zid}"))

    norms: list[NormSpec] = []
    known_ids: set[str] = set()
    for nid, value in _kv_lines(sections.get("norms", []), "norms"):
        if any(n.id == nid for n in norms):
            raise ConfigError(f"[norms]: duplicate norm id {nid!r}")
        spec, is_known = parse_norm(nid, value)
        norms.append(spec)
        if is_known:
            known_ids.add(nid)

    reward_values = _value_map(sections.get("rewards", []), "rewards")
    hazard_values = _value_map(sections.get("hazards", []), "hazards")
    sign_defs, sign_goals = _parse_signs(sections.get("signs", []), norms)
    scripts = _parse_npcs(sections.get("npcs", []), npc_glyph_pos)

    cells: dict[Coord, Cell] = {}
    for pos, glyph in glyph_at.items():
        if glyph == "#":
            cells[pos] = Cell(CellKind.WALL)
        elif glyph == "r":
            cells[pos] = Cell(CellKind.REWARD, value=reward_values.get(pos, reward_values.get("default", 1.0)))
        elif glyph == "h":
            cells[pos] = Cell(CellKind.HAZARD, value=hazard_values.get(pos, hazard_values.get("default", 1.0)))
        elif glyph == "e":
            cells[pos] = Cell(CellKind.EXIT)
        elif glyph == "s":
            if pos not in sign_defs:
                raise ConfigError(f"sign glyph at {pos} has no [signs] entry")
            norm_id, radius = sign_defs[pos]
            cells[pos] = Cell(CellKind.SIGN, norm_id=norm_id, radius=radius)
    for pos in sign_defs:
        if pos not in cells or cells[pos].kind is not CellKind.SIGN:
            raise ConfigError(f"[signs]: entry at {pos} has no 's' glyph in the grid")

    grid = GridSpec(
        width=width,
        height=height,
        cells=cells,
        zones=zones,
        npc_scripts=scripts,
        agent_start=agent_start,
    )

    for spec in norms:
        pred = spec.predicate
        if isinstance(pred, AgentInZone) and pred.zone_id not in zones:
            raise ConfigError(f"norm {spec.id!r}: references unknown zone {pred.zone_id!r}")

    twin_kv = _apply_kv("twin", sections.get("twin", []), {"fidelity": float, "seed": int})
    inference_kv = _apply_kv(
        "inference",
        sections.get("inference", []),
        {"s_min": int, "window": int, "templates": _name_list, "step_thresholds": _int_list},
    )
    if "templates" in inference_kv:
        inference_kv["templates_enabled"] = inference_kv.pop("templates")
    standard = dict(DEFAULT_STANDARD) if "standard" not in sections else {}
    for gid, value in _kv_lines(sections.get("standard", []), "standard"):
        standard[gid] = float(value)
    policy_kv = _apply_kv(
        "policy",
        sections.get("policy", []),
        {"strategy": str, "alpha": float, "gamma": float, "epsilon": float,
         "init_q": float, "planning_horizon": int},
    )
    governance_kv = _apply_kv(
        "governance", sections.get("governance", []),
        {"horizon": int, "candidates": int, "plan_horizon": int},
    )
    progress_kv = _apply_kv("progress", sections.get("progress", []), {"window": int, "epsilon": float})
    run_kv = _apply_kv(
        "run", sections.get("run", []),
        {"max_steps": int, "max_episode_steps": int, "experiment_every": int,
         "l7_every_episodes": int, "l8_every_episodes": int, "allow_goal_self_apply": _bool},
    )
    comp_kv = _apply_kv("compositions", sections.get("compositions", []), {"enable": _name_list})
    curiosity_kv = _apply_kv("curiosity", sections.get("curiosity", []), {"budget_episodes": int})
    injections = _parse_injections(sections.get("injections", []))

    return ScenarioConfig(
        name=name,
        text=text,
        grid=grid,
        norms=norms,
        known_ids=frozenset(known_ids),
        twin=TwinConfig(**twin_kv),
        inference=InferenceConfig(**inference_kv),
        standard_weights=standard,
        policy=PolicyConfig(**policy_kv),
        governance=GovernanceConfig(**governance_kv),
        progress=ProgressConfig(**progress_kv),
        run=RunConfig(**run_kv),
        compositions=comp_kv.get("enable", ()),
        curiosity=CuriosityConfig(**curiosity_kv),
        injections=injections,
        sign_goals=sign_goals,
    )


def _grid_rows(lines: list[str], base_dir: Optional[Path]) -> list[str]:
    if len(lines) == 1 and "=" in lines[0]:
        key, _, value = lines[0].partition("=")
        if key.strip() != "file":
            raise ConfigError(f"[grid]: unknown key {key.strip()!r}")
        path = Path(value.strip())
        if not path.is_absolute():
            path = (base_dir or Path.cwd()) / path
        if not path.exists():
            raise ConfigError(f"[grid]: row file not found: {path}")
        rows = [ln.rstrip() for ln in path.read_text().splitlines() if ln.strip()]
    else:
        rows = [ln.strip() for ln in lines]
    if not rows:
        raise ConfigError("[grid]: no rows")
    return rows


def _scan_rows(rows: list[str]):
    width = len(rows[0])
    height = len(rows)
    if any(len(r) != width for r in rows):
        raise ConfigError("[grid]: rows have unequal widths")
    glyph_at: dict[Coord, str] = {}
    agent_start: Optional[Coord] = None
    npc_glyph_pos: dict[str, Coord] = {}
    for row_i, row in enumerate(rows):
        y = height - 1 - row_i  # top row is highest y
        for x, glyph in enumerate(row):
            pos = (x, y)
            if glyph == "A":
                if agent_start is not None:
                    raise ConfigError("[grid]: multiple agent start cells")
                agent_start = pos
            elif glyph.isdigit():
                if glyph in npc_glyph_pos:
                    raise ConfigError(f"[grid]: duplicate NPC glyph {glyph!r}")
                npc_glyph_pos[glyph] = pos
            elif glyph in GLYPHS:
                if glyph != ".":
                    glyph_at[pos] = glyph
            else:
                raise ConfigError(f"[grid]: unknown glyph {glyph!r} at {pos}")
    if agent_start is None:
        raise ConfigError("[grid]: missing agent start 'A'")
    return glyph_at, agent_start, npc_glyph_pos, width, height


def _value_map(lines: list[str], section: str) -> dict:
    out: dict = {}
    for key, value in _kv_lines(lines, section):
        if key == "default":
            out["default"] = float(value)
        else:
            coords = _parse_coords(key, f"[{section}]")
            if len(coords) != 1:
                raise ConfigError(f"[{section}]: one coordinate per entry, got {key!r}")
            out[coords[0]] = float(value)
    return out


def _parse_signs(lines: list[str], norms: list[NormSpec]):
    sign_defs: dict[Coord, tuple[str, int]] = {}
    sign_goals: dict[Coord, SignGoal] = {}
    norm_ids = {n.id for n in norms}
    for key, value in _kv_lines(lines, "signs"):
        coords = _parse_coords(key, "[signs]")
        if len(coords) != 1:
            raise ConfigError(f"[signs]: one coordinate per entry, got {key!r}")
        pos = coords[0]
        opts = dict(part.partition("=")[::2] for part in value.split())
        unknown = set(opts) - {"norm", "radius", "goal", "weight"}
        if unknown:
            raise ConfigError(f"[signs] {pos}: unknown options {sorted(unknown)}")
        if "norm" not in opts:
            raise ConfigError(f"[signs] {pos}: missing norm=")
        norm_id = opts["norm"]
        if norm_id not in norm_ids:
            raise ConfigError(f"[signs] {pos}: unknown norm {norm_id!r}")
        radius = int(opts.get("radius", "1"))
        if radius < 0:
            raise ConfigError(f"[signs] {pos}: radius must be >= 0")
        sign_defs[pos] = (norm_id, radius)
        if "goal" in opts:
            sign_goals[pos] = SignGoal(opts["goal"], float(opts.get("weight", "1")))
    return sign_defs, sign_goals


def _parse_npcs(lines: list[str], npc_glyph_pos: dict[str, Coord]) -> dict[str, NpcScript]:
    scripts: dict[str, NpcScript] = {}
    for nid, value in _kv_lines(lines, "npcs"):
        if nid in scripts:
            raise ConfigError(f"[npcs]: duplicate npc {nid!r}")
        tokens = value.split()
        if not tokens or tokens[0] != "waypoints":
            raise ConfigError(f"[npcs] {nid}: expected 'waypoints (x,y) ...'")
        loop = True
        rest = " ".join(tokens[1:])
        m = re.search(r"loop=(\w+)", rest)
        if m:
            loop = _bool(m.group(1))
            rest = rest[: m.start()] + rest[m.end():]
        waypoints = _parse_coords(rest, f"npc {nid}")
        path = expand_waypoints(waypoints, nid)
        scripts[nid] = NpcScript(nid, path, loop)
    for nid, script in scripts.items():
        if nid not in npc_glyph_pos:
            raise ConfigError(f"[npcs] {nid}: no matching digit glyph in grid")
        if script.path[0] != npc_glyph_pos[nid]:
            raise ConfigError(
                f"[npcs] {nid}: first waypoint {script.path[0]} != grid start {npc_glyph_pos[nid]}"
            )
    for glyph in npc_glyph_pos:
        if glyph not in scripts:
            raise ConfigError(f"[grid]: NPC glyph {glyph!r} has no [npcs] entry")
    return scripts


def _parse_injections(lines: list[str]) -> list[Injection]:
    out: list[Injection] = []
    for line in lines:
        step_s, sep, rest = line.partition("=")
        if not sep:
            raise ConfigError(f"[injections]: expected 'STEP = ...', got {line!r}")
        at_step = int(step_s.strip())
        rest = rest.strip()
        if rest.startswith("norm "):
            body = rest[len("norm "):]
            nid, sep2, dsl = body.partition("=")
            if not sep2:
                raise ConfigError(f"[injections]: norm entry needs 'norm ID = <dsl>'")
            spec, _known = parse_norm(nid.strip(), dsl)
            out.append(Injection(at_step=at_step, kind="norm", norm=spec))
        elif rest.startswith("goal "):
            parts = rest.split()
            if len(parts) != 3:
                raise ConfigError(f"[injections]: goal entry needs 'goal ID WEIGHT'")
            out.append(Injection(at_step=at_step, kind="goal", goal_id=parts[1], weight=float(parts[2])))
        else:
            raise ConfigError(f"[injections]: unknown kind in {rest!r}")
    out.sort(key=lambda inj: inj.at_step)
    return out


def load_scenario(ref: str) -> ScenarioConfig:
    """Resolve a bundled scenario name or a filesystem path."""
    path = Path(ref)
    if path.exists() and path.is_file():
        return parse_scenario(path.read_text(), name=path.stem, base_dir=path.parent)
    if ref in BUNDLED:
        text = resources.files("reflectsim.scenarios").joinpath(BUNDLED[ref]).read_text()
        return parse_scenario(text, name=ref)
    raise ConfigError(f"scenario {ref!r}: not a file and not a bundled name {sorted(BUNDLED)}")
