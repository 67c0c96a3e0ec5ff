"""Command-line front door: run, compare, replay, validate, inject.

Exit codes: 0 success, 1 runtime fault or replay divergence, 2
configuration errors (bad scenario, unknown tier, schema mismatch).
The only environment variable consulted is REFLECTSIM_OUT, the default
output directory for traces and CSV files.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from .engine import Engine
from .errors import ConfigError, ReflectsimError, SchemaMismatch
from .loops import TRACE_SCHEMA_VERSION
from .scenario import load_scenario, parse_scenario


def _out_dir() -> Path:
    return Path(os.environ.get("REFLECTSIM_OUT", "."))


def _parse_int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip() != ""]


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    if not 0 <= args.tier <= 4:
        raise ConfigError(f"tier must be 0..4, got {args.tier}")
    steps = args.steps if args.steps is not None else scenario.run.max_steps
    trace_path = args.trace or str(_out_dir() / f"{scenario.name}-t{args.tier}-s{args.seed}.jsonl")
    engine = Engine(scenario, args.tier, args.seed, trace_path=trace_path, keep_trace=False)
    result = engine.run(steps)
    if args.models_out:
        engine.store.dump(args.models_out)
    if args.policy_out:
        from .agent import save_checkpoint

        save_checkpoint(engine.policy, args.policy_out)
    m = result.metrics
    print(f"run {scenario.name} tier={args.tier} seed={args.seed} steps={steps}")
    print(
        f"  violations={m.violations} blocks={m.blocks} compromises={m.compromises} "
        f"harms={m.harm_events} reward={m.total_reward:g} episodes={m.episodes_completed}"
    )
    print(f"  trace: {trace_path}")
    return 0


def cmd_compare(args) -> int:
    tiers = _parse_int_list(args.tiers)
    seeds = _parse_int_list(args.seeds)
    if len(tiers) < 2:
        raise ConfigError("compare needs at least 2 tiers")
    if not seeds:
        raise ConfigError("compare needs at least 1 seed")
    scenario = load_scenario(args.scenario)
    steps = args.steps if args.steps is not None else scenario.run.max_steps
    rows = []
    for tier in tiers:
        if not 0 <= tier <= 4:
            raise ConfigError(f"tier must be 0..4, got {tier}")
        for seed in seeds:
            engine = Engine(scenario, tier, seed, collect_trace=False)
            result = engine.run(steps)
            m = result.metrics
            rows.append({
                "scenario": scenario.name, "tier": tier, "seed": seed,
                "violations": m.violations, "reward": m.total_reward,
                "blocks": m.blocks, "compromises": m.compromises,
                "harms": m.harm_events,
            })
    out_csv = args.out or str(_out_dir() / f"{scenario.name}-compare.csv")
    with open(out_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)

    print(f"{'tier':>4} {'mean_violations':>16} {'mean_reward':>12} {'mean_interventions':>19}")
    for tier in tiers:
        sub = [r for r in rows if r["tier"] == tier]
        n = len(sub)
        mv = sum(r["violations"] for r in sub) / n
        mr = sum(r["reward"] for r in sub) / n
        mi = sum(r["blocks"] + r["compromises"] for r in sub) / n
        print(f"{tier:>4} {mv:>16.2f} {mr:>12.2f} {mi:>19.2f}")
    print(f"plot data: {out_csv} ({len(rows)} rows)")
    return 0


def replay_trace(path: str) -> tuple[bool, str]:
    """Re-execute a trace from its header and diff byte-wise.

    Returns (ok, message); message names the first diverging seq if any.
    """
    with open(path) as fh:
        recorded = [line.rstrip("\n") for line in fh if line.strip()]
    if not recorded:
        raise SchemaMismatch("empty trace file")
    try:
        header = json.loads(recorded[0])
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"unreadable header: {exc}") from None
    payload = header.get("payload", {})
    if header.get("kind") != "header" or payload.get("schema") != TRACE_SCHEMA_VERSION:
        raise SchemaMismatch(f"unsupported trace schema {payload.get('schema')!r}")

    scenario = parse_scenario(payload["scenario_text"], name=payload["scenario_name"])
    engine = Engine(scenario, payload["tier"], payload["seed"], keep_trace=True)
    result = engine.run(payload["max_steps"])
    fresh = result.trace_lines or []
    for i, (a, b) in enumerate(zip(recorded, fresh)):
        if a != b:
            return False, f"divergence at seq {i}"
    if len(recorded) != len(fresh):
        return False, f"divergence at seq {min(len(recorded), len(fresh))} (length mismatch)"
    return True, "OK"


def cmd_replay(args) -> int:
    ok, message = replay_trace(args.trace)
    print(f"replay {args.trace}: {message}")
    return 0 if ok else 1


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    grid = scenario.grid
    print(f"{scenario.name}: OK ({grid.width}x{grid.height}, "
          f"{len(scenario.norms)} norms, {len(grid.npc_scripts)} npcs)")
    return 0


def cmd_inject(args) -> int:
    path = Path(args.scenario)
    if not path.is_file():
        raise ConfigError(f"inject needs a scenario file path, got {args.scenario!r}")
    if bool(args.norm) == bool(args.goal):
        raise ConfigError("inject needs exactly one of --norm or --goal")
    entry = f"{args.at} = norm {args.norm}" if args.norm else f"{args.at} = goal {args.goal}"
    text = path.read_text()
    if "[injections]" in text:
        text = text.replace("[injections]", f"[injections]\n{entry}", 1)
    else:
        text = text.rstrip("\n") + f"\n\n[injections]\n{entry}\n"
    parse_scenario(text, name=path.stem, base_dir=path.parent)  # validate before writing
    out = Path(args.out) if args.out else path
    out.write_text(text)
    print(f"scheduled at step {args.at}: {entry.split('= ', 1)[1]} -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reflectsim", description="Reflective gridworld agent simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one seeded scenario at one tier")
    p.add_argument("--scenario", required=True)
    p.add_argument("--tier", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--trace", default=None)
    p.add_argument("--models-out", default=None, help="dump reflective models after the run")
    p.add_argument("--policy-out", default=None, help="write a policy checkpoint after the run")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run a tier/seed grid and tabulate")
    p.add_argument("--scenario", required=True)
    p.add_argument("--tiers", required=True, help="comma list, e.g. 0,1,3")
    p.add_argument("--seeds", required=True, help="comma list, e.g. 0,1,2")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out", default=None, help="CSV output path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("replay", help="re-execute a trace and verify byte identity")
    p.add_argument("--trace", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("validate", help="parse and validate a scenario file")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("inject", help="schedule a design-goal injection into a scenario file")
    p.add_argument("--scenario", required=True)
    p.add_argument("--at", type=int, required=True)
    p.add_argument("--norm", default=None, help='e.g. "P9 = prohibition AgentInZone(Z2) severity=4"')
    p.add_argument("--goal", default=None, help='e.g. "task_reward 2.0"')
    p.add_argument("--out", default=None, help="write the modified scenario here (default: in place)")
    p.set_defaults(func=cmd_inject)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SchemaMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ReflectsimError as exc:
        print(f"runtime fault: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
