import pytest

from conftest import open_grid, zone_norm
from reflectsim.agent import PerformanceStandard, QTablePolicy
from reflectsim.consequence import ConsequenceEngine
from reflectsim.errors import EmptyModel, InsufficientHistory, UnknownStrategy
from reflectsim.governance import (
    GovernorContext,
    TraceStats,
    assess_progress,
    deliberate,
    introspect_learning,
    re_represent,
    reconcile,
    switch_strategy,
    vet,
    what_if,
)
from reflectsim.models import ReflectiveModelStore, TransitionModel
from reflectsim.norms import NormKind, NormSource, NormSpec, PreventOtherEntering
from reflectsim.scenario import GovernanceConfig, load_scenario
from reflectsim.world import ACTIONS, Action, Cell, CellKind, TwinConfig, World, parse_state_key, state_key


def setup(grid, ground_truth=(), known=(), horizon=1, tier=1, plan_horizon=4, candidates=4):
    world = World(grid, list(ground_truth))
    store = ReflectiveModelStore()
    for spec in known:
        store.norm_model.add(spec)
    ce = ConsequenceEngine(world, TwinConfig())
    standard = PerformanceStandard({
        "task_reward": 1.0, "sanction_penalty": 10.0, "harm_to_other": 20.0,
        "hazard_penalty": 1.0, "intervention": 1.0,
    })
    policy = QTablePolicy(alpha=0.5, gamma=0.9, epsilon=0.0, seed=0)
    ctx = GovernorContext(
        ce=ce, standard=standard,
        cfg=GovernanceConfig(horizon=horizon, candidates=candidates, plan_horizon=plan_horizon),
        tier=tier, policy=policy, proposal_counts={},
    )
    return world, store, ce, ctx


def test_what_if_forbidden_zone_costs_severity():
    grid = open_grid(5, 5, start=(2, 2), zones={"Z1": frozenset({(3, 2)})})
    norm = zone_norm("P1", "Z1", severity=5.0)
    world, store, ce, ctx = setup(grid, [norm], [norm])
    _, cost = what_if(world.initial_state(), Action.EAST, store.snapshot_models(), 1, ce)
    assert cost == 5.0


def test_what_if_wait_in_empty_area_is_free():
    world, store, ce, ctx = setup(open_grid(5, 5, start=(2, 2)))
    _, cost = what_if(world.initial_state(), Action.WAIT, store.snapshot_models(), 3, ce)
    assert cost == 0.0


def corridor_setup(tier):
    scn = load_scenario("corridor-rescue")
    world = World(scn.grid, scn.norms)
    store = ReflectiveModelStore()
    for nid in scn.known_ids:
        store.norm_model.add(scn.norm_by_id(nid))
    ce = ConsequenceEngine(world, scn.twin)
    standard = PerformanceStandard(dict(scn.standard_weights))
    policy = QTablePolicy(alpha=0.5, gamma=0.9, epsilon=0.0, seed=0)
    ctx = GovernorContext(ce=ce, standard=standard, cfg=scn.governance, tier=tier,
                          policy=policy, proposal_counts={})
    return scn, world, store, ce, ctx


def test_what_if_flags_obligation_breach():
    scn, world, store, ce, ctx = corridor_setup(tier=3)
    s = world.initial_state()
    ro, cost = what_if(s, Action.WAIT, store.snapshot_models(), 12, ce)
    # Independent derivation: fold the real step function over all-Wait and
    # find the step at which the scripted NPC reaches the hazard.
    cur, harm_step = s, None
    for i in range(12):
        cur, percept = world.step(cur, Action.WAIT)
        if any(type(e).__name__ == "HarmEvent" for e in percept.events):
            harm_step = i + 1
            break
    assert harm_step is not None
    assert [(b.norm_id, b.step_index) for b in ro.obligation_breaches] == [("O1", harm_step)]
    assert cost == scn.norm_by_id("O1").severity


def test_vet_blocks_with_clean_suggestion():
    grid = open_grid(5, 5, start=(2, 2), zones={"Z1": frozenset({(3, 2)})})
    norm = zone_norm("P1", "Z1", severity=5.0)
    world, store, ce, ctx = setup(grid, [norm], [norm])
    verdict = vet(world.initial_state(), Action.EAST, store.snapshot_models(), ctx)
    assert verdict.kind == "block"
    assert ("P1", 1) in verdict.violations
    assert verdict.suggestion is Action.NORTH  # best zero-cost candidate by action order


def test_vet_allows_clean_action():
    world, store, ce, ctx = setup(open_grid(5, 5, start=(2, 2)))
    verdict = vet(world.initial_state(), Action.EAST, store.snapshot_models(), ctx)
    assert verdict.kind == "allow"


def test_vet_compromise_picks_minimal_cost():
    # Standing inside a mildly forbidden zone surrounded by a worse one:
    # waiting costs 1, every move costs 2, so the verdict is a compromise
    # on Wait with residual cost 1.
    grid = open_grid(
        5, 5, start=(2, 2),
        zones={
            "HERE": frozenset({(2, 2)}),
            "RING": frozenset({(1, 2), (3, 2), (2, 1), (2, 3)}),
        },
    )
    norms = [zone_norm("PH", "HERE", severity=1.0), zone_norm("PR", "RING", severity=2.0)]
    world, store, ce, ctx = setup(grid, norms, norms)
    s = world.initial_state()
    verdict = vet(s, Action.EAST, store.snapshot_models(), ctx)
    assert verdict.kind == "compromise"
    assert verdict.chosen is Action.WAIT
    assert verdict.residual_cost == 1.0
    # Brute-force check that Wait really is the arg-min over all candidates.
    costs = {}
    for a in ACTIONS:
        _, costs[a] = what_if(s, a, store.snapshot_models(), 1, ce)
    assert min(costs.values()) == costs[Action.WAIT] == 1.0
    assert all(costs[a] > 1.0 for a in ACTIONS if a is not Action.WAIT)


def test_vet_tier3_uses_plans_for_interception():
    scn, world, store, ce, ctx = corridor_setup(tier=3)
    s = world.initial_state()
    snap = store.snapshot_models()
    verdict = vet(s, Action.NORTH, snap, ctx)
    assert verdict.kind == "block"
    assert any(v[0] == "O1" for v in verdict.violations)
    # The suggestion opens a harm-free plan: the top-ranked deliberation
    # candidate has zero cost and starts with the suggested action.
    ranked = deliberate(s, snap, ctx.cfg.candidates, ctx.cfg.plan_horizon, ctx)
    assert ranked[0].norm_cost == 0.0
    assert ranked[0].plan[0] is verdict.suggestion
    assert ranked[0].rollout.harm_count == 0


def test_vet_tiers_below_3_cannot_intercept():
    scn, world, store, ce, ctx = corridor_setup(tier=1)
    verdict = vet(world.initial_state(), Action.NORTH, store.snapshot_models(), ctx)
    # No single action prevents the harm, so governance can only compromise.
    assert verdict.kind == "compromise"


def test_deliberate_contains_disengage_plan():
    world, store, ce, ctx = setup(open_grid(5, 5, start=(2, 2)), tier=3)
    ranked = deliberate(world.initial_state(), store.snapshot_models(), 3, 4, ctx)
    assert any(h.plan == (Action.WAIT,) * 4 for h in ranked)


def test_deliberate_dedups_and_keeps_k():
    world, store, ce, ctx = setup(open_grid(5, 5, start=(2, 2)), tier=3)
    ranked = deliberate(world.initial_state(), store.snapshot_models(), 4, 3, ctx)
    plans = [h.plan for h in ranked]
    assert len(plans) == len(set(plans))
    assert len(plans) >= 4


def test_deliberate_top_matches_brute_force():
    grid = open_grid(
        4, 4, start=(0, 0),
        cells={(2, 0): Cell(CellKind.REWARD, value=2.0)},
    )
    world, store, ce, ctx = setup(grid, tier=3)
    snap = store.snapshot_models()
    s = world.initial_state()
    ranked = deliberate(s, snap, 4, 3, ctx)
    # Brute force the same candidate set with raw stepping.
    def score(plan):
        cur, reward = s, 0.0
        for a in plan:
            cur, percept = world.step(cur, a)
            reward += sum(e.value for e in percept.events if hasattr(e, "pos") and hasattr(e, "value"))
        return (0.0, -reward, tuple(ACTIONS.index(a) for a in plan))
    best = min((score(h.plan) for h in ranked))
    assert score(ranked[0].plan) == best


def test_assess_progress_stuck_flat():
    report = assess_progress([5.0] * 10, window=5, eps=0.1)
    assert report.status == "stuck"
    assert report.improvement == 0.0
    assert report.suggestion is not None and report.suggestion.goal_id == "exploration_bonus"


def test_assess_progress_rising_not_stuck():
    report = assess_progress([float(i) for i in range(1, 11)], window=5, eps=0.1)
    assert report.status == "not_stuck"
    assert report.improvement == 5.0
    assert report.suggestion is None


def test_assess_progress_insufficient_history():
    with pytest.raises(InsufficientHistory):
        assess_progress([1.0] * 9, window=5, eps=0.1)


def test_introspect_fresh_coverage_zero():
    policy = QTablePolicy(alpha=0.5, gamma=0.9, epsilon=0.0, seed=0)
    report = introspect_learning(policy, TraceStats({}, reachable_pairs=45, prediction_outcomes=[]))
    assert report.coverage == 0.0
    assert report.accuracy is None
    assert report.strategy == "qtable"
    assert report.hyperparameters["alpha"] == 0.5


def test_introspect_full_coverage_on_3x3():
    # Enumerate reachable pairs of an open 3x3 grid and mark each visited.
    from reflectsim.engine import Engine
    from reflectsim.scenario import parse_scenario

    scn = parse_scenario("[grid]\nA..\n...\n...\n", name="tiny")
    eng = Engine(scn, tier=0, seed=0, collect_trace=False)
    pairs = eng.reachable_pairs()
    assert len(pairs) == 45
    counts = {p: 1 for p in pairs}
    policy = QTablePolicy(alpha=0.5, gamma=0.9, epsilon=0.0, seed=0)
    report = introspect_learning(policy, TraceStats(counts, len(pairs), [True, True, False]))
    assert report.coverage == 1.0
    assert report.accuracy == pytest.approx(2 / 3)


def test_switch_strategy_dispatch():
    registry = {"qtable": lambda: QTablePolicy(alpha=0.5, gamma=0.9, epsilon=0.0, seed=0)}
    policy = switch_strategy("qtable", registry)
    assert policy.strategy_id == "qtable"
    with pytest.raises(UnknownStrategy):
        switch_strategy("nope", registry)


def fully_observed_model(grid):
    world = World(grid, [])
    model = TransitionModel()
    seen = {state_key(world.initial_state())}
    frontier = [world.initial_state()]
    while frontier:
        st = frontier.pop()
        for a in ACTIONS:
            nxt, _ = world.step(st, a)
            model.replace(state_key(st), a, state_key(nxt))
            if state_key(nxt) not in seen:
                seen.add(state_key(nxt))
                frontier.append(parse_state_key(state_key(nxt)))
    return world, model


def test_re_represent_open_3x3_five_rules_no_exceptions():
    grid = open_grid(3, 3)
    world, model = fully_observed_model(grid)
    ruleset = re_represent(model, grid)
    assert len(ruleset.rules) == 5
    assert ruleset.exceptions == {}
    for (key, action), nxt in model.table.items():
        assert ruleset.predict(key, action, grid) == nxt
    assert len(model.table) == 45


def test_reconcile_sticky_cell_anomaly():
    grid = open_grid(3, 3)
    world, model = fully_observed_model(grid)
    ruleset = re_represent(model, grid)
    sticky_key = state_key(parse_state_key("1,1||"))
    model.replace(sticky_key, Action.NORTH, sticky_key)  # inject ((1,1),N) -> (1,1)
    inconsistencies = reconcile(model, ruleset, grid)
    assert len(inconsistencies) == 1
    assert inconsistencies[0].key == (sticky_key, "N")
    assert inconsistencies[0].resolution == "trust_empirical"
    for (key, action), nxt in model.table.items():
        assert ruleset.predict(key, action, grid) == nxt
    assert reconcile(model, ruleset, grid) == []


def test_re_represent_with_walls_and_exceptions():
    grid = open_grid(4, 3, cells={(1, 1): Cell(CellKind.WALL), (3, 0): Cell(CellKind.REWARD, value=1.0)})
    world, model = fully_observed_model(grid)
    ruleset = re_represent(model, grid)
    # Reward pickups change the consumed set, which displacement rules can't
    # express: those entries must appear as exceptions, and predictions must
    # still agree everywhere.
    assert len(ruleset.exceptions) > 0
    for (key, action), nxt in model.table.items():
        assert ruleset.predict(key, action, grid) == nxt


def test_re_represent_empty_model():
    with pytest.raises(EmptyModel):
        re_represent(TransitionModel(), open_grid(3, 3))
