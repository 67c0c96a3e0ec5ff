import json

import pytest

from reflectsim.errors import DuplicateNormId, ModelConflict, OutOfOrder
from reflectsim.models import (
    Observation,
    ObservationLog,
    OtherAgentModel,
    ReflectiveModelStore,
    TransitionModel,
)
from reflectsim.world import Action, EpisodeEnded

from conftest import zone_norm


def obs(step, key="a", action=Action.EAST, next_key="b", events=()):
    return Observation(step, key, action, next_key, tuple(events))


def test_record_appends():
    log = ObservationLog()
    log.record(obs(0))
    assert len(log) == 1


def test_record_out_of_order():
    log = ObservationLog()
    log.record(obs(3))
    with pytest.raises(OutOfOrder):
        log.record(obs(5))


def test_record_gap_allowed_after_episode_end():
    log = ObservationLog()
    log.record(obs(3, events=(EpisodeEnded("exit", 0.0),)))
    log.record(obs(7))
    assert len(log) == 2


def test_ring_capacity_evicts_oldest():
    log = ObservationLog(capacity=100)
    for i in range(101):
        log.record(obs(i))
    assert len(log) == 100
    assert log.entries[0].step == 1


def test_transition_model_conflict():
    m = TransitionModel()
    m.insert("a", Action.EAST, "b")
    m.insert("a", Action.EAST, "b")
    assert m.visit_count[("a", Action.EAST)] == 2
    with pytest.raises(ModelConflict):
        m.insert("a", Action.EAST, "c")
    m.replace("a", Action.EAST, "c")
    assert m.predict("a", Action.EAST) == "c"


def test_other_agent_model_predictions_only_for_observed():
    m = OtherAgentModel()
    m.insert("n", (3, 3), (3, 4))
    assert m.predict("n", (3, 3)) == (3, 4)
    assert m.predict("n", (9, 9)) is None
    with pytest.raises(ModelConflict):
        m.insert("n", (3, 3), (4, 3))


def test_snapshot_is_immutable_view():
    store = ReflectiveModelStore()
    store.transition.insert("a", Action.EAST, "b")
    store.bump()
    snap = store.snapshot_models()
    store.transition.insert("a", Action.WEST, "z")
    store.norm_model.add(zone_norm("P1", "Z"))
    store.bump()
    assert snap.transition.predict("a", Action.WEST) is None
    assert "P1" not in snap.norm_model.norms


def test_snapshots_without_writes_are_equal():
    store = ReflectiveModelStore()
    store.transition.insert("a", Action.EAST, "b")
    a = store.snapshot_models()
    b = store.snapshot_models()
    assert a.version == b.version
    assert a.transition.table == b.transition.table


def test_version_strictly_increases():
    store = ReflectiveModelStore()
    v0 = store.version
    store.record(obs(1))
    v1 = store.version
    store.bump()
    v2 = store.version
    assert v0 < v1 < v2


def test_goal_store_revision_history():
    store = ReflectiveModelStore()
    store.goals.upsert("task_reward", 1.0, "design", step=0)
    store.goals.upsert("task_reward", 2.0, "design", step=10)
    assert store.goals.weights()["task_reward"] == 2.0
    assert len(store.goals.revisions) == 2
    assert store.goals.revisions[1][:4] == (10, "task_reward", 1.0, 2.0)


def test_norm_model_duplicate_id():
    store = ReflectiveModelStore()
    store.norm_model.add(zone_norm("P1", "Z"))
    with pytest.raises(DuplicateNormId):
        store.norm_model.add(zone_norm("P1", "Z"))


def test_dump_is_canonical_and_loadable_json(tmp_path):
    store = ReflectiveModelStore()
    store.transition.insert("b", Action.EAST, "c")
    store.transition.insert("a", Action.WAIT, "a")
    store.other.insert("n", (1, 1), (1, 2))
    store.goals.upsert("task_reward", 1.0, "design", 0)
    store.norm_model.add(zone_norm("P1", "Z"))
    first = store.dump_json()
    second = store.dump_json()
    assert first == second
    payload = json.loads(first)
    assert payload["transition"][0] == ["a", ".", "a"]  # sorted by key then action
    path = tmp_path / "models.json"
    store.dump(path)
    assert json.loads(path.read_text()) == payload
