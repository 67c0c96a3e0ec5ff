import pytest

from reflectsim.errors import ConfigError
from reflectsim.norms import AgentInZone, NormKind, PreventOtherEntering
from reflectsim.scenario import BUNDLED, load_scenario, parse_scenario

MINIMAL = """
[grid]
A..
...
"""


def test_minimal_scenario_parses():
    scn = parse_scenario(MINIMAL, name="mini")
    assert scn.grid.width == 3 and scn.grid.height == 2
    assert scn.grid.agent_start == (0, 1)  # top row is the highest y
    assert scn.standard_weights["task_reward"] == 1.0


def test_rows_have_equal_width_required():
    with pytest.raises(ConfigError):
        parse_scenario("[grid]\nA..\n....\n")


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="unknown sections"):
        parse_scenario(MINIMAL + "\n[bogus]\nx = 1\n")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_scenario(MINIMAL + "\n[run]\nmax_stepz = 10\n")


def test_unknown_glyph_rejected():
    with pytest.raises(ConfigError, match="unknown glyph"):
        parse_scenario("[grid]\nA?.\n")


def test_missing_agent_start_rejected():
    with pytest.raises(ConfigError, match="agent start"):
        parse_scenario("[grid]\n...\n")


def test_duplicate_agent_start_rejected():
    with pytest.raises(ConfigError, match="multiple agent start"):
        parse_scenario("[grid]\nAA.\n")


def test_zone_outside_grid_rejected():
    with pytest.raises(ConfigError, match="outside grid"):
        parse_scenario(MINIMAL + "\n[zones]\nZ1 = (9,9)\n")


def test_norm_references_unknown_zone():
    with pytest.raises(ConfigError, match="unknown zone"):
        parse_scenario(MINIMAL + "\n[norms]\nP1 = prohibition AgentInZone(NOPE) severity=1\n")


def test_norm_dsl_parsing():
    scn = parse_scenario(
        MINIMAL
        + "\n[zones]\nZ1 = (1,0)\n"
        + "\n[norms]\nP1 = prohibition AgentInZone(Z1) severity=5 known=false\n"
        + "O1 = obligation PreventOtherEntering(hazard,7) severity=2\n"
    )
    p1 = scn.norm_by_id("P1")
    assert p1.kind is NormKind.PROHIBITION
    assert isinstance(p1.predicate, AgentInZone) and p1.predicate.zone_id == "Z1"
    assert p1.severity == 5.0
    assert "P1" not in scn.known_ids and "O1" in scn.known_ids
    o1 = scn.norm_by_id("O1")
    assert isinstance(o1.predicate, PreventOtherEntering)
    assert o1.predicate.horizon == 7


def test_sign_requires_glyph_and_norm():
    text = (
        "[grid]\nAs.\n...\n"
        "[zones]\nZ1 = (2,1)\n"
        "[norms]\nP1 = prohibition AgentInZone(Z1) severity=1 known=false\n"
        "[signs]\n(1,1) = norm=P1 radius=2\n"
    )
    scn = parse_scenario(text)
    cell = scn.grid.cell((1, 1))
    assert cell.norm_id == "P1" and cell.radius == 2
    with pytest.raises(ConfigError, match="no \\[signs\\] entry"):
        parse_scenario("[grid]\nAs.\n")
    with pytest.raises(ConfigError, match="unknown norm"):
        parse_scenario("[grid]\nAs.\n[signs]\n(1,0) = norm=NOPE radius=1\n")


def test_npc_waypoints_expand_and_validate():
    text = (
        "[grid]\nA.1\n...\n"
        "[npcs]\n1 = waypoints (2,1) (0,1) loop=false\n"
    )
    scn = parse_scenario(text)
    assert scn.grid.npc_scripts["1"].path == ((2, 1), (1, 1), (0, 1))
    with pytest.raises(ConfigError, match="grid start"):
        parse_scenario("[grid]\nA.1\n[npcs]\n1 = waypoints (0,0) (1,0)\n")
    with pytest.raises(ConfigError, match="no matching digit"):
        parse_scenario("[grid]\nA..\n[npcs]\n1 = waypoints (1,0) (2,0)\n")
    with pytest.raises(ConfigError, match="no \\[npcs\\] entry"):
        parse_scenario("[grid]\nA.1\n")


def test_reward_and_hazard_values():
    text = (
        "[grid]\nArh\n"
        "[rewards]\n(1,0) = 2.5\n"
        "[hazards]\ndefault = 4.0\n"
    )
    scn = parse_scenario(text)
    assert scn.grid.cell((1, 0)).value == 2.5
    assert scn.grid.cell((2, 0)).value == 4.0


def test_injections_parse_and_sort():
    text = MINIMAL + (
        "\n[zones]\nZ1 = (1,0)\n"
        "[injections]\n"
        "150 = goal task_reward 2.0\n"
        "100 = norm P3 = prohibition AgentInZone(Z1) severity=4\n"
    )
    scn = parse_scenario(text)
    assert [i.at_step for i in scn.injections] == [100, 150]
    assert scn.injections[0].norm.id == "P3"
    assert scn.injections[1].goal_id == "task_reward"


def test_duplicate_section_rejected():
    with pytest.raises(ConfigError, match="duplicate section"):
        parse_scenario("[grid]\nA.\n[run]\n[run]\n")


def test_grid_file_reference(tmp_path):
    rows = tmp_path / "rows.txt"
    rows.write_text("A..\n...\n")
    scn_file = tmp_path / "scn.scn"
    scn_file.write_text("[grid]\nfile = rows.txt\n")
    scn = load_scenario(str(scn_file))
    assert scn.grid.width == 3 and scn.grid.height == 2


def test_all_bundled_scenarios_load():
    for name in BUNDLED:
        scn = load_scenario(name)
        assert scn.grid.width > 0
        assert scn.name == name


def test_unknown_scenario_ref():
    with pytest.raises(ConfigError, match="not a file and not a bundled name"):
        load_scenario("no-such-scenario")
