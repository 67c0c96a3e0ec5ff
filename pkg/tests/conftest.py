import pytest

from reflectsim.norms import NormKind, NormSource, NormSpec, AgentInZone
from reflectsim.world import Cell, CellKind, GridSpec, NpcScript, World


def open_grid(width: int, height: int, start=(0, 0), cells=None, zones=None, npcs=None) -> GridSpec:
    return GridSpec(
        width=width,
        height=height,
        cells=cells or {},
        zones=zones or {},
        npc_scripts=npcs or {},
        agent_start=start,
    )


def zone_norm(norm_id: str, zone_id: str, severity: float = 5.0, source=NormSource.DESIGN) -> NormSpec:
    return NormSpec(norm_id, NormKind.PROHIBITION, AgentInZone(zone_id), severity, source)


@pytest.fixture
def empty_world():
    return World(open_grid(5, 5), [])
