"""Exception types shared across the simulator.

Errors split into two families: configuration problems (scenario files,
tier/loop wiring) that abort a run before it starts, and contract
violations raised by runtime components. The CLI maps ConfigError to
exit code 2 and everything else unexpected to exit code 1.
"""


class ReflectsimError(Exception):
    """Base class for all package errors."""


class ConfigError(ReflectsimError):
    """Invalid scenario file, tier, or loop/composition wiring."""


class InvalidState(ReflectsimError):
    """A WorldState violates grid invariants; signals a harness bug."""


class OutOfOrder(ReflectsimError):
    """Observation step numbering broke monotonicity within an episode."""


class ModelConflict(ReflectsimError):
    """A deterministic model received two different successors for one key."""


class UnknownGoalId(ReflectsimError):
    """Percept events reference a goal the performance standard does not weight."""


class DuplicateNormId(ReflectsimError):
    """A norm with this id already exists in the store."""


class UnknownGoalSchema(ReflectsimError):
    """A design injection payload did not match any known goal/norm shape."""


class EmptyPlan(ReflectsimError):
    """Rollout requested for an empty action plan."""


class EmptyModel(ReflectsimError):
    """Re-representation requested for a model with no entries."""


class InsufficientHistory(ReflectsimError):
    """Progress assessment needs more completed episodes than are available."""


class UnknownStrategy(ReflectsimError):
    """Strategy switch target is not registered."""


class MembersDisabled(ReflectsimError):
    """A loop composition references loops outside the active tier."""


class SchemaMismatch(ReflectsimError):
    """Trace file schema version is not supported by this build."""
