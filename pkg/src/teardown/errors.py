"""Exception hierarchy shared across the planner."""


class TeardownError(Exception):
    """Base class for all planner errors."""


class InvalidDepthError(TeardownError, ValueError):
    pass


class NoDepthError(TeardownError, ValueError):
    pass


class RuleCycleError(TeardownError):
    """Category rules produced a directed cycle."""


class CycleError(TeardownError):
    pass


class NodeNotFoundError(TeardownError, KeyError):
    pass


class UnsupportedCategoryError(TeardownError):
    pass


class UnassignableError(TeardownError):
    """An action needs a capability that no arm has."""


class CalibrationError(TeardownError):
    pass


class ScenarioError(TeardownError):
    """The scenario cannot be executed (e.g. deadlock with no faults)."""


class ValidationError(TeardownError):
    """Scenario file failed validation; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")
