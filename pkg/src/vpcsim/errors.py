"""Exception hierarchy shared by all vpcsim modules."""


class VpcError(Exception):
    """Base class for every error raised by vpcsim."""


class FeederError(VpcError, ValueError):
    """Invalid feeder topology or data."""


class UnknownNode(FeederError, KeyError):
    """A node id does not exist in the feeder."""

    def __init__(self, node):
        self.node = node
        super().__init__(f"unknown node {node!r}")

    def __str__(self):
        return self.args[0]


class SlackNodeNotControllable(VpcError):
    pass


class ZeroImpedanceEstimate(VpcError, ZeroDivisionError):
    pass


class ComputationError(VpcError):
    """Numerical failure: the requested operating point cannot be reached."""


class Infeasible(ComputationError):
    """No adjustment along the APF ray reaches the magnitude target."""


class NonConvergent(ComputationError):
    pass


class CalibrationFailed(ComputationError):
    pass


class InvalidRow(VpcError, ValueError):
    pass


class DegenerateImpedance(VpcError, ValueError):
    pass


class ConfigError(VpcError, ValueError):
    """Scenario configuration failed validation."""
