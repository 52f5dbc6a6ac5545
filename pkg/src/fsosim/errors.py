"""Exception types shared across the package."""


class SimulationError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(SimulationError):
    """A topology or scenario parameter violates its contract."""


class FeasibilityError(SimulationError):
    """The per-link wavelength count cannot host two lightpaths per rack pair."""


class WavelengthCollisionError(SimulationError):
    """A wavelength slot on a link is already owned by another lightpath."""


class IntensityBudgetError(SimulationError):
    """A reservation would exceed the link's transmitter intensity budget."""


class InfeasibleDemandError(SimulationError):
    """No candidate path can carry a demanded capacity.

    Carries the rack pair, flow class, and bottleneck diagnostics so callers
    can report which demand failed and why.
    """

    def __init__(self, message, *, src=None, dst=None, flow_class=None, diagnostics=None):
        super().__init__(message)
        self.src = src
        self.dst = dst
        self.flow_class = flow_class
        self.diagnostics = dict(diagnostics or {})


class ContractError(SimulationError):
    """An input violates a documented precondition."""


class TraceFormatError(SimulationError):
    """A packet-trace CSV row does not match the expected schema."""

    def __init__(self, message, row_number=None):
        super().__init__(message)
        self.row_number = row_number
