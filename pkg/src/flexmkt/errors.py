"""Exception hierarchy shared across the package."""


class FlexmktError(Exception):
    """Base class for all package-specific errors."""


class TopologyError(FlexmktError):
    """Network structure is unusable (disconnected, self-loop, bad root)."""


class NumericalError(FlexmktError):
    """A linear-algebra step failed (singular pivot, unstable basis)."""


class ContractError(FlexmktError):
    """Caller violated an operation precondition (shapes, ranges)."""


class ParseError(FlexmktError):
    """Input text does not match the documented schema."""


class ValidationError(FlexmktError):
    """Parsed data violates a case invariant."""


class GenerationError(FlexmktError):
    """A case recipe cannot be satisfied."""


class ModelError(FlexmktError):
    """A mathematical program could not be assembled as specified."""


class OracleError(FlexmktError):
    """The brute-force oracle refused an instance (too large, bad step)."""
